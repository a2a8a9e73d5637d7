"""Q-network, replay memory, pretraining and the DQN loop, in plain numpy.

The network is an MLP over the flattened 6-channel state: encoder layers
(ReLU), then the 150-dim action history is concatenated before the linear
15-way head. All parameters live in one flat vector so syncing, optimizers,
finite differences and checkpoints operate on a single array.
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .env import (HISTORY_DIM, N_ACTIONS, Action, Episode, EpisodeAborted, greedy_oracle_policy,
                  trajectory_record)
from .geometry import iou_3d

CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class StructureMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    input_size: int = 64
    channels: int = 6
    pool: int = 1
    hidden: tuple = (256, 128)
    history_dim: int = HISTORY_DIM
    n_actions: int = N_ACTIONS
    dtype: str = "float32"

    @property
    def input_dim(self):
        side = self.input_size // self.pool
        return side * side * self.channels


class QNetwork:
    def __init__(self, cfg=NetConfig(), params=None, seed=0):
        self.cfg = cfg
        if cfg.input_size % cfg.pool:
            raise ValueError("input_size must be divisible by pool")
        dims = [cfg.input_dim, *cfg.hidden]
        self.shapes = [(dims[i], dims[i + 1]) for i in range(len(cfg.hidden))]
        self.shapes.append((dims[-1] + cfg.history_dim, cfg.n_actions))
        self.size = sum(a * b + b for a, b in self.shapes)
        if params is None:
            params = self._init(np.random.default_rng(seed))
        params = np.asarray(params, dtype=cfg.dtype)
        if params.shape != (self.size,):
            raise ShapeMismatch(f"expected {self.size} parameters, got {params.shape}")
        self.params = params.copy()
        self._bind()

    def _bind(self):
        self.layers = []
        off = 0
        for a, b in self.shapes:
            W = self.params[off:off + a * b].reshape(a, b)
            off += a * b
            self.layers.append((W, self.params[off:off + b]))
            off += b

    def _init(self, rng):
        chunks = []
        for i, (a, b) in enumerate(self.shapes[:-1]):
            chunks += [rng.standard_normal(a * b) * math.sqrt(2.0 / a), np.zeros(b)]
        a, b = self.shapes[-1]
        feat = a - self.cfg.history_dim
        head = np.zeros((a, b))
        # history rows start at zero so unseen histories do not perturb pretrained Q-values
        head[:feat] = rng.standard_normal((feat, b)) * math.sqrt(1.0 / feat)
        chunks += [head.ravel(), np.zeros(b)]
        return np.concatenate(chunks)

    @property
    def head_offset(self):
        """Index of the first head parameter in the flat vector."""
        a, b = self.shapes[-1]
        return self.size - a * b - b

    def copy(self):
        return QNetwork(self.cfg, self.params)

    def set_params(self, params):
        self.params[:] = params

    def preprocess(self, channels):
        x = np.asarray(channels)
        if x.ndim == 3:
            x = x[None]
        S, C, p = self.cfg.input_size, self.cfg.channels, self.cfg.pool
        if x.shape[1:] != (S, S, C):
            raise ShapeMismatch(f"state shape {x.shape[1:]} does not match ({S}, {S}, {C})")
        x = x.astype(self.cfg.dtype) * (1.0 / 255.0) - 0.5
        if p > 1:
            x = x.reshape(len(x), S // p, p, S // p, p, C).mean(axis=(2, 4))
        return x.reshape(len(x), -1)

    def forward(self, x, hist, keep=False):
        """Q-values for preprocessed inputs ``x`` (B, D) and histories (B, 150)."""
        hist = np.asarray(hist, dtype=self.cfg.dtype).reshape(len(x), -1)
        if hist.shape[1] != self.cfg.history_dim:
            raise ShapeMismatch(f"history has {hist.shape[1]} entries, expected {self.cfg.history_dim}")
        acts = [x]
        h = x
        for W, b in self.layers[:-1]:
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        z = np.concatenate([h, hist], axis=1)
        W, b = self.layers[-1]
        q = z @ W + b
        return (q, (acts, z)) if keep else q

    def backward(self, cache, dq):
        """Flat gradient of ``sum(dq * q)`` with respect to the parameters."""
        acts, z = cache
        grads = []
        W, _ = self.layers[-1]
        grads.append((z.T @ dq, dq.sum(axis=0)))
        dh = (dq @ W.T)[:, :acts[-1].shape[1]]
        for i in range(len(self.layers) - 2, -1, -1):
            dh = dh * (acts[i + 1] > 0)
            W, _ = self.layers[i]
            grads.append((acts[i].T @ dh, dh.sum(axis=0)))
            if i:
                dh = dh @ W.T
        grads.reverse()
        return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])

    def q_values(self, channels, hist):
        return self.forward(self.preprocess(channels), np.atleast_2d(hist))


def q_forward(net, state):
    """15 Q-values for one ``(StateImage or channels, history)`` pair."""
    img, hist = state
    channels = getattr(img, "channels", img)
    return net.q_values(channels, hist)[0]


def select_action(net, state, epsilon, rng):
    """Epsilon-greedy; argmax ties resolve to the lowest index."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    return Action(int(np.argmax(q_forward(net, state))))


@dataclass
class Transition:
    state: tuple            # (channels uint8, history float32)
    action: int
    reward: int
    next_state: Optional[tuple]
    terminal: bool

    def __post_init__(self):
        if self.reward not in (-3, -1, 0, 1, 3):
            raise ValueError(f"reward {self.reward} outside {{-3, -1, 0, 1, 3}}")


class ReplayBuffer:
    def __init__(self, capacity=10_000, seed=0):
        self.capacity = int(capacity)
        self.storage = []
        self.pos = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self.storage)

    def add(self, t):
        if len(self.storage) < self.capacity:
            self.storage.append(t)
        else:
            self.storage[self.pos] = t
        self.pos = (self.pos + 1) % self.capacity

    def sample(self, batch_size):
        idx = self.rng.choice(len(self.storage), size=min(batch_size, len(self.storage)), replace=False)
        return [self.storage[i] for i in idx]


def _check_structure(a, b):
    if a.shapes != b.shapes or a.cfg != b.cfg:
        raise StructureMismatch("networks differ in structure")


def _stack(states, net):
    x = net.preprocess(np.stack([s[0] for s in states]))
    h = np.stack([s[1] for s in states]).astype(net.cfg.dtype)
    return x, h


def td_targets(batch, target_net, gamma):
    r = np.array([t.reward for t in batch], dtype=np.float64)
    live = [i for i, t in enumerate(batch) if not t.terminal]
    if live:
        x, h = _stack([batch[i].next_state for i in live], target_net)
        r[live] += gamma * target_net.forward(x, h).max(axis=1)
    return r


def td_loss(batch, net, target_net, gamma):
    """Mean squared TD error and its gradient; the bootstrap target is held fixed."""
    if not batch:
        raise EmptyDataset("empty batch")
    _check_structure(net, target_net)
    target = td_targets(batch, target_net, gamma)
    x, h = _stack([t.state for t in batch], net)
    q, cache = net.forward(x, h, keep=True)
    idx = np.arange(len(batch))
    acts = np.array([t.action for t in batch])
    err = target - q[idx, acts]
    dq = np.zeros_like(q)
    dq[idx, acts] = -2.0 * err / len(batch)
    return float(np.mean(err ** 2)), net.backward(cache, dq)


def sync_target(net, target_net):
    _check_structure(net, target_net)
    target_net.set_params(net.params)


class SGD:
    """theta <- theta - lr * g"""

    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grad):
        params -= (self.lr * grad).astype(params.dtype)


class Adam:
    """Adam with bias correction: m, v are EMAs of g and g**2."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(params.dtype)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    lr_pretrain: float = 1e-2
    lr_rl: float = 1e-4
    batch_size: int = 64
    buffer_size: int = 10_000
    target_update_every: int = 1000
    rl_iterations: int = 40_000
    epsilon_start: float = 0.5
    epsilon_end: float = 0.05
    pretrain_epochs: int = 15
    pretrain_decay_every: int = 5
    pretrain_decay: float = 0.1
    probe_every: int = 500
    learn_start: int = 64
    rl_trainable: str = "all"   # "all", or "head" to keep the pretrained encoder fixed during RL

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 <= self.epsilon_end <= self.epsilon_start <= 1:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.batch_size < 1 or self.buffer_size < 1 or self.target_update_every < 1:
            raise ValueError("batch_size, buffer_size and target_update_every must be positive")
        if self.rl_trainable not in ("all", "head"):
            raise ValueError(f"rl_trainable must be 'all' or 'head', got {self.rl_trainable!r}")

    @property
    def epsilon_tau(self):
        return max(self.rl_iterations / 5.0, 1.0)


def epsilon_at(t, cfg):
    """Exponential decay from epsilon_start toward epsilon_end, time constant rl_iterations/5."""
    return cfg.epsilon_end + (cfg.epsilon_start - cfg.epsilon_end) * math.exp(-t / cfg.epsilon_tau)


def softmax_xent(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    idx = np.arange(len(labels))
    loss = -np.mean(np.log(p[idx, labels] + 1e-12))
    p[idx, labels] -= 1.0
    return float(loss), p / len(labels)


def pretrain(net, channels, hists, labels, cfg=TrainConfig(), seed=0, log=None):
    """Supervised one-step pretraining: Q-values as logits, cross-entropy, SGD with step decay.

    Returns the mean training loss per epoch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise EmptyDataset("pretraining needs at least one sample")
    if labels.min() < 0 or labels.max() >= N_ACTIONS:
        raise ValueError("labels must lie in 0..14")
    rng = np.random.default_rng(seed)
    opt = SGD(cfg.lr_pretrain)
    history = []
    for epoch in range(cfg.pretrain_epochs):
        opt.lr = cfg.lr_pretrain * cfg.pretrain_decay ** (epoch // cfg.pretrain_decay_every)
        order = rng.permutation(len(labels))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            b = order[i:i + cfg.batch_size]
            q, cache = net.forward(net.preprocess(channels[b]), hists[b], keep=True)
            loss, dq = softmax_xent(q.astype(np.float64), labels[b])
            opt.step(net.params, net.backward(cache, dq.astype(q.dtype)))
            total += loss * len(b)
        history.append(total / len(labels))
        if log is not None:
            log({"phase": "pretrain", "epoch": epoch + 1, "lr": opt.lr, "loss": history[-1]})
    return history


# --- policies and rollouts ---------------------------------------------------

class NetPolicy:
    def __init__(self, net, epsilon=0.0):
        self.net = net
        self.epsilon = epsilon

    def act(self, episodes, observations, rngs):
        """One action per live episode; network calls are batched across episodes."""
        explore = [rng.random() < self.epsilon for rng in rngs]
        q = self.net.q_values(np.stack([o[0].channels for o in observations]),
                              np.stack([o[1] for o in observations]))
        out = []
        for i, rng in enumerate(rngs):
            out.append(Action(int(rng.integers(N_ACTIONS))) if explore[i] else Action(int(np.argmax(q[i]))))
        return out


class OraclePolicy:
    def act(self, episodes, observations, rngs):
        return [greedy_oracle_policy(e.state, e.cfg) for e in episodes]


class RandomPolicy:
    def act(self, episodes, observations, rngs):
        return [Action(int(rng.integers(N_ACTIONS))) for rng in rngs]


@dataclass
class RefineResult:
    box: object
    trajectory: list
    aborted: bool = False


def refine_batch(policy, initials, scene, cfg, render_cfg, rngs, ground_truths=None):
    """Refine several objects of one scene in lockstep; results keep input order.

    An episode whose state cannot be built is flagged and returns its
    initial box unchanged.
    """
    if not hasattr(policy, "act"):
        policy = NetPolicy(policy, 0.0)
    gts = ground_truths or [None] * len(initials)
    eps = [Episode(scene, b, cfg, render_cfg, g) for b, g in zip(initials, gts)]
    trajs = [[trajectory_record(0, None, b, g)] for b, g in zip(initials, gts)]
    live = list(range(len(eps)))
    while live:
        obs, ok = [], []
        for i in live:
            try:
                obs.append(eps[i].observe())
                ok.append(i)
            except EpisodeAborted:
                eps[i].abort()
        if ok:
            actions = policy.act([eps[i] for i in ok], obs, [rngs[i] for i in ok])
            for i, a in zip(ok, actions):
                r, _ = eps[i].step(a)
                trajs[i].append(trajectory_record(eps[i].state.step, a, eps[i].state.estimate, gts[i], r))
        live = [i for i in ok if not eps[i].done]
    return [RefineResult(initials[i] if e.aborted else e.state.estimate, trajs[i], e.aborted)
            for i, e in enumerate(eps)]


def refine(policy, initial, scene, cfg, render_cfg, rng=None, ground_truth=None):
    """Run one episode to termination (see ``refine_batch``)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return refine_batch(policy, [initial], scene, cfg, render_cfg, [rng],
                        None if ground_truth is None else [ground_truth])[0]


def evaluate_probe(policy, probe, cfg, render_cfg, seed=0):
    """Mean initial and final IoU over ``(scene, gt, initial)`` triples, one rng per item."""
    rngs = [np.random.default_rng([seed, i]) for i in range(len(probe))]
    init, final, success = [], [], []
    for (scene, gt, start), rng in zip(probe, rngs):
        res = refine(policy, start, scene, cfg, render_cfg, rng, gt)
        init.append(iou_3d(start, gt))
        final.append(iou_3d(res.box, gt))
        success.append(final[-1] >= cfg.success_iou)
    return {"initial_iou": float(np.mean(init)), "final_iou": float(np.mean(final)),
            "success": float(np.mean(success)), "per_item": list(zip(init, final))}


def train_dqn(net, episode_factory, cfg, episode_cfg, render_cfg, iterations=None, seed=0,
              probe=None, log=None):
    """Epsilon-greedy rollouts into replay memory, Adam on the TD loss, periodic target sync.

    ``episode_factory(rng)`` returns a fresh ``Episode`` with ground truth.
    Returns ``(net, records)``; records carry loss and epsilon per iteration
    plus probe evaluations every ``cfg.probe_every`` iterations.
    """
    n_iter = cfg.rl_iterations if iterations is None else iterations
    rng = np.random.default_rng(seed)
    target = net.copy()
    buf = ReplayBuffer(cfg.buffer_size, seed=rng.integers(2 ** 32))
    opt = Adam(cfg.lr_rl)
    frozen = net.head_offset if cfg.rl_trainable == "head" else 0
    records = []
    ep = obs = None
    syncs = 0
    for it in range(1, n_iter + 1):
        while ep is None or ep.done:
            ep = episode_factory(rng)
            try:
                obs = ep.observe()
            except EpisodeAborted:
                ep = None
        eps = epsilon_at(it - 1, cfg)
        a = select_action(net, obs, eps, rng)
        r, term = ep.step(a)
        nxt = None
        if not term:
            try:
                nxt = ep.observe()
            except EpisodeAborted:
                r, term = ep.abort(), True
        buf.add(Transition((obs[0].channels, obs[1]), int(a), int(r),
                           None if nxt is None else (nxt[0].channels, nxt[1]), term))
        obs = nxt
        loss = None
        if len(buf) >= max(cfg.learn_start, 1):
            loss, grad = td_loss(buf.sample(cfg.batch_size), net, target, cfg.gamma)
            grad[:frozen] = 0.0
            opt.step(net.params, grad)
        if it % cfg.target_update_every == 0:
            sync_target(net, target)
            syncs += 1
        rec = {"iteration": it, "epsilon": eps, "loss": loss, "reward": int(r), "syncs": syncs}
        if probe is not None and it % cfg.probe_every == 0:
            ev = evaluate_probe(NetPolicy(net, 0.0), probe, episode_cfg, render_cfg)
            rec["probe_initial_iou"] = ev["initial_iou"]
            rec["probe_final_iou"] = ev["final_iou"]
            rec["probe_gain"] = ev["final_iou"] - ev["initial_iou"]
        records.append(rec)
        if log is not None:
            log(rec)
    return net, records


# --- checkpoints -------------------------------------------------------------

def config_hash(cfg_dict):
    blob = json.dumps(cfg_dict, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, net, compat):
    """``compat`` holds the settings a checkpoint must agree with at load time."""
    meta = {"version": CHECKPOINT_VERSION, "net": asdict(net.cfg), "compat": compat,
            "hash": config_hash(compat)}
    with open(path, "wb") as fh:
        np.savez(fh, params=net.params, meta=np.array(json.dumps(meta)))


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        params = z["params"]
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    ncfg = meta["net"]
    ncfg["hidden"] = tuple(ncfg["hidden"])
    return QNetwork(NetConfig(**ncfg), params), meta
