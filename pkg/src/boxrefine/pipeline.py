"""End-to-end training and evaluation on synthetic scenes, shared by the CLI and tests."""
import time

import numpy as np

from .dqn import (NetPolicy, QNetwork, RandomPolicy, evaluate_probe, pretrain, refine_batch,
                  train_dqn)
from .env import Episode, correction_label, history_encoding
from .render import build_state
from .scene import JitterSpec, generate_scene, jitter

IOU_BUCKETS = (0.0, 0.2, 0.4, 0.6, 1.0)
IOU_THRESHOLDS = (0.3, 0.5, 0.7, 0.9)


def train_scenes(cfg):
    d = cfg.data
    return [generate_scene(d.train_scene_seed + i, cfg.scenes) for i in range(d.train_scenes)]


def make_probe(cfg, count=None, scene_seed=None, jitter_seed=None, jitter_spec=None):
    """Fixed ``(scene, gt, start)`` triples: first object of consecutive scenes, one jitter each."""
    d = cfg.data
    count = d.probe_episodes if count is None else count
    scene_seed = d.probe_scene_seed if scene_seed is None else scene_seed
    rng = np.random.default_rng(d.probe_jitter_seed if jitter_seed is None else jitter_seed)
    spec = jitter_spec or cfg.jitter
    one = JitterSpec(*spec.sigmas(), samples_per_object=1)
    probe = []
    for i in range(count):
        sc = generate_scene(scene_seed + i, cfg.scenes)
        gt = sc.objects[0]
        probe.append((sc, gt, jitter(gt, one, sc.camera, rng)[0]))
    return probe


def pretrain_set(cfg, scenes, rng):
    """Jittered states of every ground-truth object with their largest-correction labels."""
    r = cfg.render
    xs, labels = [], []
    for sc in scenes:
        for gt in sc.objects:
            for b in jitter(gt, cfg.jitter, sc.camera, rng):
                xs.append(build_state(b, sc.image, sc.camera, r.mode, r.size, r.palette, r.enlarge).channels)
                labels.append(int(correction_label(b, gt, cfg.episode)))
    hist = np.repeat(history_encoding(())[None], len(labels), axis=0)
    return np.stack(xs), hist, np.array(labels)


def episode_factory(cfg, scenes):
    one = JitterSpec(*cfg.jitter.sigmas(), samples_per_object=1)

    def make(rng):
        sc = scenes[rng.integers(len(scenes))]
        gt = sc.objects[rng.integers(len(sc.objects))]
        return Episode(sc, jitter(gt, one, sc.camera, rng)[0], cfg.episode, cfg.render, gt)
    return make


def run_training(cfg, iterations=None, log=None, probe=None):
    """Pretrain (if enabled) then run the DQN loop; returns ``(net, records, summary)``."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    net = QNetwork(cfg.net, seed=cfg.seed)
    scenes = train_scenes(cfg)
    probe = make_probe(cfg) if probe is None else probe
    summary = {"seed": cfg.seed}
    if cfg.pretrain:
        x, h, y = pretrain_set(cfg, scenes, rng)
        summary["pretrain_samples"] = int(len(y))
        summary["pretrain_loss"] = pretrain(net, x, h, y, cfg.train, seed=cfg.seed, log=log)
        del x, h
        summary["pretrain_final_iou"] = evaluate_probe(NetPolicy(net, 0.0), probe, cfg.episode, cfg.render)["final_iou"]
    net, records = train_dqn(net, episode_factory(cfg, scenes), cfg.train, cfg.episode, cfg.render,
                             iterations=iterations, seed=cfg.seed, probe=probe, log=log)
    final = evaluate_probe(NetPolicy(net, 0.0), probe, cfg.episode, cfg.render, seed=cfg.seed)
    base = evaluate_probe(RandomPolicy(), probe, cfg.episode, cfg.render, seed=cfg.seed)
    summary.update({
        "iterations": len(records),
        "probe_episodes": len(probe),
        "initial_iou": final["initial_iou"],
        "final_iou": final["final_iou"],
        "gain": final["final_iou"] - final["initial_iou"],
        "success": final["success"],
        "random_final_iou": base["final_iou"],
        "seconds": time.perf_counter() - t0,
    })
    return net, records, summary


def report(policy, probe, cfg, seed=0):
    """Mean IoU before and after, success rate, per-bucket breakdown and a threshold sweep."""
    ev = evaluate_probe(policy, probe, cfg.episode, cfg.render, seed)
    pairs = np.array(ev["per_item"]).reshape(-1, 2)
    init, final = pairs[:, 0], pairs[:, 1]
    buckets = []
    for lo, hi in zip(IOU_BUCKETS[:-1], IOU_BUCKETS[1:]):
        sel = (init >= lo) & ((init < hi) | (hi == IOU_BUCKETS[-1]))
        buckets.append({"initial_range": [lo, hi], "count": int(sel.sum()),
                        "initial_iou": float(init[sel].mean()) if sel.any() else None,
                        "final_iou": float(final[sel].mean()) if sel.any() else None})
    return {
        "episodes": len(probe),
        "initial_iou": ev["initial_iou"],
        "final_iou": ev["final_iou"],
        "gain": ev["final_iou"] - ev["initial_iou"],
        "success": ev["success"],
        "buckets": buckets,
        "threshold_sweep": {f"{t:.1f}": {"initial": float(np.mean(init >= t)), "final": float(np.mean(final >= t))}
                            for t in IOU_THRESHOLDS},
    }


def refine_scene(policy, scene, initials, cfg, seed=0, ground_truths=None):
    """Refine all ``initials`` of one scene together; per-object rngs keep results order-stable."""
    rngs = [np.random.default_rng([seed, i]) for i in range(len(initials))]
    return refine_batch(policy, initials, scene, cfg.episode, cfg.render, rngs, ground_truths)
