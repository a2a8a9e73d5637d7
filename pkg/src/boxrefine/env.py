"""The refinement MDP: 15 discrete actions, additive transitions, shaped reward.

Parameter vectors are ordered ``(x, y, z, h, w, l, theta)`` throughout.
"""
import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .geometry import (BehindCamera, Box3D, axial_to_world, iou_3d, world_to_axial,
                       wrap_angle)
from .render import PARAMETER_AWARE, DegenerateGeometry, EmptyCrop, FacePalette, build_state

N_ACTIONS = 15
HISTORY_LEN = 10
HISTORY_DIM = HISTORY_LEN * N_ACTIONS


class Action(enum.IntEnum):
    NONE = 0
    X_POS = 1
    X_NEG = 2
    Y_POS = 3
    Y_NEG = 4
    Z_POS = 5
    Z_NEG = 6
    H_POS = 7
    H_NEG = 8
    W_POS = 9
    W_NEG = 10
    L_POS = 11
    L_NEG = 12
    THETA_POS = 13
    THETA_NEG = 14

    @property
    def axis(self):
        """Index of the action-frame component this action moves (-1 for NONE)."""
        return (self.value - 1) // 2 if self.value else -1

    @property
    def sign(self):
        return 0 if self.value == 0 else (1 if self.value % 2 else -1)

    @classmethod
    def from_axis(cls, axis, sign):
        return cls(1 + 2 * axis + (0 if sign > 0 else 1))


class EpisodeAlreadyTerminated(RuntimeError):
    pass


class EpisodeAborted(RuntimeError):
    """The estimate no longer yields a valid state (behind camera or empty crop)."""


class MissingGroundTruth(ValueError):
    pass


AXIAL = "axial"
WORLD = "world"


@dataclass(frozen=True)
class EpisodeConfig:
    delta: float = 0.05
    max_steps: int = 20
    success_iou: float = 0.7
    theta_stride: float = 0.05
    action_frame: str = AXIAL
    eval_epsilon: float = 0.05
    min_dim: float = 0.1

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0 < self.success_iou <= 1:
            raise ValueError("success_iou must lie in (0, 1]")
        if self.action_frame not in (AXIAL, WORLD):
            raise ValueError(f"action_frame must be 'axial' or 'world', got {self.action_frame!r}")
        if not 0 <= self.eval_epsilon <= 1:
            raise ValueError("eval_epsilon must lie in [0, 1]")


@dataclass(frozen=True)
class RenderConfig:
    size: int = 64
    mode: str = PARAMETER_AWARE
    enlarge: float = 1.2
    palette: FacePalette = field(default_factory=FacePalette)


@dataclass(frozen=True)
class EpisodeState:
    estimate: Box3D
    ground_truth: Optional[Box3D] = None
    step: int = 0
    history: Tuple[int, ...] = ()
    terminated: bool = False


def strides(box, cfg):
    """Per-component stride in the action frame: (x', y', z', h, w, l, theta)."""
    d = cfg.delta
    return np.array([d * box.w, d * box.h, d * box.l, d * box.h, d * box.w, d * box.l,
                     cfg.theta_stride])


def action_displacement(a, box, cfg):
    """World-parameter delta for ``a``; one action-frame component is nonzero."""
    a = Action(a)
    out = np.zeros(7)
    if a is Action.NONE:
        return out
    k = a.axis
    step = a.sign * strides(box, cfg)[k]
    if k < 3:
        d = [0.0, 0.0, 0.0]
        d[k] = step
        if cfg.action_frame == AXIAL:
            d = axial_to_world(d, box.theta)
        out[:3] = d
    else:
        out[k] = step
    return out


def apply_delta(box, delta, cfg):
    v = box.as_array() + delta
    v[3:6] = np.maximum(v[3:6], cfg.min_dim)
    return Box3D.from_array(v)


def transition(s, a, cfg):
    if s.terminated:
        raise EpisodeAlreadyTerminated("transition called on a terminated episode")
    a = Action(a)
    est = s.estimate if a is Action.NONE else apply_delta(s.estimate, action_displacement(a, s.estimate, cfg), cfg)
    step = s.step + 1
    hist = (s.history + (int(a),))[-HISTORY_LEN:]
    return EpisodeState(est, s.ground_truth, step, hist, a is Action.NONE or step >= cfg.max_steps)


def param_difference(a, b):
    """``a - b`` over the 7 parameters with the angle difference wrapped."""
    d = a.as_array() - b.as_array()
    d[6] = wrap_angle(d[6])
    return d


def reward(prev, nxt, gt, a, terminal, cfg):
    """Shaped step reward, or the +/-3 success bonus on the terminal step."""
    if gt is None:
        raise MissingGroundTruth("reward needs a ground-truth box")
    after = iou_3d(nxt, gt)
    if terminal:
        return 3 if after >= cfg.success_iou else -3
    gain = after - iou_3d(prev, gt)
    if gain > 0:
        return 1
    if gain < 0:
        return -1
    # Single-action steps change one action-frame component; the axial map is
    # orthogonal, so this world-frame dot product equals that component's product.
    return int(np.sign(param_difference(nxt, prev) @ param_difference(gt, prev)))


def history_encoding(history):
    """150-dim one-hot history, most recent action in slot 0."""
    enc = np.zeros(HISTORY_DIM, dtype=np.float32)
    for slot, a in enumerate(reversed(history[-HISTORY_LEN:])):
        enc[slot * N_ACTIONS + int(a)] = 1.0
    return enc


def observe(s, scene, render_cfg=RenderConfig()):
    """``(StateImage, history encoding)`` for the current estimate."""
    try:
        img = build_state(s.estimate, scene.image, scene.camera, render_cfg.mode,
                          render_cfg.size, render_cfg.palette, render_cfg.enlarge)
    except (BehindCamera, EmptyCrop, DegenerateGeometry) as exc:
        raise EpisodeAborted(str(exc)) from exc
    return img, history_encoding(s.history)


def greedy_oracle_policy(s, cfg):
    """Action with the best next IoU against ground truth; NONE unless it strictly improves."""
    gt = s.ground_truth
    if gt is None:
        raise MissingGroundTruth("greedy oracle needs a ground-truth box")
    best, best_iou = Action.NONE, iou_3d(s.estimate, gt)
    for a in list(Action)[1:]:
        v = iou_3d(apply_delta(s.estimate, action_displacement(a, s.estimate, cfg), cfg), gt)
        if v > best_iou:
            best, best_iou = a, v
    return best


def correction_label(box, gt, cfg, threshold=0.5):
    """Action fixing the largest residual measured in strides; NONE if all are under ``threshold``."""
    r = param_difference(gt, box)
    res = np.empty(7)
    if cfg.action_frame == AXIAL:
        res[:3] = world_to_axial(r[:3], box.theta)
    else:
        res[:3] = r[:3]
    res[3:] = r[3:]
    norm = np.abs(res) / strides(box, cfg)
    k = int(np.argmax(norm))
    if norm[k] < threshold:
        return Action.NONE
    return Action.from_axis(k, res[k])


class Episode:
    """Mutable wrapper running one refinement episode against a scene."""

    def __init__(self, scene, initial, cfg, render_cfg=RenderConfig(), ground_truth=None):
        self.scene = scene
        self.cfg = cfg
        self.render_cfg = render_cfg
        self.state = EpisodeState(initial, ground_truth)
        self.aborted = False

    @property
    def done(self):
        return self.state.terminated

    def observe(self):
        return observe(self.state, self.scene, self.render_cfg)

    def step(self, a):
        """Advance one step; returns ``(reward or None, terminal)``."""
        prev = self.state
        nxt = transition(prev, a, self.cfg)
        gt = prev.ground_truth
        r = None if gt is None else reward(prev.estimate, nxt.estimate, gt, a, nxt.terminated, self.cfg)
        self.state = nxt
        return r, nxt.terminated

    def abort(self):
        """Terminate after an invalid state; scored as a failed refinement."""
        self.aborted = True
        self.state = EpisodeState(self.state.estimate, self.state.ground_truth, self.state.step,
                                  self.state.history, True)
        return -3


def trajectory_record(step, action, box, gt=None, r=None):
    rec = {"step": step, "action": int(action) if action is not None else None,
           "params": [round(float(v), 6) for v in box.as_array()]}
    if gt is not None:
        rec["iou"] = round(iou_3d(box, gt), 6)
    if r is not None:
        rec["reward"] = int(r)
    return rec


def write_trajectory(records, fh):
    for rec in records:
        fh.write(json.dumps(rec) + "\n")
