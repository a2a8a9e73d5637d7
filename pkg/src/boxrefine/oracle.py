"""Monte-Carlo IoU estimates used as an independent check on the exact clipper.

Containment is tested in each box's local frame, so nothing here shares code
with polygon clipping.
"""
import numpy as np

from .geometry import corners, iou_3d


def _inside(box, pts):
    c, s = np.cos(box.theta), np.sin(box.theta)
    dx = pts[:, 0] - box.x
    dz = pts[:, 2] - box.z
    # inverse yaw rotation: length along local x, width along local z
    along_l = c * dx - s * dz
    along_w = s * dx + c * dz
    return ((np.abs(along_l) <= 0.5 * box.l) & (np.abs(along_w) <= 0.5 * box.w)
            & (pts[:, 1] <= box.y) & (pts[:, 1] >= box.y - box.h))


def _inside_bev(box, pts):
    c, s = np.cos(box.theta), np.sin(box.theta)
    dx = pts[:, 0] - box.x
    dz = pts[:, 1] - box.z
    return (np.abs(c * dx - s * dz) <= 0.5 * box.l) & (np.abs(s * dx + c * dz) <= 0.5 * box.w)


def mc_iou_3d(a, b, n=1_000_000, rng=None, chunk=250_000):
    """Sample the joint bounding volume uniformly and count hits."""
    rng = np.random.default_rng(rng)
    pts = np.vstack([corners(a), corners(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    both = either = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        p = lo + (hi - lo) * rng.random((m, 3))
        ia, ib = _inside(a, p), _inside(b, p)
        both += int(np.count_nonzero(ia & ib))
        either += int(np.count_nonzero(ia | ib))
        done += m
    return both / either if either else 0.0


def mc_iou_bev(a, b, n=1_000_000, rng=None):
    rng = np.random.default_rng(rng)
    pts = np.vstack([corners(a), corners(b)])[:, [0, 2]]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    p = lo + (hi - lo) * rng.random((n, 2))
    ia, ib = _inside_bev(a, p), _inside_bev(b, p)
    either = np.count_nonzero(ia | ib)
    return float(np.count_nonzero(ia & ib) / either) if either else 0.0


def random_box_pair(rng, overlap=True):
    """A random car-scale box and a perturbed partner that usually overlaps it."""
    from .geometry import Box3D
    h, w, l = rng.uniform(0.5, 3.0, size=3)
    a = Box3D(rng.uniform(-5, 5), rng.uniform(0, 3), rng.uniform(5, 40), h, w, l,
              rng.uniform(-np.pi, np.pi))
    if not overlap:
        return a, Box3D(*rng.uniform(-5, 5, 3), *rng.uniform(0.5, 3, 3), rng.uniform(-np.pi, np.pi))
    dims = np.array([h, w, l]) * rng.uniform(0.6, 1.4, size=3)
    b = Box3D(a.x + rng.normal(0, 0.3 * w), a.y + rng.normal(0, 0.2 * h), a.z + rng.normal(0, 0.3 * l),
              *dims, a.theta + rng.normal(0, 0.6))
    return a, b


def compare_iou(trials=200, samples=1_000_000, seed=0):
    """Return per-trial ``(analytic, monte_carlo)`` pairs over random box pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        a, b = random_box_pair(rng)
        out.append((iou_3d(a, b), mc_iou_3d(a, b, samples, rng)))
    return np.array(out).reshape(-1, 2)
