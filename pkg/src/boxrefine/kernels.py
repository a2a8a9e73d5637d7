"""Kernel dispatch: numba when available, numpy when ``BOXREFINE_NO_NUMBA`` is set.

The flag is read once at import time. Both backends expose the same five
functions; ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _np_kernels

_disabled = os.environ.get("BOXREFINE_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

if _disabled:
    _impl = _np_kernels
    BACKEND = "numpy"
else:
    try:
        from . import _nb_kernels as _impl
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _impl = _np_kernels
        BACKEND = "numpy"


def get_backend(name):
    """Return the kernel module for ``"numba"`` or ``"numpy"`` explicitly."""
    if name == "numpy":
        return _np_kernels
    if name == "numba":
        from . import _nb_kernels
        return _nb_kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def polygon_area(poly):
    return float(_impl.polygon_area(np.ascontiguousarray(poly, dtype=np.float64)))


def convex_overlap_area(a, b):
    return float(_impl.convex_overlap_area(np.ascontiguousarray(a, dtype=np.float64),
                                           np.ascontiguousarray(b, dtype=np.float64)))


def clip_convex(subject, clip):
    return _impl.clip_convex(np.ascontiguousarray(subject, dtype=np.float64),
                             np.ascontiguousarray(clip, dtype=np.float64))


def _as_channels(canvas, color):
    # single-channel canvases are filled through a (H, W, 1) view
    if canvas.ndim == 2:
        canvas = canvas[:, :, None]
    return canvas, np.asarray(color, dtype=canvas.dtype).reshape(-1)


def fill_convex(canvas, poly, color):
    canvas, color = _as_channels(canvas, color)
    _impl.fill_convex(canvas, np.ascontiguousarray(poly, dtype=np.float64), color)


def _clip_segment(x0, y0, x1, y1, xmin, ymin, xmax, ymax):
    # Liang-Barsky; keeps DDA step counts bounded for far-off endpoints.
    dx = x1 - x0
    dy = y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    return x0 + t0 * dx, y0 + t0 * dy, x0 + t1 * dx, y0 + t1 * dy


def draw_line(canvas, p0, p1, color):
    """Draw a 1-pixel segment between continuous pixel coordinates ``p0`` and ``p1``."""
    h, w = canvas.shape[:2]
    seg = _clip_segment(float(p0[0]), float(p0[1]), float(p1[0]), float(p1[1]),
                        -1.0, -1.0, w + 1.0, h + 1.0)
    if seg is None:
        return
    canvas, color = _as_channels(canvas, color)
    _impl.draw_line(canvas, *seg, color)
