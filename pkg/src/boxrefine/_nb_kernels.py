"""Numba-compiled twins of ``_np_kernels``.

Arithmetic mirrors the numpy path expression for expression; keep them in
sync, ``tests/test_kernels.py`` compares the two on random inputs.
"""
import math

import numpy as np
from numba import njit

EPS = 1e-9
_MAXV = 32


@njit(cache=True)
def polygon_area(poly):
    n = poly.shape[0]
    if n < 3:
        return 0.0
    s = 0.0
    for i in range(n):
        j = (i + 1) % n
        s += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
    return 0.5 * s


@njit(cache=True)
def clip_convex(subject, clip):
    buf_a = np.empty((_MAXV, 2))
    buf_b = np.empty((_MAXV, 2))
    n = subject.shape[0]
    for i in range(n):
        buf_a[i, 0] = subject[i, 0]
        buf_a[i, 1] = subject[i, 1]
    m = clip.shape[0]
    for j in range(m):
        if n == 0:
            break
        c0x = clip[j - 1, 0]
        c0y = clip[j - 1, 1]
        ex = clip[j, 0] - c0x
        ey = clip[j, 1] - c0y
        k = 0
        px = buf_a[n - 1, 0]
        py = buf_a[n - 1, 1]
        side_p = ex * (py - c0y) - ey * (px - c0x)
        for i in range(n):
            qx = buf_a[i, 0]
            qy = buf_a[i, 1]
            side_q = ex * (qy - c0y) - ey * (qx - c0x)
            in_p = side_p >= 0.0
            in_q = side_q >= 0.0
            if in_p != in_q:
                t = side_p / (side_p - side_q)
                buf_b[k, 0] = px + t * (qx - px)
                buf_b[k, 1] = py + t * (qy - py)
                k += 1
            if in_q:
                buf_b[k, 0] = qx
                buf_b[k, 1] = qy
                k += 1
            px = qx
            py = qy
            side_p = side_q
        buf_a, buf_b = buf_b, buf_a
        n = k
    return buf_a[:n].copy()


@njit(cache=True)
def clean_polygon(poly):
    pts = poly.copy()
    n = pts.shape[0]
    changed = True
    while changed and n >= 3:
        changed = False
        for i in range(n):
            a = (i - 1) % n
            c = (i + 1) % n
            dx = pts[i, 0] - pts[a, 0]
            dy = pts[i, 1] - pts[a, 1]
            dup = abs(dx) < EPS and abs(dy) < EPS
            cross = dx * (pts[c, 1] - pts[a, 1]) - dy * (pts[c, 0] - pts[a, 0])
            if dup or abs(cross) < EPS:
                for k in range(i, n - 1):
                    pts[k, 0] = pts[k + 1, 0]
                    pts[k, 1] = pts[k + 1, 1]
                n -= 1
                changed = True
                break
    if n < 3:
        return np.zeros((0, 2))
    return pts[:n].copy()


@njit(cache=True)
def convex_overlap_area(a, b):
    inter = clean_polygon(clip_convex(a, b))
    if inter.shape[0] < 3:
        return 0.0
    area = polygon_area(inter)
    return area if area > 0.0 else 0.0


@njit(cache=True)
def fill_convex(canvas, poly, color):
    h = canvas.shape[0]
    w = canvas.shape[1]
    n = poly.shape[0]
    if n < 3:
        return
    area = polygon_area(poly)
    if abs(area) < EPS:
        return
    sgn = 1.0 if area > 0 else -1.0
    xmin = poly[0, 0]
    xmax = poly[0, 0]
    ymin = poly[0, 1]
    ymax = poly[0, 1]
    for i in range(1, n):
        xmin = min(xmin, poly[i, 0])
        xmax = max(xmax, poly[i, 0])
        ymin = min(ymin, poly[i, 1])
        ymax = max(ymax, poly[i, 1])
    c0 = max(int(math.floor(xmin - 0.5)), 0)
    c1 = min(int(math.ceil(xmax - 0.5)), w - 1)
    r0 = max(int(math.floor(ymin - 0.5)), 0)
    r1 = min(int(math.ceil(ymax - 0.5)), h - 1)
    for r in range(r0, r1 + 1):
        cy = r + 0.5
        for c in range(c0, c1 + 1):
            cx = c + 0.5
            inside = True
            for i in range(n):
                x0 = poly[i - 1, 0]
                y0 = poly[i - 1, 1]
                cross = (poly[i, 0] - x0) * (cy - y0) - (poly[i, 1] - y0) * (cx - x0)
                if sgn * cross < 0.0:
                    inside = False
                    break
            if inside:
                for ch in range(canvas.shape[2]):
                    canvas[r, c, ch] = color[ch]


@njit(cache=True)
def draw_line(canvas, x0, y0, x1, y1, color):
    h = canvas.shape[0]
    w = canvas.shape[1]
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    for k in range(n + 1):
        t = k / n
        c = int(math.floor(x0 + t * (x1 - x0)))
        r = int(math.floor(y0 + t * (y1 - y0)))
        if c >= 0 and c < w and r >= 0 and r < h:
            for ch in range(canvas.shape[2]):
                canvas[r, c, ch] = color[ch]
