"""Pure-numpy implementations of the hot geometry and raster kernels.

Every function here has a numba twin in ``_nb_kernels`` that performs the
same per-pixel arithmetic, so both paths produce bit-identical canvases.
Areas agree to rounding: the shoelace sums are reduced in a different order.
"""
import numpy as np

EPS = 1e-9


def polygon_area(poly):
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    if len(poly) < 3:
        return 0.0
    x = poly[:, 0]
    y = poly[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def clip_convex(subject, clip):
    """Sutherland-Hodgman clipping of ``subject`` against convex CCW ``clip``."""
    out = np.asarray(subject, dtype=np.float64)
    m = len(clip)
    for j in range(m):
        if len(out) == 0:
            break
        c0 = clip[j - 1]
        c1 = clip[j]
        ex = c1[0] - c0[0]
        ey = c1[1] - c0[1]
        side = ex * (out[:, 1] - c0[1]) - ey * (out[:, 0] - c0[0])
        inside = side >= 0.0
        prev = np.roll(out, 1, axis=0)
        side_prev = np.roll(side, 1)
        inside_prev = np.roll(inside, 1)
        crossing = inside != inside_prev
        denom = np.where(crossing, side_prev - side, 1.0)
        t = side_prev / denom
        ix = prev[:, 0] + t * (out[:, 0] - prev[:, 0])
        iy = prev[:, 1] + t * (out[:, 1] - prev[:, 1])
        slots = np.empty((len(out), 2, 2))
        slots[:, 0, 0] = ix
        slots[:, 0, 1] = iy
        slots[:, 1] = out
        keep = np.stack([crossing, inside], axis=1)
        out = slots[keep]
    return out


def clean_polygon(poly):
    """Drop duplicate and collinear vertices (tolerance ``EPS``)."""
    pts = [p for p in poly]
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        n = len(pts)
        for i in range(n):
            a = pts[i - 1]
            b = pts[i]
            c = pts[(i + 1) % n]
            dup = abs(b[0] - a[0]) < EPS and abs(b[1] - a[1]) < EPS
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if dup or abs(cross) < EPS:
                del pts[i]
                changed = True
                break
    if len(pts) < 3:
        return np.zeros((0, 2))
    return np.array(pts)


def convex_overlap_area(a, b):
    """Area of the intersection of two convex CCW polygons."""
    inter = clean_polygon(clip_convex(a, b))
    if len(inter) < 3:
        return 0.0
    return max(polygon_area(inter), 0.0)


def fill_convex(canvas, poly, color):
    """Paint every pixel whose center lies inside the convex polygon ``poly``.

    Pixel (r, c) has its center at (c + 0.5, r + 0.5). Either vertex
    orientation is accepted; boundary pixels count as inside.
    """
    h, w = canvas.shape[:2]
    n = len(poly)
    if n < 3:
        return
    area = polygon_area(poly)
    if abs(area) < EPS:
        return
    sgn = 1.0 if area > 0 else -1.0
    c0 = max(int(np.floor(poly[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.ceil(poly[:, 0].max() - 0.5)), w - 1)
    r0 = max(int(np.floor(poly[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.ceil(poly[:, 1].max() - 0.5)), h - 1)
    if c1 < c0 or r1 < r0:
        return
    px = np.arange(c0, c1 + 1, dtype=np.float64)[None, :] + 0.5
    py = np.arange(r0, r1 + 1, dtype=np.float64)[:, None] + 0.5
    mask = np.ones((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    for i in range(n):
        x0, y0 = poly[i - 1]
        x1, y1 = poly[i]
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        mask &= sgn * cross >= 0.0
    canvas[r0:r1 + 1, c0:c1 + 1][mask] = color


def draw_line(canvas, x0, y0, x1, y1, color):
    """DDA line between pixel-space endpoints, 1 pixel wide, clipped to canvas."""
    h, w = canvas.shape[:2]
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    t = np.arange(n + 1, dtype=np.float64) / n
    cols = np.floor(x0 + t * (x1 - x0)).astype(np.int64)
    rows = np.floor(y0 + t * (y1 - y0)).astype(np.int64)
    ok = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    canvas[rows[ok], cols[ok]] = color
