"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Kernel timings call each backend module directly. The end-to-end rows run
``iou_3d`` and ``build_state`` in a subprocess with ``BOXREFINE_NO_NUMBA``
set or unset, so they measure what a user of the package would see.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from boxrefine.kernels import get_backend


def square(cx, cy, half, angle):
    c, s = np.cos(angle), np.sin(angle)
    pts = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
    return pts @ np.array([[c, s], [-s, c]]) + [cx, cy]


def kernel_cases():
    a, b = square(0.0, 0.0, 2.0, 0.3), square(1.0, 0.5, 2.0, 1.1)
    poly = square(32.0, 32.0, 20.0, 0.4)
    color = np.array([200, 100, 50], np.uint8)

    def fill(k):
        k.fill_convex(np.zeros((64, 64, 3), np.uint8), poly, color)

    def line(k):
        k.draw_line(np.zeros((64, 64, 3), np.uint8), 1.0, 2.0, 60.0, 50.0, color)

    return {
        "polygon_area": lambda k: k.polygon_area(a),
        "convex_overlap_area": lambda k: k.convex_overlap_area(a, b),
        "fill_convex 64x64": fill,
        "draw_line": line,
    }


END_TO_END = """
import timeit, numpy as np
from boxrefine.geometry import Box3D, CameraModel, iou_3d
from boxrefine.render import build_state
cam = CameraModel.kitti_like(0.5)
img = np.zeros((cam.image_height, cam.image_width, 3), np.uint8)
a, b = Box3D(0, 1.5, 20, 1.5, 1.7, 4.2, 0.3), Box3D(0.4, 1.4, 20.5, 1.6, 1.8, 4.0, 0.7)
iou_3d(a, b); build_state(a, img, cam)
n = {n}
print(min(timeit.repeat(lambda: iou_3d(a, b), number=n, repeat=3)) / n,
      min(timeit.repeat(lambda: build_state(a, img, cam), number=n // 10, repeat=3)) / (n // 10))
"""


def end_to_end(no_numba, n):
    env = dict(os.environ, BOXREFINE_NO_NUMBA="1" if no_numba else "")
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(n=n)], env=env,
                         capture_output=True, text=True, check=True)
    return [float(v) for v in out.stdout.split()]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args(argv)
    nb, npk = get_backend("numba"), get_backend("numpy")
    print(f"{'case':<24}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, fn in kernel_cases().items():
        fn(nb)  # compile outside the timed region
        t = [min(timeit.repeat(lambda: fn(k), number=args.repeat, repeat=3)) / args.repeat * 1e6
             for k in (nb, npk)]
        print(f"{name:<24}{t[0]:>12.2f}{t[1]:>12.2f}{t[1] / t[0]:>9.1f}x")
    fast, slow = end_to_end(False, args.repeat), end_to_end(True, args.repeat)
    for i, name in enumerate(("iou_3d", "build_state")):
        print(f"{name + ' (package)':<24}{fast[i] * 1e6:>12.2f}{slow[i] * 1e6:>12.2f}{slow[i] / fast[i]:>9.1f}x")


if __name__ == "__main__":
    main()
