import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxrefine import kernels

NB = kernels.get_backend("numba")
NP = kernels.get_backend("numpy")


def square(cx, cy, r, ang=0.0):
    t = ang + np.pi / 4 + np.arange(4) * np.pi / 2
    return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)


def random_convex(rng, n=None):
    n = n or int(rng.integers(3, 9))
    t = np.sort(rng.uniform(0, 2 * np.pi, n))
    c = rng.uniform(-3, 3, 2)
    return c + rng.uniform(0.5, 3.0) * np.stack([np.cos(t), np.sin(t)], axis=1)


def test_polygon_area_signs():
    sq = np.array([[0, 0], [2, 0], [2, 1], [0, 1]], float)
    assert NP.polygon_area(sq) == 2.0
    assert NB.polygon_area(sq[::-1].copy()) == -2.0


def test_overlap_of_offset_squares():
    a = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], float)
    b = a + 1.0
    for mod in (NP, NB):
        assert mod.convex_overlap_area(a, b) == pytest.approx(1.0)
        assert mod.convex_overlap_area(a, a + 5.0) == 0.0


def test_backends_agree_on_random_clips():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a, b = random_convex(rng), random_convex(rng)
        assert NB.convex_overlap_area(a, b) == pytest.approx(NP.convex_overlap_area(a, b), abs=1e-12)
        np.testing.assert_allclose(NB.clip_convex(a, b), NP.clip_convex(a, b), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_overlap_bounded_by_each_area(seed):
    rng = np.random.default_rng(seed)
    a, b = random_convex(rng), random_convex(rng)
    inter = kernels.convex_overlap_area(a, b)
    assert -1e-12 <= inter <= min(kernels.polygon_area(a), kernels.polygon_area(b)) + 1e-9


def test_fill_identical_across_backends():
    rng = np.random.default_rng(1)
    for _ in range(50):
        poly = random_convex(rng) * 8 + 24
        if rng.random() < 0.5:
            poly = poly[::-1].copy()
        col = rng.integers(0, 256, 3).astype(np.uint8)
        c1 = np.zeros((48, 48, 3), np.uint8)
        c2 = np.zeros((48, 48, 3), np.uint8)
        NB.fill_convex(c1, poly, col)
        NP.fill_convex(c2, poly, col)
        np.testing.assert_array_equal(c1, c2)


def test_fill_covers_pixel_centres_inside():
    canvas = np.zeros((10, 10, 3), np.uint8)
    kernels.fill_convex(canvas, np.array([[2, 3], [7, 3], [7, 6], [2, 6]], float), (9, 9, 9))
    filled = canvas[..., 0] > 0
    assert filled.sum() == 15
    assert filled[3:6, 2:7].all()


def test_fill_area_tracks_polygon_area():
    canvas = np.zeros((200, 200), np.uint8)
    poly = square(100, 100, 60, 0.3)
    kernels.fill_convex(canvas, poly, np.uint8(1))
    assert canvas.sum() == pytest.approx(kernels.polygon_area(poly), rel=0.02)


def test_lines_identical_across_backends():
    rng = np.random.default_rng(2)
    for _ in range(100):
        p = rng.uniform(-10, 58, 4)
        c1 = np.zeros((48, 48, 3), np.uint8)
        c2 = np.zeros((48, 48, 3), np.uint8)
        NB.draw_line(c1, *p, np.array([255, 1, 2], np.uint8))
        NP.draw_line(c2, *p, np.array([255, 1, 2], np.uint8))
        np.testing.assert_array_equal(c1, c2)


def test_horizontal_line_pixels():
    canvas = np.zeros((5, 8), np.uint8)
    kernels.draw_line(canvas, (1.2, 2.5), (6.2, 2.5), 7)
    assert canvas[2, 1:7].tolist() == [7] * 6
    assert canvas.sum() == 42


def test_far_away_segment_is_clipped_quickly():
    canvas = np.zeros((16, 16), np.uint8)
    kernels.draw_line(canvas, (-1e9, 8.0), (1e9, 8.0), 1)
    assert canvas[8].all() and canvas.sum() == 16
    kernels.draw_line(canvas, (-50, -50), (-40, -60), 2)
    assert canvas.max() == 1


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, BOXREFINE_NO_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from boxrefine import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
