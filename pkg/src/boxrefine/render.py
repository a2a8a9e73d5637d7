"""Parameter-aware state construction: image patch plus a painted cuboid mask."""
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .geometry import corners, project_box

FACES = ("front", "back", "left", "right", "top", "bottom")

# Corner indices per face, see ``geometry.corners`` for the corner order.
FACE_CORNERS = np.array([
    [0, 1, 5, 4],  # front: +length
    [2, 3, 7, 6],  # back: -length
    [1, 2, 6, 5],  # left: +width
    [3, 0, 4, 7],  # right: -width
    [4, 5, 6, 7],  # top
    [0, 1, 2, 3],  # bottom
])

EDGES = np.array([
    [0, 1], [1, 2], [2, 3], [3, 0],
    [4, 5], [5, 6], [6, 7], [7, 4],
    [0, 4], [1, 5], [2, 6], [3, 7],
])

WHITE = np.array([255, 255, 255], dtype=np.uint8)
BLACK = np.array([0, 0, 0], dtype=np.uint8)

PARAMETER_AWARE = "parameter_aware"
DIRECT_PROJECTION = "direct_projection"
MODES = (PARAMETER_AWARE, DIRECT_PROJECTION)


class NonPositiveDepth(ValueError):
    pass


class DegenerateGeometry(ValueError):
    pass


class EmptyCrop(ValueError):
    pass


@dataclass(frozen=True)
class FacePalette:
    front: tuple = (0, 0, 255)
    back: tuple = (255, 0, 0)
    left: tuple = (0, 255, 0)
    right: tuple = (255, 255, 0)
    top: tuple = (255, 0, 255)
    bottom: tuple = (0, 255, 255)

    def __post_init__(self):
        cols = self.colors()
        if cols.min() < 0 or cols.max() > 255:
            raise ValueError("palette values must lie in [0, 255]")
        if len({tuple(c) for c in cols}) != 6:
            raise ValueError("palette face colors must be pairwise distinct")
        r, g, b = cols[0]
        if not (b > r and b > g):
            raise ValueError("front face color must be blue")

    def colors(self):
        return np.array([getattr(self, f) for f in FACES], dtype=np.int64)


class StateImage(NamedTuple):
    channels: np.ndarray   # (S, S, 6) uint8: image RGB then mask RGB
    crop_rect: tuple       # (u0, v0, u1, v1) in source image pixels

    @property
    def image_patch(self):
        return self.channels[..., :3]

    @property
    def mask_patch(self):
        return self.channels[..., 3:]


def depth_modulate(c, z):
    """Scale a base color by the depth factor, rounding half up."""
    c = np.asarray(c, dtype=np.float64)
    if z < 0:
        raise NonPositiveDepth(f"instance depth must be non-negative, got {z}")
    scaled = c * 128.0 / 255.0 if z > 50 else c * (1.0 - z / 100.0)
    return np.clip(np.floor(scaled + 0.5 + 1e-9), 0, 255).astype(np.uint8)


def face_centers(box):
    return corners(box)[FACE_CORNERS].mean(axis=1)


def face_visibility(box):
    """Visible faces by the sign of ``(0 - C) . (C_i - C)`` (camera at origin)."""
    c = box.center
    if np.linalg.norm(c) < 1e-6:
        raise DegenerateGeometry("box center coincides with the camera")
    # opposite faces share one dot product with flipped sign, so near-ties cannot show both
    half = 0.5 * (face_centers(box)[0::2] - face_centers(box)[1::2])
    d = half @ (-c)
    return np.stack([d > 0.0, d < 0.0], axis=1).ravel()


def crop_transform(crop_rect, size):
    u0, v0, u1, v1 = crop_rect
    sx = size / (u1 - u0)
    sy = size / (v1 - v0)
    return lambda uv: np.stack([(uv[:, 0] - u0) * sx, (uv[:, 1] - v0) * sy], axis=1)


def _draw_edges(canvas, pix):
    for i, j in EDGES:
        kernels.draw_line(canvas, pix[i], pix[j], BLACK)


def render_mask(box, cam, palette, crop_rect, size):
    """Paint visible faces (far to near) and all 12 edges into an S x S patch."""
    proj = project_box(box, cam)
    pix = crop_transform(crop_rect, size)(proj.uv)
    canvas = np.full((size, size, 3), 255, dtype=np.uint8)
    visible = face_visibility(box)
    order = np.argsort(-cam.project(face_centers(box))[1], kind="stable")
    colors = palette.colors()
    for f in order:
        if visible[f]:
            kernels.fill_convex(canvas, pix[FACE_CORNERS[f]], depth_modulate(colors[f], box.z))
    _draw_edges(canvas, pix)
    return canvas


def enlarge_rect(rect, factor, width, height):
    u0, v0, u1, v1 = rect
    cu, cv = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
    hw, hh = 0.5 * factor * (u1 - u0), 0.5 * factor * (v1 - v0)
    return (max(cu - hw, 0.0), max(cv - hh, 0.0), min(cu + hw, float(width)), min(cv + hh, float(height)))


def crop_resize(image, crop_rect, size):
    """Bilinear resample of ``crop_rect`` to ``size x size`` (pixel centers at +0.5)."""
    u0, v0, u1, v1 = crop_rect
    H, W = image.shape[:2]
    us = u0 + (np.arange(size) + 0.5) * (u1 - u0) / size - 0.5
    vs = v0 + (np.arange(size) + 0.5) * (v1 - v0) / size - 0.5
    us = np.clip(us, 0, W - 1)
    vs = np.clip(vs, 0, H - 1)
    c0 = np.minimum(np.floor(us).astype(np.int64), W - 2 if W > 1 else 0)
    r0 = np.minimum(np.floor(vs).astype(np.int64), H - 2 if H > 1 else 0)
    fu = (us - c0)[None, :, None]
    fv = (vs - r0)[:, None, None]
    c1 = np.minimum(c0 + 1, W - 1)
    r1 = np.minimum(r0 + 1, H - 1)
    img = image.astype(np.float64)
    top = img[r0][:, c0] * (1 - fu) + img[r0][:, c1] * fu
    bot = img[r1][:, c0] * (1 - fu) + img[r1][:, c1] * fu
    out = top * (1 - fv) + bot * fv
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def build_state(box, image, cam, mode=PARAMETER_AWARE, size=64, palette=None, enlarge=1.2):
    """Crop the enlarged projected rectangle and stack image and mask patches."""
    if mode not in MODES:
        raise ValueError(f"unknown state mode {mode!r}")
    proj = project_box(box, cam)
    crop = enlarge_rect(proj.rect, enlarge, cam.image_width, cam.image_height)
    if crop[2] - crop[0] <= 0 or crop[3] - crop[1] <= 0:
        raise EmptyCrop(f"crop rectangle {crop} has zero area")
    patch = crop_resize(image, crop, size)
    if mode == PARAMETER_AWARE:
        mask = render_mask(box, cam, palette or FacePalette(), crop, size)
    else:
        mask = patch.copy()
        _draw_edges(mask, crop_transform(crop, size)(proj.uv))
    return StateImage(np.concatenate([patch, mask], axis=2), crop)


def save_state(state, directory, frame_id, object_id, step):
    """Write the two patches as PNG files; returns their paths."""
    from PIL import Image

    os.makedirs(directory, exist_ok=True)
    stem = os.path.join(directory, f"{frame_id}_obj{object_id:03d}_step{step:02d}")
    paths = (stem + "_image.png", stem + "_mask.png")
    Image.fromarray(np.ascontiguousarray(state.image_patch)).save(paths[0])
    Image.fromarray(np.ascontiguousarray(state.mask_patch)).save(paths[1])
    return paths
