"""Yaw-only 3D boxes: corners, pinhole projection, axial displacements, IoU.

Conventions (KITTI camera frame): x right, y down, z forward. A box is
anchored at its bottom-face center, so it spans ``[y - h, y]`` vertically.
At ``theta = 0`` the length axis points along +x and the width axis along
+z; ``theta`` rotates about +y.
"""
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels

TWO_PI = 2.0 * np.pi
PARAM_NAMES = ("x", "y", "z", "h", "w", "l", "theta")


class BehindCamera(ValueError):
    """A box corner has non-positive depth, so the box has no valid projection."""


def wrap_angle(a):
    """Wrap an angle to ``[-pi, pi)``."""
    r = (a + np.pi) % TWO_PI - np.pi
    if r >= np.pi:
        r -= TWO_PI
    return float(r)


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    h: float
    w: float
    l: float
    theta: float = 0.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"Box3D.{name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        if self.h <= 0 or self.w <= 0 or self.l <= 0:
            raise ValueError(f"Box3D dimensions must be positive, got h={self.h} w={self.w} l={self.l}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def from_array(cls, v):
        return cls(*[float(t) for t in v])

    def as_array(self):
        return np.array([self.x, self.y, self.z, self.h, self.w, self.l, self.theta])

    def replace(self, **changes):
        return replace(self, **changes)

    @property
    def center(self):
        """Volumetric centroid (the anchor is the bottom-face center)."""
        return np.array([self.x, self.y - 0.5 * self.h, self.z])

    @property
    def volume(self):
        return self.h * self.w * self.l


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera with a 3x4 projection matrix, normalized so ``K[2, 2] == 1``."""

    K: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64).reshape(3, 4)
        if K[2, 2] == 0:
            raise ValueError("projection matrix has K[2, 2] == 0")
        K = K / K[2, 2]
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        if int(self.image_width) <= 0 or int(self.image_height) <= 0:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))

    def __eq__(self, other):
        return (isinstance(other, CameraModel) and np.array_equal(self.K, other.K)
                and self.image_width == other.image_width
                and self.image_height == other.image_height)

    @classmethod
    def kitti_like(cls, scale=0.5):
        """A KITTI P2-style camera (1242x375 sensor) scaled by ``scale``."""
        f, cu, cv = 721.5377 * scale, 609.5593 * scale, 172.854 * scale
        K = [[f, 0.0, cu, 44.857 * scale],
             [0.0, f, cv, 0.2163 * scale],
             [0.0, 0.0, 1.0, 2.745884e-3]]
        return cls(K, int(round(1242 * scale)), int(round(375 * scale)))

    def project(self, pts):
        """Project (n, 3) points; returns ``(uv, depth)``."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        hom = pts @ self.K[:, :3].T + self.K[:, 3]
        depth = hom[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = hom[:, :2] / depth[:, None]
        return uv, depth


class AxialDisplacement(NamedTuple):
    dx_a: float  # along the width axis
    dy_a: float  # along the height axis
    dz_a: float  # along the length (forward) axis


class WorldDisplacement(NamedTuple):
    dx: float
    dy: float
    dz: float


class BoxProjection(NamedTuple):
    rect: tuple            # (u_min, v_min, u_max, v_max) clamped to the image
    rect_unclamped: tuple
    uv: np.ndarray         # (8, 2) pixel coordinates of ``corners(box)``
    depth: np.ndarray      # (8,)


def rotation_y(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# Local corner template: columns (length, height, width). Bottom face first,
# counter-clockwise seen from above (x right, z up in the ground plane), then
# the top face in the same order.
_LOCAL_CORNERS = np.array([
    [0.5, 0.0, -0.5],
    [0.5, 0.0, 0.5],
    [-0.5, 0.0, 0.5],
    [-0.5, 0.0, -0.5],
    [0.5, -1.0, -0.5],
    [0.5, -1.0, 0.5],
    [-0.5, -1.0, 0.5],
    [-0.5, -1.0, -0.5],
])


def corners(box):
    """Return the (8, 3) corners of ``box``.

    Order: bottom face ``0..3`` counter-clockwise seen from above starting at
    (front, right), then top face ``4..7`` directly above ``0..3``.
    """
    local = _LOCAL_CORNERS * np.array([box.l, box.h, box.w])
    return local @ rotation_y(box.theta).T + np.array([box.x, box.y, box.z])


def footprint(box):
    """Bottom-face polygon in the (x, z) ground plane, counter-clockwise."""
    c, s = np.cos(box.theta), np.sin(box.theta)
    a = _LOCAL_CORNERS[:4, 0] * box.l
    b = _LOCAL_CORNERS[:4, 2] * box.w
    return np.stack([box.x + c * a + s * b, box.z - s * a + c * b], axis=1)


def project_box(box, cam):
    """Project a box; the rectangle is the bounding box of the 8 projected corners."""
    uv, depth = cam.project(corners(box))
    if np.any(depth <= 0):
        raise BehindCamera(f"box at z={box.z:.3f} has a corner with non-positive depth")
    u0, v0 = uv.min(axis=0)
    u1, v1 = uv.max(axis=0)
    raw = (float(u0), float(v0), float(u1), float(v1))
    W, H = cam.image_width, cam.image_height
    rect = (min(max(raw[0], 0.0), W), min(max(raw[1], 0.0), H),
            min(max(raw[2], 0.0), W), min(max(raw[3], 0.0), H))
    return BoxProjection(rect, raw, uv, depth)


def axial_to_world(d, theta):
    """Map an object-axis displacement to world axes for yaw ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    dx_a, dy_a, dz_a = d
    return WorldDisplacement(dz_a * c + dx_a * s, dy_a, dz_a * (-s) + dx_a * c)


def world_to_axial(d, theta):
    # The (x', z') -> (x, z) block is symmetric and orthogonal, hence self-inverse.
    c, s = np.cos(theta), np.sin(theta)
    dx, dy, dz = d
    return AxialDisplacement(dx * s + dz * c, dy, dx * c - dz * s)


def iou_bev(a, b):
    """Bird's-eye-view IoU of the two footprint rectangles."""
    inter = kernels.convex_overlap_area(footprint(a), footprint(b))
    union = a.l * a.w + b.l * b.w - inter
    if inter <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def vertical_overlap(a, b):
    return max(0.0, min(a.y, b.y) - max(a.y - a.h, b.y - b.h))


def iou_3d(a, b):
    """Exact 3D IoU; valid because yaw-only boxes have axis-aligned vertical extent."""
    dy = vertical_overlap(a, b)
    if dy <= 0.0:
        return 0.0
    area = kernels.convex_overlap_area(footprint(a), footprint(b))
    if area <= 0.0:
        return 0.0
    inter = area * dy
    return min(inter / (a.volume + b.volume - inter), 1.0)
