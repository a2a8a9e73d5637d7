"""Synthetic scenes, jitter sampling, and KITTI label/calibration I/O."""
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import kernels
from .geometry import (BehindCamera, Box3D, CameraModel, corners, iou_bev, project_box,
                       wrap_angle)
from .render import FACE_CORNERS

KITTI_IMAGE_SIZE = (1242, 375)


class PlacementFailure(RuntimeError):
    pass


class RejectionOverflow(RuntimeError):
    pass


class ParseError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class MissingCalibration(ValueError):
    pass


@dataclass
class KittiObject:
    """One row of a KITTI object label or detection file."""

    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple
    box: Optional[Box3D]
    score: Optional[float] = None
    raw: str = ""

    @property
    def is_car(self):
        return self.type == "Car"


@dataclass
class Detection:
    box: Box3D
    source: str = "unknown"
    score: Optional[float] = None


@dataclass
class Scene:
    camera: CameraModel
    image: Optional[np.ndarray]
    objects: List[Box3D] = field(default_factory=list)
    detections: List[Detection] = field(default_factory=list)


@dataclass(frozen=True)
class JitterSpec:
    sigma_x: float = 0.5
    sigma_y: float = 0.2
    sigma_z: float = 1.0
    sigma_h: float = 0.1
    sigma_w: float = 0.1
    sigma_l: float = 0.1
    sigma_theta: float = 0.2
    samples_per_object: int = 300

    def __post_init__(self):
        if min(self.sigmas()) < 0:
            raise ValueError("jitter sigmas must be non-negative")
        if self.samples_per_object < 1:
            raise ValueError("samples_per_object must be >= 1")

    def sigmas(self):
        return np.array([self.sigma_x, self.sigma_y, self.sigma_z, self.sigma_h,
                         self.sigma_w, self.sigma_l, self.sigma_theta])


@dataclass(frozen=True)
class SceneConfig:
    camera_scale: float = 0.5
    min_objects: int = 1
    max_objects: int = 3
    z_min: float = 5.0
    z_max: float = 60.0
    max_retries: int = 200
    yaw: str = "uniform"      # "uniform" over [-pi, pi) or "road": +-pi/2 plus Gaussian spread
    yaw_sigma: float = 0.25

    def __post_init__(self):
        if self.yaw not in ("uniform", "road"):
            raise ValueError(f"yaw must be 'uniform' or 'road', got {self.yaw!r}")
        if not 0 < self.z_min < self.z_max:
            raise ValueError("need 0 < z_min < z_max")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")


def sample_yaw(rng, cfg):
    if cfg.yaw == "road":
        return rng.choice((-0.5, 0.5)) * np.pi + rng.normal(0.0, cfg.yaw_sigma)
    return rng.uniform(-np.pi, np.pi)


# --- synthetic scenes -------------------------------------------------------

_BODY_COLORS = np.array([
    [200, 40, 40], [40, 90, 200], [230, 180, 30], [40, 150, 70],
    [130, 60, 170], [220, 110, 30], [30, 160, 170], [110, 110, 120],
])
_LIGHT = np.array([-0.3, -1.0, -0.4]) / np.linalg.norm([-0.3, -1.0, -0.4])


def inside_image(box, cam):
    """True if all corners have positive depth and the projection lies in the image."""
    try:
        r = project_box(box, cam).rect_unclamped
    except BehindCamera:
        return False
    return r[0] >= 0 and r[1] >= 0 and r[2] <= cam.image_width and r[3] <= cam.image_height


def background(cam):
    """Flat two-tone background split at the horizon row."""
    H, W = cam.image_height, cam.image_width
    img = np.empty((H, W, 3), dtype=np.uint8)
    horizon = int(np.clip(round(cam.K[1, 2]), 0, H))
    img[:horizon] = (205, 215, 225)
    img[horizon:] = (150, 148, 140)
    return img


def paint_object(image, box, cam, body_color):
    """Solid cuboid with Lambert face shading, a bright front and darker back face."""
    pts = corners(box)
    uv, _ = cam.project(pts)
    centers = pts[FACE_CORNERS].mean(axis=1)
    normals = centers - box.center
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    facing = np.einsum("ij,ij->i", -centers, normals) > 0
    depth_shade = 1.0 - 0.3 * min(box.z, 60.0) / 60.0
    for f in np.argsort(-centers[:, 2], kind="stable"):
        if not facing[f]:
            continue
        shade = 0.6 + 0.4 * max(float(-normals[f] @ _LIGHT), 0.0)
        col = np.asarray(body_color, dtype=np.float64) * shade
        if f == 0:
            col = 0.6 * col + 0.4 * 255.0
        elif f == 1:
            col = 0.6 * col
        col = np.clip(np.round(col * depth_shade), 0, 255).astype(np.uint8)
        kernels.fill_convex(image, uv[FACE_CORNERS[f]], col)


def render_scene(cam, boxes, colors):
    img = background(cam)
    for i in np.argsort([-b.z for b in boxes], kind="stable"):
        paint_object(img, boxes[i], cam, colors[i])
    return img


def _separated(box, others, margin=0.5):
    grown = box.replace(w=box.w + 2 * margin, l=box.l + 2 * margin)
    return all(iou_bev(grown, o) == 0.0 for o in others)


def generate_scene(seed, cfg=SceneConfig()):
    """Place 1-3 car-sized boxes inside the view of a KITTI-like camera and render them."""
    rng = np.random.default_rng(seed)
    cam = CameraModel.kitti_like(cfg.camera_scale)
    f, cu = cam.K[0, 0], cam.K[0, 2]
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    boxes = []
    for _ in range(n):
        for _attempt in range(cfg.max_retries):
            z = rng.uniform(cfg.z_min, cfg.z_max)
            u = rng.uniform(0.1, 0.9) * cam.image_width
            box = Box3D((u - cu) * z / f, rng.uniform(1.5, 1.8), z,
                        rng.normal(1.5, 0.08), rng.normal(1.7, 0.08), rng.normal(4.0, 0.25),
                        sample_yaw(rng, cfg))
            if inside_image(box, cam) and _separated(box, boxes):
                boxes.append(box)
                break
        else:
            raise PlacementFailure(f"could not place object {len(boxes)} after {cfg.max_retries} tries")
    colors = _BODY_COLORS[rng.permutation(len(_BODY_COLORS))[:n]]
    return Scene(cam, render_scene(cam, boxes, colors), boxes)


def jitter(gt, spec, cam, rng, batch=64):
    """Gaussian perturbations of ``gt`` that stay in the image with positive depth."""
    sig = spec.sigmas()
    want = spec.samples_per_object
    out = []
    tries = 0
    base = gt.as_array()
    while len(out) < want:
        noise = rng.standard_normal((batch, 7)) * sig
        for v in base + noise:
            tries += 1
            if min(v[3:6]) <= 0:
                continue
            box = Box3D.from_array(v)
            if inside_image(box, cam):
                out.append(box)
                if len(out) == want:
                    break
        if tries >= 100 * want and len(out) < 0.01 * tries:
            raise RejectionOverflow(f"accepted {len(out)} of {tries} jitter samples")
    return out


def export_scene(scene, directory, frame_id):
    """Write ``image_2/<id>.png``, ``label_2/<id>.txt`` and ``calib/<id>.txt``."""
    from PIL import Image

    paths = {}
    for sub in ("image_2", "label_2", "calib"):
        os.makedirs(os.path.join(directory, sub), exist_ok=True)
    paths["image"] = os.path.join(directory, "image_2", f"{frame_id}.png")
    Image.fromarray(scene.image).save(paths["image"])
    paths["label"] = os.path.join(directory, "label_2", f"{frame_id}.txt")
    with open(paths["label"], "w") as fh:
        fh.write("".join(format_label_line(box_to_object(b, scene.camera)) + "\n" for b in scene.objects))
    paths["calib"] = os.path.join(directory, "calib", f"{frame_id}.txt")
    with open(paths["calib"], "w") as fh:
        fh.write(format_calib(scene.camera))
    return paths


# --- KITTI format -------------------------------------------------------------

def parse_label_line(line, lineno=1):
    parts = line.split()
    if len(parts) not in (15, 16):
        raise ParseError(lineno, f"expected 15 or 16 fields, got {len(parts)}")
    try:
        vals = [float(p) for p in parts[1:]]
    except ValueError as exc:
        raise ParseError(lineno, str(exc)) from None
    h, w, l, x, y, z, ry = vals[7:14]
    box = None
    if parts[0] != "DontCare":
        try:
            box = Box3D(x, y, z, h, w, l, ry)
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    return KittiObject(parts[0], vals[0], int(vals[1]), vals[2], tuple(vals[3:7]), box,
                       vals[14] if len(vals) == 15 else None, line.rstrip("\n"))


def parse_labels(text):
    """All non-empty rows of a label or detection file, in order."""
    return [parse_label_line(line, i) for i, line in enumerate(text.splitlines(), 1) if line.strip()]


def format_label_line(obj):
    """KITTI layout with the usual two-decimal convention (score keeps four)."""
    if obj.box is not None:
        b = obj.box
        geom = (b.h, b.w, b.l, b.x, b.y, b.z, b.theta)
    else:
        # DontCare rows carry placeholder geometry that is not a valid box
        geom = tuple(float(v) for v in obj.raw.split()[8:15])
    s = (f"{obj.type} {obj.truncated:.2f} {obj.occluded:d} {obj.alpha:.2f} "
         f"{obj.bbox[0]:.2f} {obj.bbox[1]:.2f} {obj.bbox[2]:.2f} {obj.bbox[3]:.2f} "
         + " ".join(f"{v:.2f}" for v in geom))
    if obj.score is not None:
        s += f" {obj.score:.4f}"
    return s


def box_to_object(box, cam=None, type="Car", score=None, template=None):
    """Build a label row for ``box``; alpha and the 2D box are derived from the geometry."""
    bbox = (0.0, 0.0, 0.0, 0.0)
    if cam is not None:
        try:
            bbox = project_box(box, cam).rect
        except BehindCamera:
            pass
    alpha = wrap_angle(box.theta - np.arctan2(box.x, box.z))
    if template is not None:
        return KittiObject(template.type, template.truncated, template.occluded, alpha, bbox, box,
                           template.score)
    return KittiObject(type, 0.0, 0, alpha, bbox, box, score)


def parse_calib(text, image_size=KITTI_IMAGE_SIZE):
    """Camera from the ``P2`` line (or a single ``P`` line) of a calibration file."""
    mats = {}
    for i, line in enumerate(text.splitlines(), 1):
        if ":" not in line:
            continue
        key, val = line.split(":", 1)
        try:
            mats[key.strip()] = np.array([float(t) for t in val.split()])
        except ValueError:
            raise ParseError(i, f"non-numeric calibration entry {key.strip()!r}") from None
    for key in ("P2", "P_rect_02", "P"):
        if key in mats:
            if mats[key].size != 12:
                raise ParseError(0, f"{key} must have 12 values, got {mats[key].size}")
            return CameraModel(mats[key].reshape(3, 4), *image_size)
    raise MissingCalibration("no P2 projection matrix in calibration text")


def format_calib(cam):
    row = " ".join(f"{v:.12e}" for v in cam.K.ravel())
    return f"P2: {row}\n"


def load_kitti_labels(label_text, calib_text, detections_text=None, image=None,
                      image_size=KITTI_IMAGE_SIZE):
    """Scene fragment holding the Car ground truth and, optionally, Car detections."""
    if image is not None:
        image_size = (image.shape[1], image.shape[0])
    cam = parse_calib(calib_text, image_size)
    objects = [o.box for o in parse_labels(label_text) if o.is_car]
    dets = []
    if detections_text is not None:
        dets = [Detection(o.box, "file", o.score) for o in parse_labels(detections_text) if o.is_car]
    return Scene(cam, image, objects, dets)
