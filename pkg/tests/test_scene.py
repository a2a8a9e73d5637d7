import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxrefine.geometry import Box3D, CameraModel, iou_3d, project_box
from boxrefine.scene import (JitterSpec, MissingCalibration, ParseError, RejectionOverflow,
                             SceneConfig, box_to_object, export_scene, format_calib,
                             format_label_line, generate_scene, inside_image, jitter,
                             load_kitti_labels, parse_calib, parse_label_line, parse_labels)

DATA = os.path.join(os.path.dirname(__file__), "data")


def read(name):
    with open(os.path.join(DATA, name)) as fh:
        return fh.read()


def test_scene_is_deterministic():
    a, b = generate_scene(11), generate_scene(11)
    assert a.objects == b.objects
    np.testing.assert_array_equal(a.image, b.image)
    assert generate_scene(12).objects != a.objects


def test_generated_boxes_are_valid_and_apart():
    for seed in range(40):
        sc = generate_scene(seed)
        assert 1 <= len(sc.objects) <= 3
        for i, b in enumerate(sc.objects):
            assert 5.0 <= b.z <= 60.0
            assert inside_image(b, sc.camera)
            for o in sc.objects[i + 1:]:
                assert iou_3d(b, o) == 0.0


def test_road_yaw_option():
    cfg = SceneConfig(yaw="road", yaw_sigma=0.1)
    yaws = [b.theta for s in range(30) for b in generate_scene(s, cfg).objects]
    assert all(abs(abs(t) - np.pi / 2) < 0.5 for t in yaws)
    with pytest.raises(ValueError):
        SceneConfig(yaw="sideways")


def test_zero_sigma_jitter_copies_ground_truth():
    sc = generate_scene(0)
    gt = sc.objects[0]
    out = jitter(gt, JitterSpec(0, 0, 0, 0, 0, 0, 0), sc.camera, np.random.default_rng(0))
    assert len(out) == 300 and all(b == gt for b in out)


def test_depth_jitter_mean():
    sc = generate_scene(0)
    gt = sc.objects[0]
    out = jitter(gt, JitterSpec(0, 0, 1.0, 0, 0, 0, 0), sc.camera, np.random.default_rng(1))
    z = np.array([b.z for b in out])
    assert abs(z.mean() - gt.z) < 3 * 1.0 / np.sqrt(300)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(0, 2 ** 16))
def test_jitter_respects_both_constraints(sxz, sdim, seed):
    sc = generate_scene(seed % 50)
    gt = sc.objects[0]
    spec = JitterSpec(sxz, 0.2, sxz, sdim, sdim, sdim, 0.5, samples_per_object=20)
    for b in jitter(gt, spec, sc.camera, np.random.default_rng(seed)):
        assert min(b.h, b.w, b.l) > 0
        proj = project_box(b, sc.camera)
        assert (proj.depth > 0).all()
        u0, v0, u1, v1 = proj.rect_unclamped
        assert u0 >= 0 and v0 >= 0 and u1 <= sc.camera.image_width and v1 <= sc.camera.image_height


def test_impossible_jitter_overflows():
    sc = generate_scene(0)
    with pytest.raises(RejectionOverflow):
        jitter(sc.objects[0], JitterSpec(sigma_x=1e5, samples_per_object=5), sc.camera,
               np.random.default_rng(0))


def test_label_field_mapping():
    obj = parse_label_line("Car 0.00 0 -1.50 0 0 10 10 1.5 1.7 4.2 2.0 1.5 20.0 -1.57")
    assert obj.box == Box3D(2.0, 1.5, 20.0, 1.5, 1.7, 4.2, -1.57)
    assert obj.score is None
    assert parse_label_line("Car 0 0 0 0 0 1 1 1.5 1.7 4.2 2 1.5 20 0 0.87").score == 0.87


def test_dontcare_has_no_box_and_is_skipped():
    rows = parse_labels(read("sample_label.txt"))
    assert [r.box for r in rows if r.type == "DontCare"] == [None, None]
    scene = load_kitti_labels(read("sample_label.txt"), read("sample_calib.txt"))
    assert len(scene.objects) == sum(r.type == "Car" for r in rows) == 12


def test_malformed_line_names_line_number():
    text = read("sample_label.txt").splitlines()
    text.insert(3, "Car 0.00 0 1 2 3 4 5 6 7")
    with pytest.raises(ParseError) as err:
        parse_labels("\n".join(text))
    assert err.value.lineno == 4 and "line 4" in str(err.value)
    with pytest.raises(ParseError):
        parse_label_line("Car a 0 0 0 0 0 0 1 1 1 0 0 5 0")


def test_round_trip_is_stable():
    rows = parse_labels(read("sample_label.txt"))
    text = "\n".join(format_label_line(r) for r in rows)
    again = parse_labels(text)
    assert "\n".join(format_label_line(r) for r in again) == text
    for a, b in zip(rows, again):
        assert a.type == b.type and a.occluded == b.occluded
        if a.box is not None:
            np.testing.assert_allclose(a.box.as_array(), b.box.as_array(), atol=1e-2)


@settings(max_examples=100)
@given(st.floats(-30, 30), st.floats(-2, 3), st.floats(1, 80), st.floats(0.2, 5), st.floats(0.2, 5),
       st.floats(0.2, 12), st.floats(-3.1, 3.1))
def test_box_survives_label_text(x, y, z, h, w, l, th):
    box = Box3D(x, y, z, h, w, l, th)
    back = parse_label_line(format_label_line(box_to_object(box))).box
    assert np.abs(back.as_array() - box.as_array()).max() <= 5e-3 + 1e-12


def test_calibration_parsing():
    cam = parse_calib(read("sample_calib.txt"))
    assert cam.K[0, 0] == pytest.approx(721.5377)
    assert cam.K[0, 3] == pytest.approx(44.85728)
    assert (cam.image_width, cam.image_height) == (1242, 375)
    again = parse_calib(format_calib(cam))
    np.testing.assert_allclose(again.K, cam.K, rtol=1e-12)
    with pytest.raises(MissingCalibration):
        parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(ParseError):
        parse_calib("P2: 1 2 3\n")


def test_detections_file_populates_detections():
    dets = "Car 0 0 0 0 0 1 1 1.5 1.7 4.2 2 1.5 20 0 0.91\nPedestrian 0 0 0 0 0 1 1 1.7 .5 .9 1 1.5 9 0 0.5\n"
    scene = load_kitti_labels("", read("sample_calib.txt"), dets)
    assert len(scene.detections) == 1 and scene.detections[0].score == 0.91


def test_export_scene_round_trip(tmp_path):
    sc = generate_scene(3)
    paths = export_scene(sc, str(tmp_path), "000003")
    with open(paths["label"]) as fh, open(paths["calib"]) as fc:
        loaded = load_kitti_labels(fh.read(), fc.read(), image=sc.image)
    assert isinstance(loaded.camera, CameraModel)
    assert len(loaded.objects) == len(sc.objects)
    for a, b in zip(loaded.objects, sc.objects):
        np.testing.assert_allclose(a.as_array(), b.as_array(), atol=5e-3 + 1e-12)
