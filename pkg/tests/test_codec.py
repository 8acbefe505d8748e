import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevkit.boxes import Box3D, normalize_angle
from bevkit.codec import (DegenerateBoxError, DirectionLabel, decode, decode_batch, direction_label,
                          direction_labels, encode, encode_batch)

CAR = Box3D(0.0, 0.0, -1.0, 4.0, 1.6, 1.6, 0.0)

dims = st.floats(0.2, 8.0)
coords = st.floats(-50.0, 50.0)
angles = st.floats(-10.0, 10.0)
boxes = st.builds(Box3D, coords, coords, st.floats(-3, 3), dims, dims, dims, angles)


def test_normalize_angle_range():
    vals = np.linspace(-20, 20, 4001)
    out = normalize_angle(vals)
    assert np.all(out >= -math.pi) and np.all(out < math.pi)
    assert normalize_angle(math.pi) == -math.pi
    assert np.allclose(np.cos(out), np.cos(vals)) and np.allclose(np.sin(out), np.sin(vals))


def test_box_rejects_nonpositive_dims():
    with pytest.raises(ValueError):
        Box3D(0, 0, 0, 0.0, 1, 1)
    with pytest.raises(ValueError):
        encode_batch([0, 0, 0, 1, -1, 1, 0], CAR.as_array())


def test_identity_encodes_to_unit_angle():
    assert encode(CAR, CAR) == (0, 0, 0, 0, 0, 0, 0, 1)


def test_shifted_car_dx():
    gt = Box3D(0.5, 0.0, -1.0, 4.0, 1.6, 1.6, 0.0)
    # 0.5 / sqrt(4^2 + 1.6^2)
    assert encode(gt, CAR).dx == pytest.approx(0.5 / math.sqrt(16 + 2.56), abs=1e-12)
    assert encode(gt, CAR).dx == pytest.approx(0.116059, abs=1e-6)


def test_length_log_ratio():
    gt = Box3D(0.0, 0.0, -1.0, 4.4, 1.6, 1.6, 0.0)
    assert encode(gt, CAR).dl == pytest.approx(math.log(1.1), abs=1e-12)
    assert encode(gt, CAR).dl == pytest.approx(0.0953102, abs=1e-7)


def test_zero_target_decodes_to_anchor():
    box = decode([0, 0, 0, 0, 0, 0, 0, 1], CAR, DirectionLabel.FORWARD)
    assert box == CAR


def test_face_offsets_give_height():
    box = decode([0, 0, 0.5, -0.5, 0, 0, 0, 1], CAR, DirectionLabel.FORWARD)
    assert box.h == pytest.approx(0.6)
    assert box.z == pytest.approx(CAR.z)


def test_degenerate_height_raises():
    with pytest.raises(DegenerateBoxError):
        decode([0, 0, 1.0, -1.0, 0, 0, 0, 1], CAR, DirectionLabel.FORWARD)


def test_zero_angle_vector_raises():
    with pytest.raises(DegenerateBoxError):
        decode([0, 0, 0, 0, 0, 0, 0, 0], CAR, DirectionLabel.FORWARD)


def test_decode_clamps_zeta():
    a = decode([0, 0, 0, 0, 0, 0, 1.7, 0.0], CAR, DirectionLabel.FORWARD)
    b = decode([0, 0, 0, 0, 0, 0, 1.0, 0.0], CAR, DirectionLabel.FORWARD)
    assert a.theta == b.theta == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("delta,label", [
    (0.1, DirectionLabel.FORWARD),
    (0.1 - math.pi, DirectionLabel.FLIPPED),
    (math.pi - 1e-9, DirectionLabel.FORWARD),
    (math.pi + 1e-9, DirectionLabel.FLIPPED),
    (0.0, DirectionLabel.FORWARD),
    (-math.pi, DirectionLabel.FLIPPED),
])
def test_direction_label(delta, label):
    assert direction_label(0.3 + delta, 0.3) == label


@settings(max_examples=300, deadline=None)
@given(boxes, boxes)
def test_roundtrip(gt, anchor):
    t = encode(gt, anchor)
    assert t.dzeta ** 2 + t.deta ** 2 == pytest.approx(1.0, abs=1e-12)
    back = decode(t, anchor, direction_label(gt.theta, anchor.theta))
    for name in ("x", "y", "z", "l", "w", "h"):
        assert getattr(back, name) == pytest.approx(getattr(gt, name), abs=1e-9, rel=1e-12)
    assert abs(normalize_angle(back.theta - gt.theta)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(boxes, boxes, coords, coords)
def test_translation_equivariance(gt, anchor, tx, ty):
    t0 = np.array(encode(gt, anchor))
    g2 = Box3D(gt.x + tx, gt.y + ty, gt.z, gt.l, gt.w, gt.h, gt.theta)
    a2 = Box3D(anchor.x + tx, anchor.y + ty, anchor.z, anchor.l, anchor.w, anchor.h, anchor.theta)
    assert np.allclose(np.array(encode(g2, a2)), t0, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(boxes, boxes, st.floats(0.1, 10.0))
def test_scale_covariance(gt, anchor, c):
    t0 = encode(gt, anchor)
    g2 = Box3D(gt.x, gt.y, gt.z, gt.l * c, gt.w * c, gt.h, gt.theta)
    a2 = Box3D(anchor.x, anchor.y, anchor.z, anchor.l * c, anchor.w * c, anchor.h, anchor.theta)
    t1 = encode(g2, a2)
    assert t1.dl == pytest.approx(t0.dl, abs=1e-12)
    assert t1.dw == pytest.approx(t0.dw, abs=1e-12)


def test_batch_matches_scalar(rng):
    from conftest import random_boxes
    g = random_boxes(rng, 50)
    a = random_boxes(rng, 50)
    t = encode_batch(g, a)
    for i in range(50):
        assert np.allclose(t[i], encode(Box3D.from_array(g[i]), Box3D.from_array(a[i])), atol=0, rtol=0)
    dirs = direction_labels(g[:, 6], a[:, 6])
    back = decode_batch(t, a, dirs)
    assert np.allclose(back[:, :6], g[:, :6], atol=1e-9)
    assert np.all(np.abs(normalize_angle(back[:, 6] - g[:, 6])) < 1e-9)
