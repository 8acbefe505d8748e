import math

import numpy as np
import pytest

from bevkit.anchors import (IGNORED, NEGATIVE, POSITIVE, generate_anchor_grid, match_anchors)
from bevkit.geometry import iou_matrix, rotated_iou_bev
from bevkit import Box3D


def test_car_single_cell():
    a = generate_anchor_grid("Car", (0, 0.4, 0, 0.4), 0.4)
    assert a.shape == (2, 7)
    # stored as (l, w, h)
    assert a[0, 3:6].tolist() == [4.0, 1.6, 1.6]
    assert a[1, 3:6].tolist() == [1.6, 1.6, 1.6]
    assert a[0, 6] == 0.0 and a[1, 6] == pytest.approx(math.pi / 2)
    assert a[0, :3].tolist() == pytest.approx([0.2, 0.2, -1.0])


def test_cyclist_two_by_two():
    a = generate_anchor_grid("Cyclist", (0, 0.8, 0, 0.8), 0.4)
    assert len(a) == 8
    assert np.all(a[:, 3:6] == [2.0, 0.7, 1.6])


def test_pedestrian_second_width():
    a = generate_anchor_grid("Pedestrian", (0, 1, 0, 1), 1.0)
    assert a[1, 4] == 1.5 and a[0, 4] == 0.5


def test_default_extent_count():
    a = generate_anchor_grid("Car", (0.0, 70.4, -40.0, 40.0), 0.4)
    assert len(a) == 176 * 200 * 2 == 70400


def test_layout_order():
    a = generate_anchor_grid("Car", (0, 0.8, 0, 1.2), 0.4, z_center=0.5)
    assert a[0, :2].tolist() == pytest.approx([0.2, 0.2])
    assert a[2, :2].tolist() == pytest.approx([0.2, 0.6])
    assert a[6, :2].tolist() == pytest.approx([0.6, 0.2])
    assert np.all(a[:, 2] == 0.5)


def test_bad_stride():
    with pytest.raises(ValueError):
        generate_anchor_grid("Car", (0, 1, 0, 1), 0.0)


def test_match_examples():
    gt = Box3D(0, 0, 0, 4, 1.6, 1.6, 0)
    same = gt.as_array()
    far = Box3D(20, 0, 0, 4, 1.6, 1.6, 0).as_array()
    # shifted along l so that IoU = (4 - s) / (4 + s) = 0.5
    s = 4 / 3
    half = Box3D(s, 0, 0, 4, 1.6, 1.6, 0).as_array()
    assert rotated_iou_bev(gt, Box3D.from_array(half)) == pytest.approx(0.5)
    res = match_anchors([same, far, half], "Car", [gt.as_array()], ["Car"])
    assert res.status.tolist() == [POSITIVE, NEGATIVE, IGNORED]
    assert res.max_iou[0] == pytest.approx(1.0)
    assert res.gt_index[0] == 0 and not res.forced.any()


def test_force_match():
    gt = Box3D(0, 0, 0, 4, 1.6, 1.6, 0)
    weak = Box3D(1.5, 0, 0, 4, 1.6, 1.6, 0).as_array()
    weaker = Box3D(2.5, 0, 0, 4, 1.6, 1.6, 0).as_array()
    res = match_anchors([weaker, weak], "Car", [gt.as_array()], ["Car"])
    assert res.status.tolist() == [NEGATIVE, POSITIVE]
    assert res.forced.tolist() == [False, True]


def test_force_match_skips_disjoint():
    gt = Box3D(0, 0, 0, 4, 1.6, 1.6, 0)
    res = match_anchors([Box3D(30, 0, 0, 4, 1.6, 1.6, 0).as_array()], "Car", [gt.as_array()], ["Car"])
    assert res.status.tolist() == [NEGATIVE]


def test_classes_do_not_mix():
    gt = Box3D(0, 0, 0, 4, 1.6, 1.6, 0).as_array()
    res = match_anchors([gt, gt], ["Car", "Cyclist"], [gt], ["Car"])
    assert res.status.tolist() == [POSITIVE, NEGATIVE]


def test_match_errors():
    with pytest.raises(ValueError):
        match_anchors(np.zeros((0, 7)), "Car", [], [])
    a = generate_anchor_grid("Car", (0, 1, 0, 1), 1.0)
    with pytest.raises(ValueError):
        match_anchors(a, "Car", [], [], pos_thresh=0.4, neg_thresh=0.5)


def test_no_ground_truth_all_negative():
    a = generate_anchor_grid("Car", (0, 4, 0, 4), 0.4)
    res = match_anchors(a, "Car", np.zeros((0, 7)), [])
    assert np.all(res.status == NEGATIVE)


def test_random_scene_semantics(rng, backend):
    anchors = generate_anchor_grid("Car", (0, 20, -10, 10), 0.4)
    gts = np.column_stack([rng.uniform(1, 19, 12), rng.uniform(-9, 9, 12), np.full(12, -1.0),
                           rng.uniform(3.2, 4.8, 12), rng.uniform(1.4, 1.9, 12), np.full(12, 1.6),
                           rng.uniform(-np.pi, np.pi, 12)])
    res = match_anchors(anchors, "Car", gts, "Car", backend=backend)
    iou = iou_matrix(anchors, gts, "bev")
    best = iou.max(axis=1)
    assert len(res.positive) + len(res.negative) + len(res.ignored) == len(anchors)
    pos = res.positive[~res.forced[res.positive]]
    assert np.all(iou[pos, res.gt_index[pos]] > 0.6)
    assert np.all(best[res.negative] < 0.45)
    for j in range(len(gts)):
        if iou[:, j].max() > 0:
            assert np.any(res.gt_index == j)
