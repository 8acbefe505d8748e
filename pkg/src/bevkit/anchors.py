"""Per-class anchor grids and IoU-based anchor/ground-truth matching."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bevkit.boxes import as_box_array
from bevkit.geometry import iou_matrix

# (height, width, length, rotation in degrees), two rows per class
ANCHOR_TABLES = {
    "Car": ((1.6, 1.6, 4.0, 0.0), (1.6, 1.6, 1.6, 90.0)),
    "Pedestrian": ((1.7, 0.5, 0.7, 0.0), (1.7, 1.5, 0.7, 90.0)),
    "Cyclist": ((1.6, 0.7, 2.0, 0.0), (1.6, 0.7, 2.0, 90.0)),
}
DEFAULT_Z_CENTERS = {"Car": -1.0, "Pedestrian": -0.6, "Cyclist": -0.6}

POSITIVE = 1
NEGATIVE = 0
IGNORED = -1


def _cells(lo, hi, step):
    n = (hi - lo) / step
    n = int(round(n)) if abs(n - round(n)) < 1e-9 else int(math.ceil(n))
    if n <= 0:
        raise ValueError(f"empty extent [{lo}, {hi})")
    return lo + (np.arange(n) + 0.5) * step


def generate_anchor_grid(cls, bev_extent, stride, z_center=None, table=None) -> np.ndarray:
    """Tile the anchor rows of ``cls`` over a BEV grid.

    ``bev_extent`` is ``(x_min, x_max, y_min, y_max)``; ``stride`` is a scalar
    or an ``(sx, sy)`` pair. Returns an ``(nx * ny * rows, 7)`` array ordered
    x-major, then y, then table row.
    """
    rows = (table or ANCHOR_TABLES)[cls]
    sx, sy = (stride, stride) if np.ndim(stride) == 0 else stride
    if sx <= 0 or sy <= 0:
        raise ValueError("stride must be positive")
    z = DEFAULT_Z_CENTERS.get(cls, 0.0) if z_center is None else z_center
    xs = _cells(bev_extent[0], bev_extent[1], sx)
    ys = _cells(bev_extent[2], bev_extent[3], sy)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    out = np.empty((len(centers), len(rows), 7), dtype=np.float64)
    for r, (h, w, l, deg) in enumerate(rows):
        out[:, r, 0:2] = centers
        out[:, r, 2] = z
        out[:, r, 3:7] = (l, w, h, math.radians(deg))
    return out.reshape(-1, 7)


@dataclass
class AnchorSet:
    anchors: np.ndarray
    classes: np.ndarray
    status: np.ndarray
    gt_index: np.ndarray
    max_iou: np.ndarray
    forced: np.ndarray

    @property
    def positive(self):
        return np.flatnonzero(self.status == POSITIVE)

    @property
    def negative(self):
        return np.flatnonzero(self.status == NEGATIVE)

    @property
    def ignored(self):
        return np.flatnonzero(self.status == IGNORED)


def match_anchors(anchors, anchor_classes, gt_boxes, gt_classes, pos_thresh=0.60, neg_thresh=0.45,
                  backend=None) -> AnchorSet:
    """Label anchors positive / negative / ignored by rotated BEV IoU.

    An anchor is positive when its best same-class IoU is strictly above
    ``pos_thresh`` and negative when strictly below ``neg_thresh``. A ground
    truth left without any positive anchor claims its best overlapping anchor
    that is not already positive (lowest index on ties).
    """
    a = as_box_array(anchors)
    if len(a) == 0:
        raise ValueError("anchor set is empty")
    if not 0.0 <= neg_thresh < pos_thresh <= 1.0:
        raise ValueError(f"need 0 <= neg < pos <= 1, got neg={neg_thresh} pos={pos_thresh}")
    a_cls = np.broadcast_to(np.asarray(anchor_classes, dtype=object), (len(a),))
    g = as_box_array(gt_boxes)
    g_cls = np.broadcast_to(np.asarray(gt_classes, dtype=object), (len(g),))

    iou = np.zeros((len(a), len(g)), dtype=np.float64)
    for c in set(g_cls.tolist()):
        ai = np.flatnonzero(a_cls == c)
        gi = np.flatnonzero(g_cls == c)
        if len(ai) and len(gi):
            iou[np.ix_(ai, gi)] = iou_matrix(a[ai], g[gi], "bev", backend=backend)

    status = np.full(len(a), IGNORED, dtype=np.int8)
    gt_index = np.full(len(a), -1, dtype=np.int64)
    forced = np.zeros(len(a), dtype=bool)
    if len(g):
        best = iou.argmax(axis=1)
        max_iou = iou[np.arange(len(a)), best]
    else:
        best = np.zeros(len(a), dtype=np.int64)
        max_iou = np.zeros(len(a), dtype=np.float64)
    pos = max_iou > pos_thresh
    status[pos] = POSITIVE
    gt_index[pos] = best[pos]
    status[max_iou < neg_thresh] = NEGATIVE

    for j in range(len(g)):
        if np.any(gt_index == j):
            continue
        col = np.where(status == POSITIVE, -1.0, iou[:, j])
        k = int(col.argmax())
        if col[k] <= 0.0:
            continue
        status[k] = POSITIVE
        gt_index[k] = j
        forced[k] = True
    return AnchorSet(a, np.asarray(a_cls), status, gt_index, max_iou, forced)
