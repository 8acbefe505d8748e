"""Rotated BEV / 3D IoU and greedy non-maximum suppression."""
import math

import numpy as np

from bevkit._backend import get_kernels
from bevkit.boxes import Box3D, as_box_array

IOU_KINDS = {"bev": 0, "3d": 1}


def _kind_code(kind):
    try:
        return IOU_KINDS[str(kind).lower()]
    except KeyError:
        raise ValueError(f"iou kind must be one of {sorted(IOU_KINDS)}, got {kind!r}") from None


def bev_corners(box: Box3D) -> np.ndarray:
    """Corners of the BEV rectangle as a ``(4, 2)`` array.

    Counter-clockwise, starting from the local ``(+l/2, +w/2)`` corner.
    """
    c, s = math.cos(box.theta), math.sin(box.theta)
    local = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64) * [box.l / 2, box.w / 2]
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + [box.x, box.y]


def polygon_area(poly) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    p = np.asarray(poly, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def rotated_iou_bev(a: Box3D, b: Box3D, backend=None) -> float:
    return float(get_kernels(backend).pair_iou(a.as_array(), b.as_array(), 0))


def iou_3d(a: Box3D, b: Box3D, backend=None) -> float:
    return float(get_kernels(backend).pair_iou(a.as_array(), b.as_array(), 1))


def iou_matrix(boxes_a, boxes_b, kind="bev", backend=None) -> np.ndarray:
    """Pairwise IoU between two box collections, shape ``(len(a), len(b))``."""
    a = as_box_array(boxes_a)
    b = as_box_array(boxes_b)
    return get_kernels(backend).iou_matrix(a, b, _kind_code(kind))


def nms(boxes, scores, iou_thresh=0.5, iou_kind="bev", backend=None) -> np.ndarray:
    """Greedy NMS.

    Boxes are visited by descending score (lower index first on ties). A box is
    suppressed when its IoU with an already kept box is strictly greater than
    ``iou_thresh``. Returns kept indices in keep order.
    """
    bx = as_box_array(boxes)
    sc = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(bx) != len(sc):
        raise ValueError(f"got {len(bx)} boxes but {len(sc)} scores")
    if not 0.0 <= iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must lie in [0, 1], got {iou_thresh}")
    order = np.lexsort((np.arange(len(sc)), -sc))
    return get_kernels(backend).nms(bx, order, float(iou_thresh), _kind_code(iou_kind))
