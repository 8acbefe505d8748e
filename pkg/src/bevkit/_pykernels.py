"""Pure-Python kernels; the fallback when ``bevkit._kernels`` is not compiled.

Every function here has a twin with the same signature in ``_kernels.pyx``.
``kind`` is 0 for BEV IoU and 1 for 3D IoU.
"""
import math

import numpy as np

CLIP_EPS = 1e-9
AREA_EPS = 1e-12


def box_corners(x, y, l, w, theta):
    c = math.cos(theta)
    s = math.sin(theta)
    hl = 0.5 * l
    hw = 0.5 * w
    out = []
    for px, py in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((x + c * px - s * py, y + s * px + c * py))
    return out


def polygon_area(poly):
    n = len(poly)
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def clip_polygon(subject, clipper):
    """Sutherland-Hodgman clip of ``subject`` by the CCW convex ``clipper``."""
    out = subject
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex = bx - ax
        ey = by - ay
        inp = out
        out = []
        m = len(inp)
        for j in range(m):
            px, py = inp[j]
            qx, qy = inp[(j + 1) % m]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            p_in = sp >= -CLIP_EPS
            q_in = sq >= -CLIP_EPS
            if p_in:
                out.append((px, py))
            if p_in != q_in:
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def _bev_intersection(a, b):
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    reach = 0.5 * (math.hypot(a[3], a[4]) + math.hypot(b[3], b[4]))
    if dx * dx + dy * dy >= reach * reach:
        return 0.0
    pa = box_corners(a[0], a[1], a[3], a[4], a[6])
    pb = box_corners(b[0], b[1], b[3], b[4], b[6])
    inter = clip_polygon(pa, pb)
    if len(inter) < 3:
        return 0.0
    area = polygon_area(inter)
    return area if area > AREA_EPS else 0.0


def pair_iou(a, b, kind):
    if kind == 1:
        zo = min(a[2] + 0.5 * a[5], b[2] + 0.5 * b[5]) - max(a[2] - 0.5 * a[5], b[2] - 0.5 * b[5])
        if zo <= 0.0:
            return 0.0
        inter = _bev_intersection(a, b) * zo
        va = a[3] * a[4] * a[5]
        vb = b[3] * b[4] * b[5]
    else:
        inter = _bev_intersection(a, b)
        va = a[3] * a[4]
        vb = b[3] * b[4]
    if inter <= 0.0:
        return 0.0
    iou = inter / (va + vb - inter)
    return min(max(iou, 0.0), 1.0)


def iou_matrix(boxes_a, boxes_b, kind):
    a = np.asarray(boxes_a, dtype=np.float64).tolist()
    b = np.asarray(boxes_b, dtype=np.float64).tolist()
    out = np.zeros((len(a), len(b)), dtype=np.float64)
    for i, ba in enumerate(a):
        for j, bb in enumerate(b):
            out[i, j] = pair_iou(ba, bb, kind)
    return out


def nms(boxes, order, thresh, kind):
    """Greedy suppression visiting ``order``; returns kept indices in keep order."""
    rows = np.asarray(boxes, dtype=np.float64).tolist()
    kept = []
    for idx in np.asarray(order, dtype=np.int64).tolist():
        cand = rows[idx]
        if all(pair_iou(rows[k], cand, kind) <= thresh for k in kept):
            kept.append(idx)
    return np.asarray(kept, dtype=np.int64)


def voxel_assign(keys, max_points, max_voxels):
    """Group points by linear cell key (-1 = out of range).

    Returns ``(voxel_of_point, slot_of_point, voxel_keys)``; dropped points get
    voxel -1. Cells are numbered by first occurrence and points keep file order.
    """
    keys = np.asarray(keys, dtype=np.int64)
    n = keys.shape[0]
    voxel_of_point = np.full(n, -1, dtype=np.int64)
    slot_of_point = np.full(n, -1, dtype=np.int64)
    valid = np.flatnonzero(keys >= 0)
    if valid.size == 0:
        return voxel_of_point, slot_of_point, np.zeros(0, dtype=np.int64)
    vkeys = keys[valid]
    uniq, first, inverse = np.unique(vkeys, return_index=True, return_inverse=True)
    # renumber cells by first occurrence
    rank = np.empty(uniq.size, dtype=np.int64)
    by_first = np.argsort(first, kind="stable")
    rank[by_first] = np.arange(uniq.size)
    vid = rank[inverse.reshape(-1)]
    # slot = running count of earlier points in the same cell
    order = np.lexsort((valid, vid))
    sorted_vid = vid[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_vid)) + 1]
    counts = np.diff(np.r_[starts, sorted_vid.size])
    slot_sorted = np.arange(sorted_vid.size) - np.repeat(starts, counts)
    slot = np.empty_like(slot_sorted)
    slot[order] = slot_sorted
    keep = (vid < max_voxels) & (slot < max_points)
    voxel_of_point[valid[keep]] = vid[keep]
    slot_of_point[valid[keep]] = slot[keep]
    voxel_keys = uniq[by_first][:max_voxels]
    return voxel_of_point, slot_of_point, voxel_keys
