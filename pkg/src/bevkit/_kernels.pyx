# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the functions in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs

cnp.import_array()

cdef double CLIP_EPS = 1e-9
cdef double AREA_EPS = 1e-12
DEF MAXV = 16


cdef inline void _corners(const double[:] b, double* px, double* py) noexcept nogil:
    cdef double c = cos(b[6]), s = sin(b[6])
    cdef double hl = 0.5 * b[3], hw = 0.5 * b[4]
    cdef double lx[4]
    cdef double ly[4]
    cdef int k
    lx[0] = hl; ly[0] = hw
    lx[1] = -hl; ly[1] = hw
    lx[2] = -hl; ly[2] = -hw
    lx[3] = hl; ly[3] = -hw
    for k in range(4):
        px[k] = b[0] + c * lx[k] - s * ly[k]
        py[k] = b[1] + s * lx[k] + c * ly[k]


cdef double _bev_intersection(const double[:] a, const double[:] b) noexcept nogil:
    cdef double dx = a[0] - b[0], dy = a[1] - b[1]
    cdef double reach = 0.5 * (sqrt(a[3] * a[3] + a[4] * a[4]) + sqrt(b[3] * b[3] + b[4] * b[4]))
    if dx * dx + dy * dy >= reach * reach:
        return 0.0
    cdef double cx[4]
    cdef double cy[4]
    cdef double sx[MAXV]
    cdef double sy[MAXV]
    cdef double tx[MAXV]
    cdef double ty[MAXV]
    cdef int n = 4, m, i, j, jn
    cdef double ax, ay, ex, ey, sp, sq, t, area
    cdef bint p_in, q_in
    _corners(a, sx, sy)
    _corners(b, cx, cy)
    for i in range(4):
        if n == 0:
            break
        ax = cx[i]
        ay = cy[i]
        ex = cx[(i + 1) % 4] - ax
        ey = cy[(i + 1) % 4] - ay
        m = 0
        for j in range(n):
            jn = j + 1
            if jn == n:
                jn = 0
            sp = ex * (sy[j] - ay) - ey * (sx[j] - ax)
            sq = ex * (sy[jn] - ay) - ey * (sx[jn] - ax)
            p_in = sp >= -CLIP_EPS
            q_in = sq >= -CLIP_EPS
            if p_in:
                tx[m] = sx[j]
                ty[m] = sy[j]
                m += 1
            if p_in != q_in:
                t = sp / (sp - sq)
                tx[m] = sx[j] + t * (sx[jn] - sx[j])
                ty[m] = sy[j] + t * (sy[jn] - sy[j])
                m += 1
        n = m
        for j in range(n):
            sx[j] = tx[j]
            sy[j] = ty[j]
    if n < 3:
        return 0.0
    area = 0.0
    for j in range(n):
        jn = j + 1
        if jn == n:
            jn = 0
        area += sx[j] * sy[jn] - sx[jn] * sy[j]
    area *= 0.5
    return area if area > AREA_EPS else 0.0


cdef double _pair_iou(const double[:] a, const double[:] b, int kind) noexcept nogil:
    cdef double zo, inter, va, vb, iou
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
    if iou < 0.0:
        return 0.0
    if iou > 1.0:
        return 1.0
    return iou


def pair_iou(a, b, int kind):
    cdef double[:] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:] bv = np.ascontiguousarray(b, dtype=np.float64)
    return _pair_iou(av, bv, kind)


def iou_matrix(boxes_a, boxes_b, int kind):
    cdef double[:, ::1] a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 7)
    cdef double[:, ::1] b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 7)
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(a.shape[0]):
            for j in range(b.shape[0]):
                o[i, j] = _pair_iou(a[i], b[j], kind)
    return out


def nms(boxes, order, double thresh, int kind):
    cdef double[:, ::1] bx = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 7)
    cdef long long[::1] od = np.ascontiguousarray(order, dtype=np.int64)
    kept = np.empty(od.shape[0], dtype=np.int64)
    cdef long long[::1] kv = kept
    cdef Py_ssize_t n_kept = 0, i, k
    cdef long long idx
    cdef bint ok
    with nogil:
        for i in range(od.shape[0]):
            idx = od[i]
            ok = True
            for k in range(n_kept):
                if _pair_iou(bx[kv[k]], bx[idx], kind) > thresh:
                    ok = False
                    break
            if ok:
                kv[n_kept] = idx
                n_kept += 1
    return kept[:n_kept].copy()


def voxel_assign(keys, long long max_points, long long max_voxels):
    cdef long long[::1] kv = np.ascontiguousarray(keys, dtype=np.int64)
    cdef Py_ssize_t n = kv.shape[0], i
    voxel_of_point = np.full(n, -1, dtype=np.int64)
    slot_of_point = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] vp = voxel_of_point
    cdef long long[::1] sp = slot_of_point
    if n == 0:
        return voxel_of_point, slot_of_point, np.zeros(0, dtype=np.int64)
    cdef long long kmax = -1
    for i in range(n):
        if kv[i] > kmax:
            kmax = kv[i]
    if kmax < 0:
        return voxel_of_point, slot_of_point, np.zeros(0, dtype=np.int64)
    # dense key -> voxel table; -1 = unseen, -2 = seen after the voxel cap
    table = np.full(kmax + 1, -1, dtype=np.int64)
    cdef long long[::1] tv = table
    counts = np.zeros(max(max_voxels, 1), dtype=np.int64)
    cdef long long[::1] cv = counts
    vkeys = np.empty(max(min(n, max_voxels), 1), dtype=np.int64)
    cdef long long[::1] vk = vkeys
    cdef long long n_vox = 0, key, v
    with nogil:
        for i in range(n):
            key = kv[i]
            if key < 0:
                continue
            v = tv[key]
            if v == -1:
                if n_vox < max_voxels:
                    v = n_vox
                    tv[key] = v
                    vk[v] = key
                    n_vox += 1
                else:
                    tv[key] = -2
                    continue
            elif v == -2:
                continue
            if cv[v] < max_points:
                vp[i] = v
                sp[i] = cv[v]
            cv[v] += 1
    return voxel_of_point, slot_of_point, vkeys[:n_vox].copy()
