"""Desk-scale three-branch detector head with hand-written backward passes.

Feature maps are ``(H, W, C)`` float64 arrays. The graph is::

    r      = residual_block(x)
    att    = SA(x) * x + CA(x) * x
    fused  = r + att
    box2d  = FC_2d(roi_align(r))          # per roi
    raw    = FC_3d(roi_align(fused))
    deltas = FC_d(roi_align(x))
    refined = raw + deltas

Each layer has a forward function returning ``(out, cache)`` and a matching
``*_backward(cache, grad_out)``.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np


class StaleStateError(RuntimeError):
    """Parameters changed between forward and backward."""


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- residual block --------------------------------------------------------

def _im2col(x):
    H, W, C = x.shape
    pad = np.zeros((H + 2, W + 2, C))
    pad[1:-1, 1:-1] = x
    cols = np.empty((H, W, 3, 3, C))
    for dy in range(3):
        for dx in range(3):
            cols[:, :, dy, dx, :] = pad[dy:dy + H, dx:dx + W, :]
    return cols.reshape(H * W, 9 * C)


def _col2im(gcols, shape):
    H, W, C = shape
    g = gcols.reshape(H, W, 3, 3, C)
    pad = np.zeros((H + 2, W + 2, C))
    for dy in range(3):
        for dx in range(3):
            pad[dy:dy + H, dx:dx + W, :] += g[:, :, dy, dx, :]
    return pad[1:-1, 1:-1]


def residual_block(x, weight, bias, bn_scale, bn_shift):
    """``x + bn(relu(conv3x3(x) + bias))`` with zero padding.

    ``weight`` has shape ``(3, 3, C, C)`` (ky, kx, in, out).
    """
    H, W, C = x.shape
    if weight.shape != (3, 3, C, C):
        raise ValueError(f"residual weight must be (3, 3, {C}, {C}), got {weight.shape}")
    cols = _im2col(x)
    pre = cols @ weight.reshape(9 * C, C) + bias
    act = np.maximum(pre, 0.0)
    y = x + (act * bn_scale + bn_shift).reshape(H, W, C)
    return y, (x.shape, cols, pre, act, weight, bn_scale)


def residual_block_backward(cache, gy):
    shape, cols, pre, act, weight, bn_scale = cache
    C = shape[2]
    g = gy.reshape(-1, C)
    g_scale = (g * act).sum(axis=0)
    g_shift = g.sum(axis=0)
    g_pre = g * bn_scale * (pre > 0)
    g_w = (cols.T @ g_pre).reshape(weight.shape)
    g_b = g_pre.sum(axis=0)
    gx = gy + _col2im(g_pre @ weight.reshape(9 * C, C).T, shape)
    return gx, {"weight": g_w, "bias": g_b, "bn_scale": g_scale, "bn_shift": g_shift}


# -- attention -------------------------------------------------------------

def spatial_attention(x, w1, b1, w2, b2):
    """Per-pixel mask ``sigmoid(W2 relu(W1 x))`` of shape ``(H, W, 1)``."""
    H, W, C = x.shape
    if w1.shape[0] != C or w2.shape[0] != w1.shape[1] or w2.shape[1] != 1:
        raise ValueError(f"spatial attention weights {w1.shape}, {w2.shape} do not fit {C} channels")
    flat = x.reshape(-1, C)
    h = flat @ w1 + b1
    a = np.maximum(h, 0.0)
    m = sigmoid(a @ w2 + b2)
    return m.reshape(H, W, 1), (flat, h, a, m, w1, w2, x.shape)


def spatial_attention_backward(cache, gm):
    flat, h, a, m, w1, w2, shape = cache
    gz = gm.reshape(-1, 1) * m * (1.0 - m)
    g_w2 = a.T @ gz
    g_b2 = gz.sum(axis=0)
    gh = (gz @ w2.T) * (h > 0)
    g_w1 = flat.T @ gh
    g_b1 = gh.sum(axis=0)
    gx = (gh @ w1.T).reshape(shape)
    return gx, {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}


def channel_attention(x, w1, b1, w2, b2):
    """Per-channel weights ``sigmoid(W2 relu(W1 avgpool(x)))`` of shape ``(C,)``."""
    H, W, C = x.shape
    if w1.shape[0] != C or w2.shape != (w1.shape[1], C):
        raise ValueError(f"channel attention weights {w1.shape}, {w2.shape} do not fit {C} channels")
    pooled = x.reshape(-1, C).mean(axis=0)
    h = pooled @ w1 + b1
    a = np.maximum(h, 0.0)
    s = sigmoid(a @ w2 + b2)
    return s, (pooled, h, a, s, w1, w2, x.shape)


def channel_attention_backward(cache, gs):
    pooled, h, a, s, w1, w2, shape = cache
    gz = gs * s * (1.0 - s)
    g_w2 = np.outer(a, gz)
    gh = (w2 @ gz) * (h > 0)
    g_w1 = np.outer(pooled, gh)
    g_pooled = w1 @ gh
    gx = np.broadcast_to(g_pooled / (shape[0] * shape[1]), shape).copy()
    return gx, {"w1": g_w1, "b1": gh, "w2": g_w2, "b2": gz}


# -- roi align -------------------------------------------------------------

@dataclass(frozen=True)
class RoiSpec:
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        if not (0.0 <= self.left < self.right <= 1.0 and 0.0 <= self.top < self.bottom <= 1.0):
            raise ValueError(f"roi {self} must satisfy 0 <= left < right <= 1 and 0 <= top < bottom <= 1")


def _axis_weights(lo, hi, n_pix, out_size):
    """Sampling matrix ``(out_size, 2, n_pix)`` for one axis: two samples per bin."""
    span = (hi - lo) * n_pix
    start = lo * n_pix
    step = span / out_size
    w = np.zeros((out_size, 2, n_pix))
    for b in range(out_size):
        for s, frac in enumerate((0.25, 0.75)):
            # continuous coordinate -> pixel-centre index space, clamped at the edges
            u = min(max(start + (b + frac) * step - 0.5, 0.0), n_pix - 1.0)
            u0 = int(np.floor(u))
            u1 = min(u0 + 1, n_pix - 1)
            t = u - u0
            w[b, s, u0] += 1.0 - t
            w[b, s, u1] += t
    return w


def roi_matrix(shape, roi: RoiSpec, out_size):
    """Linear map ``(P*P, H*W)`` such that ``align = M @ x.reshape(H*W, C)``."""
    H, W = shape[:2]
    wy = _axis_weights(roi.top, roi.bottom, H, out_size).mean(axis=1)
    wx = _axis_weights(roi.left, roi.right, W, out_size).mean(axis=1)
    return np.einsum("ph,qw->pqhw", wy, wx).reshape(out_size * out_size, H * W)


def roi_align(x, roi: RoiSpec, out_size=2):
    """Average of a 2x2 grid of bilinear samples per output bin -> ``(P, P, C)``.

    ``roi`` is normalised to the feature map: ``left``/``right`` along the
    width, ``top``/``bottom`` along the height.
    """
    H, W, C = x.shape
    m = roi_matrix(x.shape, roi, out_size)
    return (m @ x.reshape(H * W, C)).reshape(out_size, out_size, C)


def roi_align_backward(shape, roi: RoiSpec, g):
    P = g.shape[0]
    m = roi_matrix(shape, roi, P)
    return (m.T @ g.reshape(P * P, -1)).reshape(shape)


# -- full network ----------------------------------------------------------

PARAM_SHAPES_DOC = """
res_w (3,3,C,C)  res_b (C)  res_scale (C)  res_shift (C)
sa_w1 (C,C/2)    sa_b1 (C/2) sa_w2 (C/2,1)  sa_b2 (1)
ca_w1 (C,C/r)    ca_b1 (C/r) ca_w2 (C/r,C)  ca_b2 (C)
fc2d_w (P*P*C,4) fc2d_b (4)
fc3d_w (P*P*C,8) fc3d_b (8)
fcd_w (P*P*C,8)  fcd_b (8)
"""

OUTPUT_DIMS = {"box2d": 4, "box3d_raw": 8, "deltas": 8}


def param_shapes(channels, roi_size=2, reduction=4):
    C, P = channels, roi_size
    if C % 2 or C % reduction:
        raise ValueError(f"channels={C} must be divisible by 2 and by reduction={reduction}")
    feat = P * P * C
    return {
        "res_w": (3, 3, C, C), "res_b": (C,), "res_scale": (C,), "res_shift": (C,),
        "sa_w1": (C, C // 2), "sa_b1": (C // 2,), "sa_w2": (C // 2, 1), "sa_b2": (1,),
        "ca_w1": (C, C // reduction), "ca_b1": (C // reduction,), "ca_w2": (C // reduction, C), "ca_b2": (C,),
        "fc2d_w": (feat, 4), "fc2d_b": (4,),
        "fc3d_w": (feat, 8), "fc3d_b": (8,),
        "fcd_w": (feat, 8), "fcd_b": (8,),
    }


def _fan_in(name, shape):
    if name == "res_w":
        return 9 * shape[2]
    if name.endswith(("_b", "_b1", "_b2")):
        return None
    return shape[0]


def init_params(channels, roi_size=2, reduction=4, seed=0):
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialisation from a seeded generator.

    Biases use the fan-in of their layer; batch-norm scale starts at 1 and
    shift at 0.
    """
    rng = np.random.default_rng(seed)
    shapes = param_shapes(channels, roi_size, reduction)
    params = {}
    fan = None
    for name, shape in shapes.items():
        if name == "res_scale":
            params[name] = np.ones(shape)
        elif name == "res_shift":
            params[name] = np.zeros(shape)
        else:
            f = _fan_in(name, shape)
            fan = f if f is not None else fan
            bound = 1.0 / np.sqrt(fan)
            params[name] = rng.uniform(-bound, bound, shape)
    return params


def zero_params(channels, roi_size=2, reduction=4):
    return {k: np.zeros(s) for k, s in param_shapes(channels, roi_size, reduction).items()}


@dataclass(frozen=True)
class AttentionToggles:
    spatial: bool = True
    channel: bool = True

    @classmethod
    def from_name(cls, name):
        table = {"none": (False, False), "sa": (True, False), "ca": (False, True), "both": (True, True)}
        try:
            return cls(*table[name.lower()])
        except KeyError:
            raise ValueError(f"attention mode must be one of {sorted(table)}, got {name!r}") from None


def _fingerprint(params):
    h = hashlib.blake2b(digest_size=16)
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.digest()


@dataclass
class ForwardState:
    params: dict
    fingerprint: bytes
    x: np.ndarray
    rois: tuple
    roi_size: int
    toggles: AttentionToggles
    res_cache: tuple
    sa_cache: tuple
    ca_cache: tuple
    mask: np.ndarray
    ch_weights: np.ndarray
    r: np.ndarray
    fused: np.ndarray
    feats: dict


def forward(x, params, rois, toggles=AttentionToggles(), roi_size=2):
    """Run the three-branch head.

    Returns ``(outputs, state)`` where ``outputs`` maps ``box2d`` ``(K, 4)``,
    ``box3d_raw``/``deltas``/``refined`` ``(K, 8)`` for ``K = len(rois)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"feature map must be (H, W, C), got shape {x.shape}")
    H, W, C = x.shape
    expected = param_shapes(C, roi_size, params["ca_w1"].shape[0] // max(params["ca_w1"].shape[1], 1))
    for k, s in expected.items():
        if params[k].shape != s:
            raise ValueError(f"parameter {k} has shape {params[k].shape}, expected {s}")
    rois = tuple(rois)

    r, res_cache = residual_block(x, params["res_w"], params["res_b"], params["res_scale"], params["res_shift"])
    if toggles.spatial:
        mask, sa_cache = spatial_attention(x, params["sa_w1"], params["sa_b1"], params["sa_w2"], params["sa_b2"])
    else:
        mask, sa_cache = np.ones((H, W, 1)), None
    if toggles.channel:
        cw, ca_cache = channel_attention(x, params["ca_w1"], params["ca_b1"], params["ca_w2"], params["ca_b2"])
    else:
        cw, ca_cache = np.ones(C), None
    fused = r + mask * x + cw * x

    feats = {name: np.stack([roi_align(src, roi, roi_size).ravel() for roi in rois]) if rois
             else np.zeros((0, roi_size * roi_size * C))
             for name, src in (("a", r), ("b", fused), ("c", x))}
    box2d = feats["a"] @ params["fc2d_w"] + params["fc2d_b"]
    raw = feats["b"] @ params["fc3d_w"] + params["fc3d_b"]
    deltas = feats["c"] @ params["fcd_w"] + params["fcd_b"]
    out = {"box2d": box2d, "box3d_raw": raw, "deltas": deltas, "refined": raw + deltas}
    state = ForwardState(params, _fingerprint(params), x, rois, roi_size, toggles, res_cache, sa_cache,
                         ca_cache, mask, cw, r, fused, feats)
    return out, state


def backward(state: ForwardState, grad_out):
    """Reverse-mode gradients for every parameter and the input map.

    ``grad_out`` maps any subset of the output names to gradient arrays.
    Returns a dict with one entry per parameter plus ``"x"``.
    """
    if _fingerprint(state.params) != state.fingerprint:
        raise StaleStateError("parameters were modified after forward(); rerun forward")
    p = state.params
    K = len(state.rois)
    zeros = {k: np.zeros((K, d)) for k, d in OUTPUT_DIMS.items()}
    g = {k: np.asarray(grad_out[k], dtype=np.float64).reshape(K, -1) if k in grad_out else zeros[k]
         for k in OUTPUT_DIMS}
    if "refined" in grad_out:
        gref = np.asarray(grad_out["refined"], dtype=np.float64).reshape(K, 8)
        g["box3d_raw"] = g["box3d_raw"] + gref
        g["deltas"] = g["deltas"] + gref

    grads = {k: np.zeros_like(v) for k, v in p.items()}
    branch_grads = {}
    for fc, src, go in (("fc2d", "a", g["box2d"]), ("fc3d", "b", g["box3d_raw"]), ("fcd", "c", g["deltas"])):
        grads[fc + "_w"] = state.feats[src].T @ go
        grads[fc + "_b"] = go.sum(axis=0)
        branch_grads[src] = go @ p[fc + "_w"].T

    shape = state.x.shape
    P = state.roi_size
    g_r = np.zeros(shape)
    g_fused = np.zeros(shape)
    gx = np.zeros(shape)
    for k, roi in enumerate(state.rois):
        g_r += roi_align_backward(shape, roi, branch_grads["a"][k].reshape(P, P, -1))
        g_fused += roi_align_backward(shape, roi, branch_grads["b"][k].reshape(P, P, -1))
        gx += roi_align_backward(shape, roi, branch_grads["c"][k].reshape(P, P, -1))

    x = state.x
    g_r += g_fused
    gx += g_fused * (state.mask + state.ch_weights)
    if state.toggles.spatial:
        g_mask = (g_fused * x).sum(axis=2, keepdims=True)
        gxs, gsa = spatial_attention_backward(state.sa_cache, g_mask)
        gx += gxs
        for k, v in gsa.items():
            grads["sa_" + k] = v
    if state.toggles.channel:
        g_cw = (g_fused * x).sum(axis=(0, 1))
        gxc, gca = channel_attention_backward(state.ca_cache, g_cw)
        gx += gxc
        for k, v in gca.items():
            grads["ca_" + k] = v
    gxr, gres = residual_block_backward(state.res_cache, g_r)
    gx += gxr
    grads["res_w"] = gres["weight"]
    grads["res_b"] = gres["bias"]
    grads["res_scale"] = gres["bn_scale"]
    grads["res_shift"] = gres["bn_shift"]
    grads["x"] = gx
    return grads


def relu_margin(state: ForwardState) -> float:
    """Smallest |pre-activation| over all ReLUs; small values mean a kink is near."""
    vals = [np.abs(state.res_cache[2]).min()]
    if state.sa_cache is not None:
        vals.append(np.abs(state.sa_cache[1]).min())
    if state.ca_cache is not None:
        vals.append(np.abs(state.ca_cache[1]).min())
    return float(min(vals))


# -- parameter serialisation -----------------------------------------------

_MAGIC = b"BVKP"
_VERSION = 1


def save_params(params) -> bytes:
    """Flat little-endian format.

    Header ``BVKP``, ``u32`` version, ``u32`` tensor count; then per tensor a
    ``u16`` name length, UTF-8 name, ``u32`` ndim, ``u32`` dims and row-major
    ``f64`` values.
    """
    out = [_MAGIC, struct.pack("<II", _VERSION, len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def load_params(data: bytes) -> dict:
    if data[:4] != _MAGIC:
        raise ValueError("not a parameter file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported parameter file version {version}")
    pos = 12
    params = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(data):
                raise ValueError(f"truncated data for tensor {name!r}")
            params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise ValueError(f"truncated parameter file: {exc}") from None
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes in parameter file")
    return params
