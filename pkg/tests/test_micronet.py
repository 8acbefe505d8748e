import numpy as np
import pytest

from bevkit import micronet as mn
from oracles import channel_attention_loop, residual_block_loop, roi_align_dense, spatial_attention_loop

ROIS = [mn.RoiSpec(0.0, 0.0, 1.0, 1.0), mn.RoiSpec(0.1, 0.25, 0.6, 0.9)]


def smooth_map(rng, H, W, C, max_freq=0.1):
    i, j = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    out = np.zeros((H, W, C))
    for c in range(C):
        for _ in range(3):
            fy, fx = rng.uniform(-max_freq, max_freq, 2)
            out[:, :, c] += np.cos(fy * i + fx * j + rng.uniform(0, 2 * np.pi)) / 3
    return out


def test_spatial_attention_zero_weights():
    x = np.random.default_rng(0).normal(size=(5, 7, 6))
    m, _ = mn.spatial_attention(x, np.zeros((6, 3)), np.zeros(3), np.zeros((3, 1)), np.zeros(1))
    assert m.shape == (5, 7, 1) and np.all(m == 0.5)


def test_spatial_attention_loop(rng):
    x = rng.normal(size=(8, 8, 4))
    p = mn.init_params(4, seed=1)
    m, _ = mn.spatial_attention(x, p["sa_w1"], p["sa_b1"], p["sa_w2"], p["sa_b2"])
    ref = spatial_attention_loop(x, p["sa_w1"], p["sa_b1"], p["sa_w2"], p["sa_b2"])
    assert np.max(np.abs(m - ref)) < 1e-14
    assert np.all((m > 0) & (m < 1))


def test_channel_attention_zero_and_constant():
    x = np.ones((4, 4, 8)) * np.arange(8)
    w, cache = mn.channel_attention(x, np.zeros((8, 2)), np.zeros(2), np.zeros((2, 8)), np.zeros(8))
    assert np.all(w == 0.5)
    assert np.array_equal(cache[0], np.arange(8.0))


def test_channel_attention_loop(rng):
    x = rng.normal(size=(8, 8, 8))
    p = mn.init_params(8, reduction=2, seed=2)
    w, _ = mn.channel_attention(x, p["ca_w1"], p["ca_b1"], p["ca_w2"], p["ca_b2"])
    ref = channel_attention_loop(x, p["ca_w1"], p["ca_b1"], p["ca_w2"], p["ca_b2"])
    assert np.max(np.abs(w.ravel() - ref)) < 1e-14


def test_residual_zero_weights_identity(rng):
    x = rng.normal(size=(16, 16, 8))
    y, _ = mn.residual_block(x, np.zeros((3, 3, 8, 8)), np.zeros(8), np.ones(8), np.zeros(8))
    assert y.shape == x.shape and np.array_equal(y, x)


def test_residual_loop(rng):
    x = rng.normal(size=(6, 5, 4))
    p = mn.init_params(4, seed=3)
    scale, shift = rng.uniform(0.5, 1.5, 4), rng.uniform(-0.2, 0.2, 4)
    y, _ = mn.residual_block(x, p["res_w"], p["res_b"], scale, shift)
    ref = residual_block_loop(x, p["res_w"], p["res_b"], scale, shift)
    assert np.max(np.abs(y - ref)) < 1e-13


def test_roi_constant_map():
    x = np.full((7, 9, 3), 2.5)
    for roi in ROIS:
        for P in (1, 2, 3):
            assert np.allclose(mn.roi_align(x, roi, P), 2.5, atol=1e-15)


def test_roi_two_pixel_midpoint():
    x = np.array([[[0.0], [1.0]]])
    assert mn.roi_align(x, mn.RoiSpec(0, 0, 1, 1), 1)[0, 0, 0] == pytest.approx(0.5, abs=1e-15)


def test_roi_dense_oracle(rng):
    for _ in range(10):
        x = smooth_map(rng, 16, 16, 3)
        lo = rng.uniform(0, 0.5, 2)
        hi = lo + rng.uniform(0.2, 1 - lo)
        roi = mn.RoiSpec(lo[0], lo[1], hi[0], hi[1])
        P = int(rng.integers(1, 5))
        ref = roi_align_dense(x, (roi.left, roi.top, roi.right, roi.bottom), P, n=40)
        assert np.max(np.abs(mn.roi_align(x, roi, P) - ref)) < 2e-2


def test_roi_linear(rng):
    x, y = rng.normal(size=(2, 9, 11, 4))
    a, b = 1.7, -0.4
    for roi in ROIS:
        lhs = mn.roi_align(a * x + b * y, roi, 3)
        rhs = a * mn.roi_align(x, roi, 3) + b * mn.roi_align(y, roi, 3)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_roi_backward_is_adjoint(rng):
    x = rng.normal(size=(6, 8, 2))
    g = rng.normal(size=(3, 3, 2))
    roi = ROIS[1]
    lhs = np.sum(mn.roi_align(x, roi, 3) * g)
    rhs = np.sum(x * mn.roi_align_backward(x.shape, roi, g))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_roi_validation():
    with pytest.raises(ValueError):
        mn.RoiSpec(0.5, 0.0, 0.4, 1.0)
    with pytest.raises(ValueError):
        mn.RoiSpec(0.0, 0.0, 1.2, 1.0)


def test_forward_shapes_and_refined(rng):
    x = rng.normal(size=(8, 8, 4))
    p = mn.init_params(4, seed=0)
    out, _ = mn.forward(x, p, ROIS)
    assert out["box2d"].shape == (2, 4) and out["box3d_raw"].shape == (2, 8)
    assert np.array_equal(out["refined"], out["box3d_raw"] + out["deltas"])
    p["fcd_w"][:] = 0
    p["fcd_b"][:] = 0
    out, _ = mn.forward(x, p, ROIS)
    assert np.array_equal(out["refined"], out["box3d_raw"])


def test_forward_zero_params(rng):
    x = rng.normal(size=(8, 8, 4))
    out, state = mn.forward(x, mn.zero_params(4), ROIS)
    assert np.all(state.mask == 0.5) and np.all(state.ch_weights == 0.5)
    for v in out.values():
        assert np.all(v == 0)


def test_forward_deterministic():
    x = np.random.default_rng(8).normal(size=(8, 8, 4))
    p = mn.init_params(4, seed=8)
    a, _ = mn.forward(x, p, ROIS)
    b, _ = mn.forward(x, p, ROIS)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_forward_shape_mismatch(rng):
    p = mn.init_params(4)
    with pytest.raises(ValueError):
        mn.forward(rng.normal(size=(8, 8, 8)), p, ROIS)
    with pytest.raises(ValueError):
        mn.param_shapes(6, reduction=4)


def test_backward_zero_gradient(rng):
    x = rng.normal(size=(8, 8, 4))
    out, state = mn.forward(x, mn.init_params(4), ROIS)
    grads = mn.backward(state, {k: np.zeros_like(v) for k, v in out.items()})
    assert all(not np.any(g) for g in grads.values())


def test_backward_stale_state(rng):
    p = mn.init_params(4)
    out, state = mn.forward(rng.normal(size=(8, 8, 4)), p, ROIS)
    p["sa_w1"][0, 0] += 1.0
    with pytest.raises(mn.StaleStateError):
        mn.backward(state, {"box2d": np.ones((2, 4))})


def test_spatial_relu_gating(rng):
    x = rng.normal(size=(6, 6, 4))
    p = mn.init_params(4, seed=4)
    m, cache = mn.spatial_attention(x, p["sa_w1"], p["sa_b1"], p["sa_w2"], p["sa_b2"])
    gx, gp = mn.spatial_attention_backward(cache, np.ones_like(m))
    pre = x.reshape(-1, 4) @ p["sa_w1"] + p["sa_b1"]
    dead = (pre < 0).reshape(6, 6, 2)
    # hidden units with negative input pass no gradient into their bias
    col = dead.reshape(-1, 2).all(axis=0)
    assert np.all(gp["b1"][col] == 0)
    only_dead = dead.all(axis=2)
    assert np.all(gx[only_dead] == 0)


@pytest.mark.parametrize("mode", ["none", "sa", "ca", "both"])
def test_toggle_modes_run(mode, rng):
    x = rng.normal(size=(8, 8, 4))
    out, _ = mn.forward(x, mn.init_params(4), ROIS, mn.AttentionToggles.from_name(mode))
    assert all(np.all(np.isfinite(v)) for v in out.values())


def test_toggle_bad_name():
    with pytest.raises(ValueError):
        mn.AttentionToggles.from_name("all")


def test_serialisation_roundtrip(tmp_path):
    p = mn.init_params(8, seed=42)
    data = mn.save_params(p)
    assert data[:4] == b"BVKP"
    q = mn.load_params(data)
    assert p.keys() == q.keys()
    for k in p:
        assert q[k].shape == p[k].shape and q[k].tobytes() == p[k].tobytes()
    with pytest.raises(ValueError):
        mn.load_params(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        mn.load_params(data[:-3])
