"""Central finite-difference checks for every analytic gradient in the package."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bevkit import losses, micronet

STEP = 1e-6
LOSS_TOL = 1e-5
NETWORK_TOL = 1e-4
# denominator floor: below it the step-1e-6 roundoff (~1e-9 absolute) dominates
REL_FLOOR = 1e-4


def relative_error(analytic, numeric, floor=REL_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(f, arr, step=STEP, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (perturbed in place)."""
    out = np.zeros(arr.size)
    flat = arr.reshape(-1)
    idx = range(arr.size) if indices is None else indices
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(arr.shape)


@dataclass
class CheckResult:
    suite: str
    name: str
    max_error: float
    tolerance: float
    points: int

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


@dataclass
class GradcheckReport:
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def max_error(self, suite) -> float:
        return max((r.max_error for r in self.results if r.suite == suite), default=0.0)

    def format(self) -> str:
        lines = [f"{'suite':<9}{'check':<22}{'points':>7}{'max rel err':>14}{'tol':>9}  status"]
        for r in self.results:
            lines.append(f"{r.suite:<9}{r.name:<22}{r.points:>7}{r.max_error:>14.3e}{r.tolerance:>9.0e}  "
                         f"{'ok' if r.passed else 'FAIL'}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}, max rel err {self.max_error('loss'):.3e} (losses, tol {LOSS_TOL:.0e}), "
                     f"{self.max_error('network'):.3e} (network, tol {NETWORK_TOL:.0e})")
        return "\n".join(lines) + "\n"


def _maybe_corrupt(g, corrupt):
    return np.asarray(g) * (1.0 + 1e-3) if corrupt else g


# -- loss suite ------------------------------------------------------------

def check_losses(seed=0, points=20, corrupt=False) -> list:
    rng = np.random.default_rng(seed)
    out = []
    focal = losses.FocalParams(0.25, 2.0)

    for label in (1, 0):
        worst = 0.0
        for _ in range(points):
            p = np.array([rng.uniform(0.02, 0.98)])
            params = losses.FocalParams(rng.uniform(0.1, 0.9), rng.uniform(0.0, 4.0))
            _, g = losses.focal_loss(p, label, params)
            n = numeric_grad(lambda: float(losses.focal_loss(p, label, params)[0][0]), p)
            worst = max(worst, relative_error(_maybe_corrupt(g, corrupt), n).max())
        out.append(CheckResult("loss", f"focal(label={label})", float(worst), LOSS_TOL, points))

    worst = 0.0
    for _ in range(points):
        delta = rng.uniform(0.5, 2.0)
        target = rng.normal(size=8)
        d = rng.uniform(-3, 3, 8)
        # stay clear of the |d| = delta kink
        d = np.where(np.abs(np.abs(d) - delta) < 1e-3, d + 0.01, d)
        pred = target + d
        _, g = losses.regression_loss(pred, target, delta)
        n = numeric_grad(lambda: losses.regression_loss(pred, target, delta)[0], pred)
        worst = max(worst, relative_error(_maybe_corrupt(g, corrupt), n).max())
    out.append(CheckResult("loss", "huber regression", float(worst), LOSS_TOL, points))

    worst = 0.0
    for _ in range(points):
        logits = rng.normal(scale=3.0, size=2)
        label = int(rng.integers(2))
        _, g = losses.direction_loss(logits, label)
        n = numeric_grad(lambda: losses.direction_loss(logits, label)[0], logits)
        worst = max(worst, relative_error(_maybe_corrupt(g, corrupt), n).max())
    out.append(CheckResult("loss", "direction softmax", float(worst), LOSS_TOL, points))

    worst = 0.0
    for _ in range(points):
        n_anchor = 12
        probs = rng.uniform(0.02, 0.98, n_anchor)
        status = rng.integers(-1, 2, n_anchor)
        reg_t = rng.normal(size=(n_anchor, 8))
        d = rng.uniform(-2, 2, (n_anchor, 8))
        d = np.where(np.abs(np.abs(d) - 1.0) < 1e-3, d + 0.01, d)
        reg_p = reg_t + d
        logits = rng.normal(size=(n_anchor, 2))
        labels = rng.integers(0, 2, n_anchor)
        w = losses.LossWeights(*rng.uniform(0.1, 1.5, 4))

        def f():
            return losses.total_loss(probs, status, reg_p, reg_t, logits, labels, w, focal).total

        rep = losses.total_loss(probs, status, reg_p, reg_t, logits, labels, w, focal)
        for arr, g in ((probs, rep.grad_prob), (reg_p, rep.grad_reg), (logits, rep.grad_dir)):
            worst = max(worst, relative_error(_maybe_corrupt(g, corrupt), numeric_grad(f, arr)).max())
    out.append(CheckResult("loss", "total loss", float(worst), LOSS_TOL, points))
    return out


# -- network suite ---------------------------------------------------------

MIN_RELU_MARGIN = 1e-4


def _layer_check(fwd, bwd, inputs, rng, corrupt):
    """Check ``bwd`` against differences of ``sum(G * fwd(*inputs))`` for each input array."""
    out0 = fwd(*inputs)[0]
    G = rng.normal(size=np.shape(out0))
    _, cache = fwd(*inputs)
    grads = bwd(cache, G)
    f = lambda: float(np.sum(G * fwd(*inputs)[0]))
    worst = 0.0
    for arr, g in zip(inputs, grads):
        worst = max(worst, relative_error(_maybe_corrupt(g, corrupt), numeric_grad(f, arr)).max())
    return worst


def _random_params(C, rng, reduction, roi_size=2):
    p = micronet.init_params(C, roi_size, reduction, seed=int(rng.integers(1 << 31)))
    p["res_scale"] = rng.uniform(0.5, 1.5, C)
    p["res_shift"] = rng.uniform(-0.2, 0.2, C)
    return p


def check_network(seed=0, points=20, corrupt=False, size=(8, 8, 4), reduction=4) -> list:
    rng = np.random.default_rng(seed)
    H, W, C = size
    out = []

    def sample_points(fn):
        worst, done = 0.0, 0
        while done < points:
            val = fn()
            if val is None:
                continue
            worst = max(worst, val)
            done += 1
        return float(worst)

    def sa():
        x = rng.normal(size=size)
        p = _random_params(C, rng, reduction)
        h = x.reshape(-1, C) @ p["sa_w1"] + p["sa_b1"]
        if np.abs(h).min() < MIN_RELU_MARGIN:
            return None

        def bwd(cache, g):
            gx, gp = micronet.spatial_attention_backward(cache, g)
            return gx, gp["w1"], gp["b1"], gp["w2"], gp["b2"]
        return _layer_check(micronet.spatial_attention, bwd,
                            [x, p["sa_w1"], p["sa_b1"], p["sa_w2"], p["sa_b2"]], rng, corrupt)

    def ca():
        x = rng.normal(size=size)
        p = _random_params(C, rng, reduction)
        h = x.reshape(-1, C).mean(axis=0) @ p["ca_w1"] + p["ca_b1"]
        if np.abs(h).min() < MIN_RELU_MARGIN:
            return None

        def bwd(cache, g):
            gx, gp = micronet.channel_attention_backward(cache, g)
            return gx, gp["w1"], gp["b1"], gp["w2"], gp["b2"]
        return _layer_check(micronet.channel_attention, bwd,
                            [x, p["ca_w1"], p["ca_b1"], p["ca_w2"], p["ca_b2"]], rng, corrupt)

    def res():
        x = rng.normal(size=size)
        p = _random_params(C, rng, reduction)
        _, cache = micronet.residual_block(x, p["res_w"], p["res_b"], p["res_scale"], p["res_shift"])
        if np.abs(cache[2]).min() < MIN_RELU_MARGIN:
            return None

        def bwd(cache, g):
            gx, gp = micronet.residual_block_backward(cache, g)
            return gx, gp["weight"], gp["bias"], gp["bn_scale"], gp["bn_shift"]
        return _layer_check(micronet.residual_block, bwd,
                            [x, p["res_w"], p["res_b"], p["res_scale"], p["res_shift"]], rng, corrupt)

    def roi():
        x = rng.normal(size=size)
        lo = rng.uniform(0, 0.6, 2)
        hi = lo + rng.uniform(0.1, 1.0 - lo)
        spec = micronet.RoiSpec(lo[0], lo[1], hi[0], hi[1])
        P = int(rng.integers(1, 4))

        def fwd(x):
            return micronet.roi_align(x, spec, P), None

        def bwd(cache, g):
            return (micronet.roi_align_backward(x.shape, spec, g),)
        return _layer_check(fwd, bwd, [x], rng, corrupt)

    def full():
        x = rng.normal(size=size)
        p = _random_params(C, rng, reduction)
        rois = [micronet.RoiSpec(*rng.uniform(0, 0.4, 2), *rng.uniform(0.5, 1.0, 2)) for _ in range(2)]
        outs, state = micronet.forward(x, p, rois)
        if micronet.relu_margin(state) < MIN_RELU_MARGIN:
            return None
        G = {k: rng.normal(size=v.shape) for k, v in outs.items()}
        grads = micronet.backward(state, G)

        def f():
            o, _ = micronet.forward(x, p, rois)
            return float(sum(np.sum(G[k] * o[k]) for k in G))
        worst = 0.0
        for name in list(p) + ["x"]:
            arr = x if name == "x" else p[name]
            worst = max(worst, relative_error(_maybe_corrupt(grads[name], corrupt), numeric_grad(f, arr)).max())
        return worst

    for name, fn in (("spatial attention", sa), ("channel attention", ca), ("residual block", res),
                     ("roi align", roi), ("full graph", full)):
        out.append(CheckResult("network", name, sample_points(fn), NETWORK_TOL, points))
    return out


def run_gradcheck(seed=0, points=20, corrupt=False) -> GradcheckReport:
    return GradcheckReport(check_losses(seed, points, corrupt) + check_network(seed, points, corrupt))
