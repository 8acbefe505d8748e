"""Focal classification, smooth-L1 regression and direction losses with analytic gradients.

Every loss returns ``(value, gradient)``; gradients are taken with respect to
the first argument (probability, predicted target, or logits).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    alpha_a: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha_a <= 1.0:
            raise ValueError(f"alpha_a must lie in (0, 1], got {self.alpha_a}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.5
    gamma_w: float = 1.0
    lambda_dir: float = 0.2

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma_w, self.lambda_dir) < 0:
            raise ValueError("loss weights must be nonnegative")

    def scaled(self, c: float) -> "LossWeights":
        return LossWeights(self.alpha * c, self.beta * c, self.gamma_w * c, self.lambda_dir * c)


def _focal_terms(p, label, params):
    p = np.asarray(p, dtype=np.float64)
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    a, g = params.alpha_a, params.gamma
    q = 1.0 - pc
    if label == 1:
        value = -a * q ** g * np.log(pc)
        # d/dp of -a (1-p)^g ln p
        dq = g * q ** (g - 1.0) if g != 0 else 0.0
        grad = a * dq * np.log(pc) - a * q ** g / pc
    else:
        value = -(1.0 - a) * pc ** g * np.log(q)
        dp = g * pc ** (g - 1.0) if g != 0 else 0.0
        grad = -(1.0 - a) * (dp * np.log(q) - pc ** g / q)
    return value, np.where(inside, grad, 0.0)


def focal_loss(p, label, params: FocalParams = FocalParams()):
    """Focal loss for label 1 and its complement form for label 0.

    ``p`` is clamped to ``[1e-7, 1 - 1e-7]``; the gradient is zero where the
    clamp is active.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    value, grad = _focal_terms(p, label, params)
    if np.ndim(p) == 0:
        return float(value), float(grad)
    return value, grad


def huber(d, delta=1.0):
    d = np.asarray(d, dtype=np.float64)
    ad = np.abs(d)
    quad = ad <= delta
    value = np.where(quad, 0.5 * d * d / delta, ad - 0.5 * delta)
    grad = np.where(quad, d / delta, np.sign(d))
    return value, grad


def regression_loss(pred, target, delta=1.0):
    """Smooth-L1 summed over all target components; gradient w.r.t. ``pred``."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    pred = np.asarray(pred, dtype=np.float64)
    value, grad = huber(pred - np.asarray(target, dtype=np.float64), delta)
    return math.fsum(value.ravel()), grad


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def direction_loss(logits, label):
    """Two-class softmax cross-entropy; gradient is ``softmax - onehot``."""
    lg = np.asarray(logits, dtype=np.float64)
    single = lg.ndim == 1
    lg = lg.reshape(-1, 2)
    lab = np.asarray(label, dtype=np.int64).reshape(-1)
    logp = _log_softmax(lg)
    rows = np.arange(len(lg))
    terms = -logp[rows, lab]
    grad = np.exp(logp)
    grad[rows, lab] -= 1.0
    if single:
        return float(terms[0]), grad[0]
    return math.fsum(terms), grad


@dataclass
class LossReport:
    l1: float
    l2: float
    l3: float
    l_dir: float
    total: float
    n_norm: int
    grad_prob: np.ndarray
    grad_reg: np.ndarray
    grad_dir: np.ndarray


def _anchor_terms(sl, probs, is_pos, is_neg, reg_pred, reg_target, dir_logits, dir_labels, focal, delta):
    p = probs[sl]
    pos = is_pos[sl]
    neg = is_neg[sl]
    v1, g1 = _focal_terms(p, 1, focal)
    v0, g0 = _focal_terms(p, 0, focal)
    hv, hg = huber(reg_pred[sl] - reg_target[sl], delta)
    logp = _log_softmax(dir_logits[sl])
    rows = np.arange(len(p))
    lab = dir_labels[sl]
    dv = -logp[rows, lab]
    dg = np.exp(logp)
    dg[rows, lab] -= 1.0
    return (np.where(pos, v1, 0.0), np.where(neg, v0, 0.0), np.where(pos, hv.sum(axis=1), 0.0),
            np.where(pos, dv, 0.0), np.where(pos, g1, np.where(neg, g0, 0.0)), hg, dg)


def total_loss(probs, status, reg_pred, reg_target, dir_logits, dir_labels,
               weights: LossWeights = LossWeights(), focal: FocalParams = FocalParams(),
               delta=1.0, workers=1) -> LossReport:
    """Weighted sum of positive/negative focal, regression and direction terms.

    ``status`` uses the anchor-matching codes (1 positive, 0 negative, -1
    ignored). Every term is normalised by ``max(#positives, 1)``. Sums use
    :func:`math.fsum`, so the result is independent of ``workers``.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    n = len(probs)
    status = np.asarray(status).reshape(n)
    reg_pred = np.asarray(reg_pred, dtype=np.float64).reshape(n, -1)
    reg_target = np.asarray(reg_target, dtype=np.float64).reshape(n, -1)
    dir_logits = np.asarray(dir_logits, dtype=np.float64).reshape(n, 2)
    dir_labels = np.asarray(dir_labels, dtype=np.int64).reshape(n)
    is_pos = status == 1
    is_neg = status == 0
    n_pos = int(is_pos.sum())
    norm = max(n_pos, 1)

    args = (probs, is_pos, is_neg, reg_pred, reg_target, dir_logits, dir_labels, focal, delta)
    if workers > 1 and n > 0:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda s: _anchor_terms(s, *args), slices))
        terms = [np.concatenate([p[k] for p in parts]) for k in range(7)]
    else:
        terms = _anchor_terms(slice(0, n), *args)
    v_pos, v_neg, v_reg, v_dir, g_prob, g_reg, g_dir = terms

    l1 = math.fsum(v_pos) / norm
    l2 = math.fsum(v_neg) / norm
    l3 = math.fsum(v_reg) / norm
    l_dir = math.fsum(v_dir) / norm
    w = weights
    total = w.alpha * l1 + w.beta * l2 + w.gamma_w * l3 + w.lambda_dir * l_dir
    grad_prob = np.where(is_pos, w.alpha, w.beta) * g_prob / norm
    grad_reg = np.where(is_pos[:, None], w.gamma_w * g_reg / norm, 0.0)
    grad_dir = np.where(is_pos[:, None], w.lambda_dir * g_dir / norm, 0.0)
    return LossReport(l1, l2, l3, l_dir, total, norm, grad_prob, grad_reg, grad_dir)
