"""Anchor-relative regression targets and their inverse.

A target has eight components ``(dx, dy, dzb, dzt, dl, dw, dzeta, deta)``:
diagonal-normalised centre offsets, bottom/top face offsets, log size ratios
and the ``(|sin|, cos)`` pair of the yaw difference. The sign of the yaw
difference that ``|sin|`` discards is carried by a separate direction label.
"""
from __future__ import annotations

import enum
from typing import NamedTuple

import numpy as np

from bevkit.boxes import Box3D, as_box_array, normalize_angle

TARGET_DIM = 8


class DirectionLabel(enum.IntEnum):
    FORWARD = 0
    FLIPPED = 1


class RegressionTarget(NamedTuple):
    dx: float
    dy: float
    dzb: float
    dzt: float
    dl: float
    dw: float
    dzeta: float
    deta: float


class DegenerateBoxError(ValueError):
    """Decoded box has non-positive height or an undefined yaw."""


def direction_label(theta_gt: float, theta_anchor: float) -> DirectionLabel:
    delta = normalize_angle(theta_gt - theta_anchor)
    return DirectionLabel.FORWARD if delta >= 0.0 else DirectionLabel.FLIPPED


def encode(gt: Box3D, anchor: Box3D) -> RegressionTarget:
    return RegressionTarget(*encode_batch(gt.as_array(), anchor.as_array())[0].tolist())


def decode(target, anchor: Box3D, direction: DirectionLabel) -> Box3D:
    t = np.asarray(target, dtype=np.float64).reshape(1, TARGET_DIM)
    out = decode_batch(t, anchor.as_array(), np.array([int(direction)]))
    return Box3D.from_array(out[0])


def direction_labels(gt_theta, anchor_theta) -> np.ndarray:
    delta = normalize_angle(np.asarray(gt_theta, dtype=np.float64) - np.asarray(anchor_theta, dtype=np.float64))
    return (np.asarray(delta) < 0.0).astype(np.int64)


def encode_batch(gt, anchors) -> np.ndarray:
    """Vectorised :func:`encode`; ``gt`` and ``anchors`` broadcast as ``(N, 7)`` arrays."""
    g = as_box_array(gt)
    a = as_box_array(anchors)
    if np.any(g[:, 3:6] <= 0) or np.any(a[:, 3:6] <= 0):
        raise ValueError("box dimensions must be positive")
    diag = np.hypot(a[:, 3], a[:, 4])
    delta = g[:, 6] - a[:, 6]
    out = np.empty((max(len(g), len(a)), TARGET_DIM), dtype=np.float64)
    out[:, 0] = (g[:, 0] - a[:, 0]) / diag
    out[:, 1] = (g[:, 1] - a[:, 1]) / diag
    out[:, 2] = g[:, 2] - g[:, 5] / 2 - a[:, 2] + a[:, 5] / 2
    out[:, 3] = g[:, 2] + g[:, 5] / 2 - a[:, 2] - a[:, 5] / 2
    out[:, 4] = np.log(g[:, 3] / a[:, 3])
    out[:, 5] = np.log(g[:, 4] / a[:, 4])
    out[:, 6] = np.abs(np.sin(delta))
    out[:, 7] = np.cos(delta)
    return out


def decode_batch(targets, anchors, directions, check=True) -> np.ndarray:
    """Vectorised :func:`decode`.

    ``directions`` holds 0 (forward) or 1 (flipped) per row. With
    ``check=False`` degenerate rows are returned as-is instead of raising,
    which is what the post-processing pipeline wants for raw network output.
    """
    t = np.asarray(targets, dtype=np.float64).reshape(-1, TARGET_DIM)
    a = as_box_array(anchors)
    flip = np.asarray(directions).reshape(-1) != 0
    diag = np.hypot(a[:, 3], a[:, 4])
    bottom = a[:, 2] - a[:, 5] / 2 + t[:, 2]
    top = a[:, 2] + a[:, 5] / 2 + t[:, 3]
    zeta = np.clip(t[:, 6], 0.0, 1.0)
    if check:
        if np.any(top <= bottom):
            raise DegenerateBoxError("decoded top face is not above the bottom face")
        if np.any((t[:, 6] == 0.0) & (t[:, 7] == 0.0)):
            raise DegenerateBoxError("angle vector (dzeta, deta) is zero")
    delta = np.arctan2(zeta, t[:, 7])
    theta = a[:, 6] + np.where(flip, -delta, delta)
    out = np.empty((max(len(t), len(a)), 7), dtype=np.float64)
    out[:, 0] = a[:, 0] + t[:, 0] * diag
    out[:, 1] = a[:, 1] + t[:, 1] * diag
    out[:, 2] = (top + bottom) / 2
    out[:, 3] = a[:, 3] * np.exp(t[:, 4])
    out[:, 4] = a[:, 4] * np.exp(t[:, 5])
    out[:, 5] = top - bottom
    out[:, 6] = normalize_angle(theta)
    return out


def angle_close(a: float, b: float, tol: float) -> bool:
    """True when two angles agree within ``tol`` modulo ``2*pi``."""
    return abs(normalize_angle(a - b)) <= tol
