"""Oriented 3D box type shared by labels, anchors and predictions.

Boxes live in a right-handed frame with ``z`` pointing up; the bird's-eye
view (BEV) is the ``x``/``y`` plane and ``theta`` is the yaw about ``z``.
Array forms use the column order ``(x, y, z, l, w, h, theta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BOX_DIM = 7
TWO_PI = 2.0 * math.pi


def normalize_angle(theta):
    """Wrap angles (scalar or array) into ``[-pi, pi)``."""
    if np.ndim(theta) == 0:
        out = math.fmod(float(theta) + math.pi, TWO_PI)
        if out < 0.0:
            out += TWO_PI
        out -= math.pi
        # fmod rounding can land exactly on +pi
        return -math.pi if out >= math.pi else out
    arr = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    return np.where(arr >= math.pi, -math.pi, arr)


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive, got l={self.l} w={self.w} h={self.h}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.theta], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "Box3D":
        v = [float(t) for t in np.asarray(values, dtype=np.float64).reshape(-1)]
        if len(v) != BOX_DIM:
            raise ValueError(f"expected {BOX_DIM} box values, got {len(v)}")
        return cls(*v)

    @property
    def bottom(self) -> float:
        return self.z - self.h / 2.0

    @property
    def top(self) -> float:
        return self.z + self.h / 2.0


def as_box_array(boxes) -> np.ndarray:
    """Coerce a ``Box3D``, a sequence of them, or an ``(N, 7)`` array to float64 ``(N, 7)``."""
    if isinstance(boxes, Box3D):
        return boxes.as_array()[None, :]
    if isinstance(boxes, (list, tuple)) and boxes and isinstance(boxes[0], Box3D):
        return np.stack([b.as_array() for b in boxes])
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, BOX_DIM)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != BOX_DIM:
        raise ValueError(f"boxes must have shape (N, {BOX_DIM}), got {arr.shape}")
    return np.ascontiguousarray(arr)
