"""Point cloud voxelization and per-voxel feature encoding."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from bevkit._backend import get_kernels


@dataclass(frozen=True)
class VoxelConfig:
    range_min: tuple = (0.0, -40.0, -3.0)
    range_max: tuple = (70.4, 40.0, 1.0)
    cell_size: tuple = (0.2, 0.2, 0.4)
    max_points_per_voxel: int = 35
    max_voxels: int = 20000

    def __post_init__(self):
        for name in ("range_min", "range_max", "cell_size"):
            val = tuple(float(v) for v in getattr(self, name))
            if len(val) != 3:
                raise ValueError(f"{name} needs 3 values, got {len(val)}")
            object.__setattr__(self, name, val)
        if any(hi <= lo for lo, hi in zip(self.range_min, self.range_max)):
            raise ValueError("range_max must exceed range_min on every axis")
        if any(c <= 0 for c in self.cell_size):
            raise ValueError("cell_size must be positive")
        if self.max_points_per_voxel < 1 or self.max_voxels < 1:
            raise ValueError("voxel caps must be positive")

    @property
    def grid_shape(self) -> tuple:
        span = np.subtract(self.range_max, self.range_min) / np.asarray(self.cell_size)
        # tolerate float noise such as 70.4 / 0.2 = 351.99999999999994
        return tuple(int(np.ceil(s - 1e-9)) for s in span)


@dataclass
class VoxelGrid:
    config: VoxelConfig
    coords: np.ndarray          # (M, 3) cell index triples
    num_points: np.ndarray      # (M,)
    points: np.ndarray          # (M, P, 4), zero padded
    point_indices: np.ndarray   # (M, P), -1 padded; indices into the source cloud

    def __len__(self):
        return len(self.coords)

    def cell_centers(self) -> np.ndarray:
        cfg = self.config
        return np.asarray(cfg.range_min) + (self.coords + 0.5) * np.asarray(cfg.cell_size)

    def dump(self) -> str:
        """One line per occupied cell: ``ix iy iz count``."""
        return "".join(f"{i} {j} {k} {n}\n" for (i, j, k), n in zip(self.coords.tolist(), self.num_points.tolist()))


def _cell_keys(points, cfg):
    lo = np.asarray(cfg.range_min)
    hi = np.asarray(cfg.range_max)
    shape = np.asarray(cfg.grid_shape)
    xyz = points[:, :3]
    inside = np.all((xyz >= lo) & (xyz < hi), axis=1)
    idx = np.floor((xyz - lo) / np.asarray(cfg.cell_size)).astype(np.int64)
    idx = np.clip(idx, 0, shape - 1)
    keys = (idx[:, 0] * shape[1] + idx[:, 1]) * shape[2] + idx[:, 2]
    keys[~inside] = -1
    return keys


def voxelize(points, cfg: VoxelConfig, workers: int = 1, backend=None) -> VoxelGrid:
    """Bucket points into half-open cells ``[min, max)``.

    Points outside the range are dropped. Within a cell the lowest source
    indices are kept; cells are numbered, and capped, in order of their first
    point. ``workers`` splits the key computation across threads; the result
    does not depend on it.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    n = len(pts)
    if workers > 1 and n > 0:
        chunks = np.array_split(np.arange(n), workers)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda c: _cell_keys(pts[c], cfg), chunks))
        keys = np.concatenate(parts)
    else:
        keys = _cell_keys(pts, cfg)
    P = cfg.max_points_per_voxel
    vox, slot, vkeys = get_kernels(backend).voxel_assign(keys, P, cfg.max_voxels)
    m = len(vkeys)
    shape = cfg.grid_shape
    coords = np.stack(np.unravel_index(vkeys, shape), axis=1).astype(np.int64) if m else np.zeros((0, 3), np.int64)
    sel = np.flatnonzero(vox >= 0)
    grid_pts = np.zeros((m, P, 4), dtype=np.float64)
    grid_idx = np.full((m, P), -1, dtype=np.int64)
    grid_pts[vox[sel], slot[sel]] = pts[sel]
    grid_idx[vox[sel], slot[sel]] = sel
    num = np.bincount(vox[sel], minlength=m).astype(np.int64)
    return VoxelGrid(cfg, coords, num, grid_pts, grid_idx)


@dataclass
class PointwiseTransform:
    """Fully connected layer, ReLU, then an inference-mode batch-norm affine."""

    weight: np.ndarray
    bias: np.ndarray
    bn_scale: np.ndarray = field(default=None)
    bn_shift: np.ndarray = field(default=None)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        out = self.weight.shape[1]
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(out)
        self.bn_scale = np.ones(out) if self.bn_scale is None else np.asarray(self.bn_scale, np.float64).reshape(out)
        self.bn_shift = np.zeros(out) if self.bn_shift is None else np.asarray(self.bn_shift, np.float64).reshape(out)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def random(cls, out_dim, in_dim=4, seed=0):
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(in_dim)
        return cls(rng.uniform(-bound, bound, (in_dim, out_dim)), rng.uniform(-bound, bound, out_dim),
                   rng.uniform(0.5, 1.5, out_dim), rng.uniform(-0.1, 0.1, out_dim))

    def __call__(self, feats):
        return np.maximum(feats @ self.weight + self.bias, 0.0) * self.bn_scale + self.bn_shift


def point_inputs(grid: VoxelGrid) -> np.ndarray:
    """Per-point inputs ``(dx, dy, dz, reflectance)`` relative to the cell centre."""
    out = grid.points.copy()
    out[:, :, :3] -= grid.cell_centers()[:, None, :]
    return out


def encode_voxel_features(grid: VoxelGrid, transform: PointwiseTransform, return_pointwise=False):
    """Pointwise transform, max-pool per cell, concatenate, max-pool again.

    Returns ``(M, 2 * out_dim)`` cell features, plus the ``(M, P, 2 * out_dim)``
    concatenated per-point features when ``return_pointwise`` is set (padded
    slots are ``-inf``).
    """
    if transform.weight.shape[0] != 4:
        raise ValueError(f"transform expects {transform.weight.shape[0]} inputs, voxel points carry 4")
    m, P = grid.point_indices.shape
    d = transform.out_dim
    if m == 0:
        empty = np.zeros((0, 2 * d))
        return (empty, np.zeros((0, P, 2 * d))) if return_pointwise else empty
    valid = grid.point_indices >= 0
    f = transform(point_inputs(grid))
    f = np.where(valid[:, :, None], f, -np.inf)
    pooled = f.max(axis=1)
    cat = np.concatenate([f, np.broadcast_to(pooled[:, None, :], f.shape)], axis=2)
    cat = np.where(valid[:, :, None], cat, -np.inf)
    cell = cat.max(axis=1)
    return (cell, cat) if return_pointwise else cell
