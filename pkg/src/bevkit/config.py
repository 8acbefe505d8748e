"""Flat ``key = value`` pipeline configuration.

Example::

    # voxel grid
    voxel.range_min = 0, -40, -3
    voxel.cell_size = 0.2, 0.2, 0.4
    anchor.Car = 1.6,1.6,4,0; 1.6,1.6,1.6,90
    anchor.z.Car = -1.0
    nms.thresh = 0.5
    attention = both
    eval.iou.Car = 0.7

Anchor rows are ``height,width,length,degrees`` separated by ``;``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from bevkit.anchors import ANCHOR_TABLES, DEFAULT_Z_CENTERS
from bevkit.evaluator import EvalConfig
from bevkit.losses import FocalParams, LossWeights
from bevkit.micronet import AttentionToggles
from bevkit.voxel import VoxelConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    voxel: VoxelConfig = field(default_factory=VoxelConfig)
    anchor_tables: dict = field(default_factory=lambda: {k: tuple(v) for k, v in ANCHOR_TABLES.items()})
    z_centers: dict = field(default_factory=lambda: dict(DEFAULT_Z_CENTERS))
    anchor_stride: float = 0.4
    anchor_extent: tuple = (0.0, 70.4, -40.0, 40.0)
    pos_thresh: float = 0.60
    neg_thresh: float = 0.45
    nms_thresh: float = 0.5
    nms_kind: str = "bev"
    confidence_floor: float = 0.1
    weights: LossWeights = field(default_factory=LossWeights)
    focal: FocalParams = field(default_factory=FocalParams)
    huber_delta: float = 1.0
    attention: str = "both"
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        if not 0.0 <= self.neg_thresh < self.pos_thresh <= 1.0:
            raise ConfigError("match thresholds need 0 <= neg < pos <= 1")
        if not 0.0 <= self.nms_thresh <= 1.0:
            raise ConfigError("nms.thresh must lie in [0, 1]")
        if self.nms_kind not in ("bev", "3d"):
            raise ConfigError("nms.kind must be bev or 3d")
        if self.anchor_stride <= 0:
            raise ConfigError("anchor.stride must be positive")
        if self.huber_delta <= 0:
            raise ConfigError("huber.delta must be positive")
        for cls, rows in self.anchor_tables.items():
            for row in rows:
                if len(row) != 4 or min(row[:3]) <= 0:
                    raise ConfigError(f"anchor.{cls}: rows need positive height,width,length plus degrees")
        AttentionToggles.from_name(self.attention)
        for cls, thr in self.eval.iou_thresholds.items():
            if not 0.0 < thr <= 1.0:
                raise ConfigError(f"eval.iou.{cls} must lie in (0, 1]")
        return self


def _floats(text, n=None, key=""):
    try:
        vals = tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} values, got {len(vals)}")
    return vals


def _float(text, key):
    return _floats(text, 1, key)[0]


def parse_pairs(text):
    """Yield ``(lineno, key, value)`` from ``key = value`` lines; ``#`` starts a comment."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        yield lineno, key.strip(), value.strip()


def apply_setting(cfg: PipelineConfig, key: str, value: str) -> PipelineConfig:
    try:
        if key.startswith("voxel."):
            name = key[len("voxel."):]
            if name in ("range_min", "range_max", "cell_size"):
                cfg.voxel = replace(cfg.voxel, **{name: _floats(value, 3, key)})
            elif name in ("max_points_per_voxel", "max_voxels"):
                cfg.voxel = replace(cfg.voxel, **{name: int(value)})
            else:
                raise ConfigError(f"unknown key {key}")
        elif key.startswith("anchor.z."):
            cfg.z_centers[key[len("anchor.z."):]] = _float(value, key)
        elif key == "anchor.stride":
            cfg.anchor_stride = _float(value, key)
        elif key == "anchor.extent":
            cfg.anchor_extent = _floats(value, 4, key)
        elif key.startswith("anchor."):
            rows = tuple(_floats(r, 4, key) for r in value.split(";") if r.strip())
            cfg.anchor_tables[key[len("anchor."):]] = rows
        elif key == "match.pos_thresh":
            cfg.pos_thresh = _float(value, key)
        elif key == "match.neg_thresh":
            cfg.neg_thresh = _float(value, key)
        elif key == "nms.thresh":
            cfg.nms_thresh = _float(value, key)
        elif key == "nms.kind":
            cfg.nms_kind = value.lower()
        elif key == "confidence_floor":
            cfg.confidence_floor = _float(value, key)
            cfg.eval.confidence_floor = cfg.confidence_floor
        elif key.startswith("loss."):
            cfg.weights = replace(cfg.weights, **{key[len("loss."):]: _float(value, key)})
        elif key.startswith("focal."):
            cfg.focal = replace(cfg.focal, **{key[len("focal."):]: _float(value, key)})
        elif key == "huber.delta":
            cfg.huber_delta = _float(value, key)
        elif key == "attention":
            cfg.attention = value.lower()
        elif key.startswith("eval.iou."):
            cfg.eval.iou_thresholds[key[len("eval.iou."):]] = _float(value, key)
        elif key == "eval.relaxed":
            cfg.eval.relaxed_threshold = _float(value, key)
        elif key == "eval.dontcare_overlap":
            cfg.eval.dontcare_overlap = _float(value, key)
        elif key == "eval.classes":
            cfg.eval.classes = tuple(v.strip() for v in value.split(",") if v.strip())
        else:
            raise ConfigError(f"unknown key {key}")
    except TypeError:
        raise ConfigError(f"unknown key {key}") from None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return cfg


def load_config(text="", overrides=()) -> PipelineConfig:
    """Build a config from file text plus ``key=value`` override strings, then validate."""
    cfg = PipelineConfig()
    for lineno, key, value in parse_pairs(text):
        try:
            apply_setting(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        apply_setting(cfg, key.strip(), value.strip())
    return cfg.validate()
