"""KITTI object-detection file formats: labels, calibration, velodyne scans."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from bevkit.boxes import Box3D


class Category(str, enum.Enum):
    CAR = "Car"
    VAN = "Van"
    TRUCK = "Truck"
    PEDESTRIAN = "Pedestrian"
    PERSON_SITTING = "Person_sitting"
    CYCLIST = "Cyclist"
    TRAM = "Tram"
    MISC = "Misc"
    DONT_CARE = "DontCare"


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    NOT_ASSIGNED = 3


class KittiFormatError(ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class LabeledObject:
    category: Category
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple            # left, top, right, bottom (pixels)
    dims: tuple              # height, width, length (m)
    location: tuple          # x, y, z in the camera frame (m); y points down
    rotation_y: float
    score: Optional[float] = None
    unknown_category: bool = field(default=False, compare=False)

    @property
    def height_px(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]


# -- labels ----------------------------------------------------------------

def parse_label_line(line: str, lineno=None) -> LabeledObject:
    tok = line.split()
    if len(tok) not in (15, 16):
        raise KittiFormatError(f"expected 15 or 16 fields, got {len(tok)}", line=lineno)
    vals = []
    for col in range(1, len(tok)):
        try:
            vals.append(float(tok[col]))
        except ValueError:
            raise KittiFormatError(f"cannot parse {tok[col]!r} as a number", line=lineno, column=col) from None
    try:
        cat, unknown = Category(tok[0]), False
    except ValueError:
        cat, unknown = Category.MISC, True
    occ = vals[1]
    if occ != int(occ):
        raise KittiFormatError(f"occlusion must be an integer, got {tok[2]!r}", line=lineno, column=2)
    return LabeledObject(
        category=cat,
        truncation=vals[0],
        occlusion=int(occ),
        alpha=vals[2],
        bbox2d=tuple(vals[3:7]),
        dims=tuple(vals[7:10]),
        location=tuple(vals[10:13]),
        rotation_y=vals[13],
        score=vals[14] if len(vals) == 15 else None,
        unknown_category=unknown,
    )


def parse_label_file(text: str) -> list:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            out.append(parse_label_line(line, lineno=lineno))
    return out


def format_label_line(obj: LabeledObject, with_score=True) -> str:
    reals = [obj.alpha, *obj.bbox2d, *obj.dims, *obj.location, obj.rotation_y]
    fields = [obj.category.value, f"{obj.truncation:.2f}", str(int(obj.occlusion))]
    fields += [f"{v:.2f}" for v in reals]
    if with_score:
        if obj.score is None:
            raise ValueError(f"{obj.category.value} object has no score")
        fields.append(f"{obj.score:.2f}")
    return " ".join(fields)


def write_prediction_file(objs) -> str:
    """Serialise scored objects as 16-field lines with two decimals."""
    return "".join(format_label_line(o) + "\n" for o in objs)


def write_label_file(objs) -> str:
    return "".join(format_label_line(o, with_score=False) + "\n" for o in objs)


# -- difficulty ------------------------------------------------------------

# (min pixel height, max occlusion, max truncation)
DIFFICULTY_CUTOFFS = {
    Difficulty.EASY: (40.0, 0, 0.15),
    Difficulty.MODERATE: (25.0, 1, 0.30),
    Difficulty.HARD: (25.0, 2, 0.50),
}


def classify_difficulty(obj: LabeledObject) -> Difficulty:
    """Easiest KITTI level whose height/occlusion/truncation limits the object meets."""
    h = obj.height_px
    for level, (min_h, max_occ, max_trunc) in DIFFICULTY_CUTOFFS.items():
        if h >= min_h and obj.occlusion <= max_occ and obj.truncation <= max_trunc:
            return level
    return Difficulty.NOT_ASSIGNED


# -- box conversion --------------------------------------------------------

def label_to_box(obj: LabeledObject) -> Box3D:
    """Map a camera-frame label onto the z-up box frame.

    BEV uses camera ``(x, z)``; the camera's downward ``y`` becomes height and
    the label location (bottom-face centre) becomes the box centre. Under this
    reflection the yaw flips sign.
    """
    h, w, l = obj.dims
    x, y, z = obj.location
    return Box3D(x, z, -y + h / 2.0, l, w, h, -obj.rotation_y)


def box_to_label(box: Box3D, category, score=None, bbox2d=(0.0, 0.0, 0.0, 0.0)) -> LabeledObject:
    ry = float(-box.theta)
    loc = (box.x, -(box.z - box.h / 2.0), box.y)
    alpha = ry - math.atan2(loc[0], loc[2])
    alpha = (alpha + math.pi) % (2 * math.pi) - math.pi
    return LabeledObject(Category(category), 0.0, 0, alpha, tuple(bbox2d), (box.h, box.w, box.l), loc, ry, score)


# -- calibration -----------------------------------------------------------

CALIB_SHAPES = {
    "P0": (3, 4), "P1": (3, 4), "P2": (3, 4), "P3": (3, 4),
    "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4), "Tr_imu_to_velo": (3, 4),
}
REQUIRED_CALIB_KEYS = ("P0", "P1", "P2", "P3", "R0_rect", "Tr_velo_to_cam")


@dataclass
class Calibration:
    P0: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    P3: np.ndarray
    R0_rect: np.ndarray
    Tr_velo_to_cam: np.ndarray
    Tr_imu_to_velo: Optional[np.ndarray] = None

    def __eq__(self, other):
        if not isinstance(other, Calibration):
            return NotImplemented
        for key in CALIB_SHAPES:
            a, b = getattr(self, key), getattr(other, key)
            if (a is None) != (b is None) or (a is not None and not np.array_equal(a, b)):
                return False
        return True


def parse_calib_file(text: str) -> Calibration:
    found = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or key not in CALIB_SHAPES:
            continue
        shape = CALIB_SHAPES[key]
        tok = rest.split()
        if len(tok) != shape[0] * shape[1]:
            raise KittiFormatError(f"{key} needs {shape[0] * shape[1]} values, got {len(tok)}", line=lineno)
        try:
            found[key] = np.array([float(t) for t in tok], dtype=np.float64).reshape(shape)
        except ValueError as exc:
            raise KittiFormatError(f"{key}: {exc}", line=lineno) from None
    missing = [k for k in REQUIRED_CALIB_KEYS if k not in found]
    if missing:
        raise KittiFormatError(f"missing calibration keys: {', '.join(missing)}")
    return Calibration(**found)


def write_calib_file(calib: Calibration) -> str:
    lines = []
    for key in CALIB_SHAPES:
        mat = getattr(calib, key)
        if mat is not None:
            lines.append(f"{key}: " + " ".join(repr(float(v)) for v in np.asarray(mat).ravel()))
    return "\n".join(lines) + "\n"


# -- point clouds ----------------------------------------------------------

POINT_DTYPE = np.dtype("<f4")
POINT_BYTES = 4 * POINT_DTYPE.itemsize


@dataclass
class PointCloud:
    points: np.ndarray   # (N, 4) float32: x, y, z, reflectance

    def __len__(self):
        return len(self.points)


def read_point_cloud(data: bytes) -> PointCloud:
    if len(data) % POINT_BYTES:
        raise KittiFormatError(f"point cloud byte length {len(data)} is not a multiple of {POINT_BYTES}")
    pts = np.frombuffer(data, dtype=POINT_DTYPE).reshape(-1, 4).astype(np.float32)
    if not np.all(np.isfinite(pts)):
        raise KittiFormatError("point cloud contains non-finite values")
    return PointCloud(pts)


def write_point_cloud(points) -> bytes:
    pts = np.asarray(points.points if isinstance(points, PointCloud) else points)
    return np.ascontiguousarray(pts.reshape(-1, 4), dtype=POINT_DTYPE).tobytes()
