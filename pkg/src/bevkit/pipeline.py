"""Post-network detection pipeline and its latency benchmark."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from bevkit.anchors import generate_anchor_grid
from bevkit.codec import TARGET_DIM, decode_batch
from bevkit.geometry import nms


@dataclass
class Detections:
    boxes: np.ndarray
    scores: np.ndarray
    anchor_index: np.ndarray


def postprocess(targets, anchors, directions, scores, confidence_floor=0.1, nms_thresh=0.5, nms_kind="bev",
                backend=None) -> Detections:
    """Decode every anchor, drop scores below the floor and degenerate boxes, then NMS."""
    boxes = decode_batch(targets, anchors, directions, check=False)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    ok = (scores >= confidence_floor) & (boxes[:, 5] > 0) & np.all(np.isfinite(boxes), axis=1)
    idx = np.flatnonzero(ok)
    kept = nms(boxes[idx], scores[idx], nms_thresh, nms_kind, backend=backend)
    sel = idx[kept]
    return Detections(boxes[sel], scores[sel], sel)


@dataclass
class BenchResult:
    backend: str
    n_anchors: int
    n_survivors: int
    n_frames: int
    median_ms: float
    p95_ms: float
    mean_kept: float

    CSV_HEADER = "backend,n_anchors,n_survivors,n_frames,median_ms,p95_ms,mean_kept"

    def csv_row(self) -> str:
        return (f"{self.backend},{self.n_anchors},{self.n_survivors},{self.n_frames},"
                f"{self.median_ms:.4f},{self.p95_ms:.4f},{self.mean_kept:.2f}")


def synthetic_frame(anchors, n_survivors, rng, confidence_floor=0.1):
    """Random network output where exactly ``n_survivors`` anchors clear the floor."""
    n = len(anchors)
    targets = rng.normal(scale=0.05, size=(n, TARGET_DIM))
    targets[:, 6] = np.abs(targets[:, 6])
    targets[:, 7] = 1.0
    directions = rng.integers(0, 2, n)
    scores = rng.uniform(0.0, 0.9 * confidence_floor, n)
    if n:
        hot = rng.choice(n, size=min(n_survivors, n), replace=False)
        scores[hot] = rng.uniform(confidence_floor, 1.0, len(hot))
    return targets, directions, scores


def default_bench_anchors(n_anchors):
    """Car anchors over the default KITTI BEV extent; 70400 at stride 0.4 m."""
    base = generate_anchor_grid("Car", (0.0, 70.4, -40.0, 40.0), 0.4)
    if n_anchors <= len(base):
        return base[:n_anchors]
    reps = -(-n_anchors // len(base))
    return np.tile(base, (reps, 1))[:n_anchors]


def run_bench(n_anchors=70400, n_frames=50, n_survivors=100, seed=0, backend=None, confidence_floor=0.1,
              nms_thresh=0.5, nms_kind="bev", anchors=None) -> BenchResult:
    rng = np.random.default_rng(seed)
    anchors = default_bench_anchors(n_anchors) if anchors is None else anchors
    frames = [synthetic_frame(anchors, n_survivors, rng, confidence_floor) for _ in range(n_frames)]
    times, kept = [], []
    # warm-up outside the timed loop
    if frames:
        postprocess(frames[0][0], anchors, frames[0][1], frames[0][2], confidence_floor, nms_thresh, nms_kind, backend)
    for targets, directions, scores in frames:
        t0 = time.perf_counter()
        det = postprocess(targets, anchors, directions, scores, confidence_floor, nms_thresh, nms_kind, backend)
        times.append(time.perf_counter() - t0)
        kept.append(len(det.scores))
    times_ms = np.asarray(times) * 1e3 if times else np.zeros(1)
    from bevkit._backend import BACKEND
    return BenchResult(backend or BACKEND, len(anchors), n_survivors, n_frames, float(np.median(times_ms)),
                       float(np.percentile(times_ms, 95)), float(np.mean(kept)) if kept else 0.0)
