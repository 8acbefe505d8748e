"""KITTI-style detection evaluation: greedy matching, PR curves, AP11 / AP40."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bevkit.geometry import iou_matrix
from bevkit.kitti_io import Category, Difficulty, classify_difficulty, label_to_box, parse_label_file

log = logging.getLogger(__name__)

TP, FP, IGNORED_DET = 1, 0, -1
MATCHED, MISSED, IGNORED_GT = 1, 0, -1
NOT_EVALUATED = -2

DEFAULT_IOU_THRESHOLDS = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
# devkit convention: these neither count nor penalise
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}
LEVELS = (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD)


@dataclass
class DetectionFrame:
    frame_id: str
    ground_truths: list
    detections: list
    difficulties: list = field(default=None)

    def __post_init__(self):
        if self.difficulties is None:
            self.difficulties = [classify_difficulty(g) for g in self.ground_truths]


@dataclass
class FrameMatch:
    det_status: np.ndarray   # per detection: TP / FP / IGNORED_DET / NOT_EVALUATED
    gt_status: np.ndarray    # per ground truth: MATCHED / MISSED / IGNORED_GT / NOT_EVALUATED
    scores: np.ndarray

    @property
    def n_eligible(self) -> int:
        return int(np.sum((self.gt_status == MATCHED) | (self.gt_status == MISSED)))


@dataclass
class PrCurve:
    scores: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    n_gt: int

    @property
    def no_ground_truth(self) -> bool:
        return self.n_gt == 0

    def __len__(self):
        return len(self.recall)


@dataclass
class ApResult:
    category: str
    difficulty: Difficulty
    iou_kind: str
    threshold: float
    ap11: float
    ap40: float
    n_gt: int

    @property
    def empty(self) -> bool:
        return self.n_gt == 0


@dataclass
class EvalConfig:
    classes: tuple = ("Car", "Pedestrian", "Cyclist")
    iou_thresholds: dict = field(default_factory=lambda: dict(DEFAULT_IOU_THRESHOLDS))
    relaxed_threshold: float = 0.5
    iou_kinds: tuple = ("bev", "3d")
    confidence_floor: float = 0.1
    dontcare_overlap: float = 0.5

    def thresholds_for(self, cls):
        main = self.iou_thresholds[cls]
        return (main,) if main == self.relaxed_threshold else (main, self.relaxed_threshold)


def _cat(obj):
    return obj.category.value


def _boxes(objs):
    if not objs:
        return np.zeros((0, 7))
    return np.stack([label_to_box(o).as_array() for o in objs])


def _area2d(b):
    return max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)


def _overlap2d(a, b):
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(w, 0.0) * max(h, 0.0)


def match_frame(frame: DetectionFrame, cls, difficulty, iou_thresh, iou_kind="3d", confidence_floor=0.1,
                dontcare_overlap=0.5, iou=None, backend=None) -> FrameMatch:
    """Greedy score-ordered matching of one frame for one class and difficulty.

    Ground truths of ``cls`` at or below ``difficulty`` are eligible; harder,
    unassigned or neighbour-class ones are ignored and silently absorb the
    detections they match. Unmatched detections mostly inside a DontCare
    region are ignored as well. ``iou`` may supply a precomputed
    ``(n_det, n_gt)`` matrix.
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must lie in (0, 1], got {iou_thresh}")
    dets, gts = frame.detections, frame.ground_truths
    scores = np.array([d.score if d.score is not None else 0.0 for d in dets], dtype=np.float64)
    det_status = np.full(len(dets), NOT_EVALUATED, dtype=np.int8)
    gt_status = np.full(len(gts), NOT_EVALUATED, dtype=np.int8)

    neighbors = NEIGHBOR_CLASSES.get(cls, ())
    candidates = []
    for j, (g, lvl) in enumerate(zip(gts, frame.difficulties)):
        if _cat(g) == cls:
            eligible = lvl != Difficulty.NOT_ASSIGNED and lvl <= difficulty
            gt_status[j] = MISSED if eligible else IGNORED_GT
            candidates.append(j)
        elif _cat(g) in neighbors:
            gt_status[j] = IGNORED_GT
            candidates.append(j)
    dontcare = [g.bbox2d for g in gts if g.category is Category.DONT_CARE]

    active = [i for i, d in enumerate(dets) if _cat(d) == cls and scores[i] >= confidence_floor]
    active.sort(key=lambda i: (-scores[i], i))
    if not active:
        return FrameMatch(det_status, gt_status, scores)
    cand = np.asarray(candidates, dtype=np.int64)
    if iou is None:
        sub = iou_matrix(_boxes([dets[i] for i in active]), _boxes([gts[j] for j in cand]), iou_kind, backend)
    else:
        sub = iou[np.ix_(active, cand)] if len(cand) else np.zeros((len(active), 0))
    rows = {i: r for r, i in enumerate(active)}

    taken = np.zeros(len(cand), dtype=bool)
    for i in active:
        det_status[i] = FP
        if len(cand):
            ov = np.where(taken, -1.0, sub[rows[i]])
            k = int(np.argmax(ov))
            if ov[k] >= iou_thresh:
                taken[k] = True
                j = cand[k]
                if gt_status[j] == MISSED:
                    gt_status[j] = MATCHED
                    det_status[i] = TP
                else:
                    det_status[i] = IGNORED_DET
                continue
        box = dets[i].bbox2d
        area = _area2d(box)
        if area > 0 and any(_overlap2d(box, dc) > dontcare_overlap * area for dc in dontcare):
            det_status[i] = IGNORED_DET
    return FrameMatch(det_status, gt_status, scores)


def curve_from_matches(frames, matches) -> PrCurve:
    """Global descending-score sweep over per-frame match results.

    Ties are ordered by frame id, then detection index; one curve point is
    emitted per distinct score.
    """
    rows = []
    n_gt = 0
    for frame, m in zip(frames, matches):
        n_gt += m.n_eligible
        for i in np.flatnonzero((m.det_status == TP) | (m.det_status == FP)):
            rows.append((-m.scores[i], frame.frame_id, int(i), int(m.det_status[i] == TP)))
    if n_gt == 0 or not rows:
        empty = np.zeros(0)
        return PrCurve(empty, empty.copy(), empty.copy(), n_gt)
    rows.sort()
    neg_scores = np.array([r[0] for r in rows])
    hits = np.array([r[3] for r in rows], dtype=np.int64)
    tp = np.cumsum(hits)
    fp = np.cumsum(1 - hits)
    last = np.r_[np.flatnonzero(np.diff(neg_scores) != 0), len(rows) - 1]
    tp, fp = tp[last], fp[last]
    return PrCurve(-neg_scores[last], tp / n_gt, tp / (tp + fp), n_gt)


def pr_curve(frames, cls, difficulty, iou_thresh, iou_kind="3d", confidence_floor=0.1, dontcare_overlap=0.5,
             workers=1, backend=None) -> PrCurve:
    frames = list(frames)
    if not frames:
        raise ValueError("pr_curve needs at least one frame")

    def run(f):
        return match_frame(f, cls, difficulty, iou_thresh, iou_kind, confidence_floor, dontcare_overlap,
                           backend=backend)

    matches = _map(run, frames, workers)
    return curve_from_matches(frames, matches)


RECALL_ANCHORS = {
    "AP11": np.arange(11) / 10.0,
    "AP40": np.arange(1, 41) / 40.0,
}


def interpolated_precision(curve: PrCurve, recall_points) -> np.ndarray:
    """``max{precision(r') : r' >= r}`` at each requested recall, 0 where undefined."""
    rp = np.asarray(recall_points, dtype=np.float64)
    if len(curve) == 0:
        return np.zeros_like(rp)
    # running max from the right
    env = np.maximum.accumulate(curve.precision[::-1])[::-1]
    idx = np.searchsorted(curve.recall, rp - 1e-12, side="left")
    out = np.zeros_like(rp)
    ok = idx < len(env)
    out[ok] = env[idx[ok]]
    return out


def average_precision(curve: PrCurve, mode="AP40") -> float:
    try:
        anchors = RECALL_ANCHORS[mode.upper()]
    except KeyError:
        raise ValueError(f"mode must be AP11 or AP40, got {mode!r}") from None
    return float(interpolated_precision(curve, anchors).mean())


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


@dataclass
class EvalResult:
    results: list
    curves: dict
    warnings: list = field(default_factory=list)

    def lookup(self, category, difficulty, iou_kind, threshold) -> ApResult:
        for r in self.results:
            if (r.category, r.difficulty, r.iou_kind, r.threshold) == (category, difficulty, iou_kind, threshold):
                return r
        raise KeyError((category, difficulty, iou_kind, threshold))


def evaluate_frames(frames, config: EvalConfig = EvalConfig(), workers=1, backend=None) -> EvalResult:
    """AP for every class x difficulty x IoU kind x threshold cell."""
    frames = sorted(frames, key=lambda f: f.frame_id)
    results, curves = [], {}
    for cls in config.classes:
        for kind in config.iou_kinds:
            ious = _map(lambda f: _frame_iou(f, cls, kind, backend), frames, workers)
            for thr in config.thresholds_for(cls):
                for level in LEVELS:
                    def run(pair, level=level, thr=thr):
                        f, iou = pair
                        return match_frame(f, cls, level, thr, kind, config.confidence_floor,
                                           config.dontcare_overlap, iou=iou)

                    matches = _map(run, list(zip(frames, ious)), workers)
                    curve = curve_from_matches(frames, matches)
                    key = (cls, level, kind, thr)
                    curves[key] = curve
                    results.append(ApResult(cls, level, kind, thr, average_precision(curve, "AP11"),
                                            average_precision(curve, "AP40"), curve.n_gt))
    return EvalResult(results, curves)


def _frame_iou(frame, cls, kind, backend):
    n_det, n_gt = len(frame.detections), len(frame.ground_truths)
    out = np.zeros((n_det, n_gt))
    di = [i for i, d in enumerate(frame.detections) if _cat(d) == cls]
    keep = {cls, *NEIGHBOR_CLASSES.get(cls, ())}
    gi = [j for j, g in enumerate(frame.ground_truths) if _cat(g) in keep]
    if di and gi:
        out[np.ix_(di, gi)] = iou_matrix(_boxes([frame.detections[i] for i in di]),
                                         _boxes([frame.ground_truths[j] for j in gi]), kind, backend)
    return out


def load_frames(gt_dir, pred_dir):
    """Pair ``<id>.txt`` files from two directories; unpaired ids are reported and skipped."""
    gt_dir, pred_dir = Path(gt_dir), Path(pred_dir)
    gt_ids = {p.stem for p in gt_dir.glob("*.txt")}
    pred_ids = {p.stem for p in pred_dir.glob("*.txt")}
    warnings = []
    for fid in sorted(gt_ids - pred_ids):
        warnings.append(f"frame {fid}: no prediction file, skipped")
    for fid in sorted(pred_ids - gt_ids):
        warnings.append(f"frame {fid}: no ground-truth file, skipped")
    frames = []
    for fid in sorted(gt_ids & pred_ids):
        gts = parse_label_file((gt_dir / f"{fid}.txt").read_text())
        dets = parse_label_file((pred_dir / f"{fid}.txt").read_text())
        for d in dets:
            if d.score is None:
                d.score = 1.0
        frames.append(DetectionFrame(fid, gts, dets))
    for w in warnings:
        log.warning(w)
    return frames, warnings


def evaluate_dataset(gt_dir, pred_dir, config: EvalConfig = EvalConfig(), workers=1, backend=None) -> EvalResult:
    frames, warnings = load_frames(gt_dir, pred_dir)
    res = evaluate_frames(frames, config, workers, backend)
    res.warnings = warnings
    return res


# -- output ----------------------------------------------------------------

def format_table(result: EvalResult) -> str:
    head = f"{'class':<12}{'difficulty':<12}{'iou':<6}{'thresh':>7}{'AP11':>9}{'AP40':>9}{'n_gt':>7}"
    lines = [head, "-" * len(head)]
    for r in result.results:
        lines.append(f"{r.category:<12}{r.difficulty.name.lower():<12}{r.iou_kind:<6}{r.threshold:>7.2f}"
                     f"{100 * r.ap11:>9.2f}{100 * r.ap40:>9.2f}{r.n_gt:>7d}")
    return "\n".join(lines) + "\n"


def results_csv(result: EvalResult) -> str:
    lines = ["class,difficulty,iou_kind,threshold,ap11,ap40"]
    for r in result.results:
        lines.append(f"{r.category},{r.difficulty.name.lower()},{r.iou_kind},{r.threshold:g},{r.ap11:.6f},{r.ap40:.6f}")
    return "\n".join(lines) + "\n"


def curve_csv(curve: PrCurve) -> str:
    lines = ["score,recall,precision"]
    lines += [f"{s:.6f},{r:.6f},{p:.6f}" for s, r, p in zip(curve.scores, curve.recall, curve.precision)]
    return "\n".join(lines) + "\n"


def curve_svg(curve: PrCurve, title="", size=320, margin=32) -> str:
    """Minimal SVG: axes box plus the PR curve as one polyline."""
    inner = size - 2 * margin
    pts = " ".join(f"{margin + r * inner:.2f},{margin + (1 - p) * inner:.2f}"
                   for r, p in zip(curve.recall, curve.precision))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">\n'
        f'<rect x="{margin}" y="{margin}" width="{inner}" height="{inner}" fill="none" stroke="black"/>\n'
        f'<text x="{size / 2}" y="{margin - 10}" text-anchor="middle" font-size="12">{title}</text>\n'
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="11">recall</text>\n'
        f'<text x="10" y="{size / 2}" font-size="11" transform="rotate(-90 10 {size / 2})">precision</text>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{pts}"/>\n'
        "</svg>\n"
    )
