"""``bevkit`` command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from bevkit import codec, evaluator, kitti_io
from bevkit.boxes import Box3D, as_box_array
from bevkit.config import ConfigError, load_config
from bevkit.geometry import nms
from bevkit.voxel import voxelize

DIRECTION_NAMES = {"forward": 0, "flipped": 1, "f": 0, "r": 1, "0": 0, "1": 1}
DIFFICULTY_NAMES = {d.name.lower(): d for d in evaluator.LEVELS}


class CliError(Exception):
    pass


def _read_input(path):
    if path in (None, "-"):
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def _write_output(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _number_rows(text, width, name):
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.replace(",", " ").split()
        if len(tok) != width:
            raise CliError(f"{name} line {lineno}: expected {width} values, got {len(tok)}")
        rows.append(tok)
    return rows


def _fmt(vals):
    return " ".join(f"{v:.10g}" for v in vals)


def cmd_voxelize(args, cfg):
    try:
        data = Path(args.cloud).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {args.cloud}: {exc.strerror}") from None
    try:
        cloud = kitti_io.read_point_cloud(data)
    except kitti_io.KittiFormatError as exc:
        raise CliError(f"{args.cloud}: {exc}") from None
    grid = voxelize(cloud.points, cfg.voxel, workers=args.threads)
    _write_output(grid.dump(), args.out)
    return 0


def cmd_encode(args, cfg):
    """Input rows: gt x y z l w h theta, anchor x y z l w h theta."""
    out = []
    for tok in _number_rows(_read_input(args.input), 14, "encode"):
        vals = [float(t) for t in tok]
        gt, anchor = Box3D(*vals[:7]), Box3D(*vals[7:])
        t = codec.encode(gt, anchor)
        label = codec.direction_label(gt.theta, anchor.theta)
        out.append(f"{_fmt(t)} {label.name.lower()}\n")
    _write_output("".join(out), args.out)
    return 0


def cmd_decode(args, cfg):
    """Input rows: 8 target values, anchor x y z l w h theta, direction."""
    out = []
    for tok in _number_rows(_read_input(args.input), 16, "decode"):
        direction = DIRECTION_NAMES.get(tok[15].lower())
        if direction is None:
            raise CliError(f"unknown direction {tok[15]!r}; use forward or flipped")
        vals = [float(t) for t in tok[:15]]
        box = codec.decode(vals[:8], Box3D(*vals[8:15]), codec.DirectionLabel(direction))
        out.append(_fmt(box.as_array()) + "\n")
    _write_output("".join(out), args.out)
    return 0


def cmd_nms(args, cfg):
    """Input rows: x y z l w h theta score. Prints kept row indices in keep order."""
    rows = _number_rows(_read_input(args.input), 8, "nms")
    arr = np.array(rows, dtype=np.float64).reshape(-1, 8)
    boxes, scores = as_box_array(arr[:, :7]), arr[:, 7]
    idx = np.flatnonzero(scores >= cfg.confidence_floor)
    kept = idx[nms(boxes[idx], scores[idx], cfg.nms_thresh, cfg.nms_kind)]
    _write_output("".join(f"{i}\n" for i in kept.tolist()), args.out)
    return 0


def _curve_name(key):
    cls, level, kind, thr = key
    return f"pr_{cls}_{level.name.lower()}_{kind}_{thr:g}"


def cmd_eval(args, cfg):
    for d in (args.gt_dir, args.pred_dir):
        if not Path(d).is_dir():
            raise CliError(f"{d} is not a directory")
    res = evaluator.evaluate_dataset(args.gt_dir, args.pred_dir, cfg.eval, workers=args.threads)
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    sys.stdout.write(evaluator.format_table(res))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ap.csv").write_text(evaluator.results_csv(res), encoding="utf-8")
        for key, curve in res.curves.items():
            (out / f"{_curve_name(key)}.csv").write_text(evaluator.curve_csv(curve), encoding="utf-8")
    return 0


def cmd_pr_curve(args, cfg):
    level = DIFFICULTY_NAMES.get(args.difficulty.lower())
    if level is None:
        raise CliError(f"difficulty must be one of {sorted(DIFFICULTY_NAMES)}")
    thr = args.threshold if args.threshold is not None else cfg.eval.iou_thresholds.get(args.category, 0.5)
    frames, warnings = evaluator.load_frames(args.gt_dir, args.pred_dir)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not frames:
        raise CliError("no frames with both ground truth and predictions")
    curve = evaluator.pr_curve(frames, args.category, level, thr, args.iou_kind, cfg.confidence_floor,
                               cfg.eval.dontcare_overlap, workers=args.threads)
    if curve.no_ground_truth:
        print("warning: no eligible ground truth; curve is empty", file=sys.stderr)
    prefix = args.out or _curve_name((args.category, level, args.iou_kind, thr))
    Path(prefix + ".csv").write_text(evaluator.curve_csv(curve), encoding="utf-8")
    title = f"{args.category} {level.name.lower()} {args.iou_kind.upper()} IoU {thr:g}"
    Path(prefix + ".svg").write_text(evaluator.curve_svg(curve, title), encoding="utf-8")
    print(f"AP11 {100 * evaluator.average_precision(curve, 'AP11'):.2f}  "
          f"AP40 {100 * evaluator.average_precision(curve, 'AP40'):.2f}  -> {prefix}.csv, {prefix}.svg")
    return 0


def cmd_gradcheck(args, cfg):
    from bevkit.gradcheck import run_gradcheck

    report = run_gradcheck(seed=args.seed, points=args.points, corrupt=args.corrupt)
    _write_output(report.format(), args.out)
    return 0 if report.passed else 1


def cmd_bench(args, cfg):
    from bevkit._backend import compiled_kernels
    from bevkit.pipeline import BenchResult, run_bench

    if args.backend == "both":
        names = ["python"] + (["compiled"] if compiled_kernels is not None else [])
    else:
        names = [args.backend]
    lines = [BenchResult.CSV_HEADER]
    for name in names:
        try:
            r = run_bench(args.anchors, args.frames, args.survivors, args.seed, backend=name,
                          confidence_floor=cfg.confidence_floor, nms_thresh=cfg.nms_thresh, nms_kind=cfg.nms_kind)
        except RuntimeError as exc:
            raise CliError(str(exc)) from None
        lines.append(r.csv_row())
    _write_output("\n".join(lines) + "\n", args.out)
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file (or directory for eval); default stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bevkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", parents=[common], help="dump the voxel grid of a velodyne .bin file")
    p.add_argument("cloud")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("encode", parents=[common], help="encode gt/anchor box pairs into regression targets")
    p.add_argument("input", nargs="?", default="-")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="decode regression targets against anchors")
    p.add_argument("input", nargs="?", default="-")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("nms", parents=[common], help="confidence filter plus non-maximum suppression")
    p.add_argument("input", nargs="?", default="-")
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("eval", parents=[common], help="KITTI AP11/AP40 evaluation of a prediction directory")
    p.add_argument("gt_dir")
    p.add_argument("pred_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pr-curve", parents=[common], help="write one precision-recall curve as CSV and SVG")
    p.add_argument("gt_dir")
    p.add_argument("pred_dir")
    p.add_argument("--category", default="Car")
    p.add_argument("--difficulty", default="moderate")
    p.add_argument("--iou-kind", default="3d", choices=["bev", "3d"])
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_pr_curve)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all analytic gradients")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--corrupt", action="store_true", help="perturb analytic gradients (fault injection)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common], help="time decode + confidence filter + NMS")
    p.add_argument("--anchors", type=int, default=70400)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--survivors", type=int, default=100)
    p.add_argument("--backend", default="both", choices=["both", "compiled", "python"])
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        text = Path(args.config).read_text() if args.config else ""
        cfg = load_config(text, args.set)
        if args.threads < 1:
            raise CliError("--threads must be at least 1")
        return args.func(args, cfg)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (CliError, ConfigError, kitti_io.KittiFormatError, codec.DegenerateBoxError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
