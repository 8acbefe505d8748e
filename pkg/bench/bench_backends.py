"""Compare the compiled and pure-Python kernel backends.

Times the hot kernels in isolation (pairwise IoU, NMS, voxel assignment) and
the end-to-end decode + confidence filter + NMS stage, then prints a table.

    python3 bench/bench_backends.py [--repeat 7] [--seed 0]
"""
import argparse
import statistics
import time

import numpy as np

from bevkit._backend import compiled_kernels
from bevkit.geometry import iou_matrix, nms
from bevkit.pipeline import run_bench
from bevkit.voxel import VoxelConfig, voxelize


def timed(fn, repeat):
    fn()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


def random_boxes(rng, n):
    return np.column_stack([rng.uniform(0, 40, (n, 2)), rng.normal(-1, 0.3, n), rng.uniform(1, 5, n),
                            rng.uniform(0.5, 2.5, n), rng.uniform(1, 2, n), rng.uniform(-np.pi, np.pi, n)])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = ["python"] + (["compiled"] if compiled_kernels is not None else [])
    if len(backends) == 1:
        print("compiled extension not built; timing the Python fallback only")

    rng = np.random.default_rng(args.seed)
    boxes = random_boxes(rng, 300)
    scores = rng.uniform(size=300)
    points = np.column_stack([rng.uniform(-5, 75, 120_000), rng.uniform(-45, 45, 120_000),
                              rng.uniform(-4, 2, 120_000), rng.uniform(0, 1, 120_000)])
    cfg = VoxelConfig()

    cases = {
        "iou_matrix bev 300x300": lambda b: iou_matrix(boxes, boxes, "bev", backend=b),
        "iou_matrix 3d 300x300": lambda b: iou_matrix(boxes, boxes, "3d", backend=b),
        "nms 300 boxes": lambda b: nms(boxes, scores, 0.5, "bev", backend=b),
        "voxelize 120k points": lambda b: voxelize(points, cfg, backend=b),
    }
    rows = []
    for name, fn in cases.items():
        rows.append((name, [timed(lambda: fn(b), args.repeat) for b in backends]))
    pipe = [run_bench(70_400, 50, 100, seed=args.seed, backend=b) for b in backends]
    rows.append(("decode+filter+nms median", [r.median_ms for r in pipe]))
    rows.append(("decode+filter+nms p95", [r.p95_ms for r in pipe]))

    head = f"{'case':<28}" + "".join(f"{b + ' ms':>14}" for b in backends)
    if len(backends) == 2:
        head += f"{'speedup':>10}"
    print(head)
    for name, ms in rows:
        line = f"{name:<28}" + "".join(f"{v:>14.3f}" for v in ms)
        if len(ms) == 2:
            line += f"{ms[0] / ms[1]:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
