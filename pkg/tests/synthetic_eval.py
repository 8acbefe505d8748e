"""Ten-frame planted-error dataset with a hand-enumerated AP table.

Car only. Every detection is either an exact copy of a box (IoU 1) or a copy
shifted 1 m along its 4 m length, which gives BEV and 3D IoU (4-1)/(4+1) = 0.6:
a miss at the 0.7 threshold and a hit at the relaxed 0.5 one.

frame  ground truth                    detections (score)
  0    A easy                          exact A (0.95)
  1    B easy                          exact B (0.90), exact B again (0.85) -> duplicate
  2    C moderate                      exact C (0.80)
  3    D hard                          exact D (0.75)
  4    E easy                          none -> miss
  5    none                            far box (0.70) -> FP
  6    F easy                          F shifted 1 m (0.65)
  7    G unassigned (20 px tall)       exact G (0.60) -> ignored
  8    DontCare region                 far box whose 2D box lies in the region (0.55) -> ignored
  9    H moderate, Van V               exact H (0.05) -> below floor; exact V as Car (0.50) -> ignored

Sweeps at IoU 0.7 (hit = 1, miss = 0, ignored dets left out):

easy, 4 gts (A B E F): 0.95:1 0.90:1 0.85:0 0.70:0 0.65:0
    recall reaches 1/2 at precision 1, never more
    AP11 = 6/11, AP40 = 20/40
moderate, 6 gts (+C H): 0.95:1 0.90:1 0.85:0 0.80:1 0.70:0 0.65:0
    envelope 1 up to recall 1/3, 3/4 up to 1/2
    AP11 = (4 + 2 * 3/4) / 11 = 1/2
    AP40 = (13 + 7 * 3/4) / 40 = 18.25/40
hard, 7 gts (+D): ... 0.80:1 0.75:1 ...
    envelope 1 up to recall 2/7, 4/5 up to 4/7
    AP11 = (3 + 3 * 4/5) / 11 = 5.4/11
    AP40 = (11 + 11 * 4/5) / 40 = 19.8/40

At IoU 0.5 the shifted F detection becomes a hit with 3 hits out of 5 scored:
easy: envelope 1 up to 1/2, 3/5 up to 3/4
    AP11 = (6 + 2 * 3/5) / 11 = 7.2/11, AP40 = (20 + 10 * 3/5) / 40 = 26/40
moderate: hits 0.95 0.90 0.80 0.65 -> (1/6,1) (2/6,1) (2/6,2/3) (3/6,3/4) (3/6,3/5) (4/6,4/6)
    envelope 1 up to 1/3, 3/4 up to 1/2, 2/3 up to 2/3
    AP11 = (4 + 2 * 3/4 + 1 * 2/3) / 11
    AP40 = (13 + 7 * 3/4 + 6 * 2/3) / 40
hard: hits 0.95 0.90 0.80 0.75 0.65 -> (1/7,1) (2/7,1) (2/7,2/3) (3/7,3/4) (4/7,4/5) (4/7,4/6) (5/7,5/7)
    envelope 1 up to 2/7, 4/5 up to 4/7, 5/7 up to 5/7
    AP11 = (3 + 3 * 4/5 + 2 * 5/7) / 11
    AP40 = (11 + 11 * 4/5 + 6 * 5/7) / 40
"""
import math
from dataclasses import replace

from bevkit import Box3D
from bevkit.evaluator import DetectionFrame
from bevkit.kitti_io import Category, Difficulty, LabeledObject, box_to_label

EASY = dict(height=50.0, occlusion=0, truncation=0.0)
MODERATE = dict(height=30.0, occlusion=1, truncation=0.2)
HARD = dict(height=30.0, occlusion=2, truncation=0.4)
UNASSIGNED = dict(height=20.0, occlusion=0, truncation=0.0)


def car(x, y, theta=0.0):
    return Box3D(x, y, -0.9, 4.0, 1.6, 1.6, theta)


def gt(box, level, category="Car"):
    bbox = (500.0, 150.0, 560.0, 150.0 + level["height"])
    obj = box_to_label(box, category, bbox2d=bbox)
    return replace(obj, occlusion=level["occlusion"], truncation=level["truncation"])


def det(box, score, bbox=(700.0, 150.0, 760.0, 200.0)):
    return box_to_label(box, "Car", score=score, bbox2d=bbox)


def shifted(box, s):
    return Box3D(box.x + s * math.cos(box.theta), box.y + s * math.sin(box.theta), box.z, box.l, box.w, box.h,
                 box.theta)


def dontcare(bbox):
    return LabeledObject(Category.DONT_CARE, -1.0, -1, -10.0, bbox, (-1.0, -1.0, -1.0),
                         (-1000.0, -1000.0, -1000.0), -10.0)


def frames():
    A, B, C, D = car(10, 2), car(15, -3, 0.5), car(20, 4), car(25, -6, -1.0)
    E, F, G, H = car(12, 8), car(30, 0, 1.2), car(18, -8), car(22, 6)
    V = car(40, 5, 0.3)
    far = car(60, -30)
    out = [
        ([gt(A, EASY)], [det(A, 0.95)]),
        ([gt(B, EASY)], [det(B, 0.90), det(B, 0.85)]),
        ([gt(C, MODERATE)], [det(C, 0.80)]),
        ([gt(D, HARD)], [det(D, 0.75)]),
        ([gt(E, EASY)], []),
        ([], [det(far, 0.70)]),
        ([gt(F, EASY)], [det(shifted(F, 1.0), 0.65)]),
        ([gt(G, UNASSIGNED)], [det(G, 0.60)]),
        ([dontcare((90.0, 90.0, 130.0, 130.0))], [det(far, 0.55, bbox=(100.0, 100.0, 120.0, 120.0))]),
        ([gt(H, MODERATE), gt(V, EASY, "Van")], [det(H, 0.05), det(V, 0.50)]),
    ]
    return [DetectionFrame(f"{i:06d}", g, d) for i, (g, d) in enumerate(out)]


EXPECTED = {
    (Difficulty.EASY, 0.7): (6 / 11, 20 / 40),
    (Difficulty.MODERATE, 0.7): ((4 + 2 * 0.75) / 11, (13 + 7 * 0.75) / 40),
    (Difficulty.HARD, 0.7): ((3 + 3 * 0.8) / 11, (11 + 11 * 0.8) / 40),
    (Difficulty.EASY, 0.5): ((6 + 2 * 0.6) / 11, (20 + 10 * 0.6) / 40),
    (Difficulty.MODERATE, 0.5): ((4 + 2 * 0.75 + 2 / 3) / 11, (13 + 7 * 0.75 + 6 * 2 / 3) / 40),
    (Difficulty.HARD, 0.5): ((3 + 3 * 0.8 + 2 * 5 / 7) / 11, (11 + 11 * 0.8 + 6 * 5 / 7) / 40),
}
