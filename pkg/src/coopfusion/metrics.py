"""Detection metrics: 3D IOU, greedy matching, precision/recall, all-point
interpolated AP, and point-density statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import OrientedBox3D, points_in_box

_AREA_EPS = 1e-12


def _clip(subject: List[Tuple[float, float]], a, b) -> List[Tuple[float, float]]:
    # keep the part of `subject` left of the directed edge a->b
    out = []
    ax, ay = a
    ex, ey = b[0] - ax, b[1] - ay
    n = len(subject)
    for i in range(n):
        p = subject[i]
        q = subject[(i + 1) % n]
        sp = ex * (p[1] - ay) - ey * (p[0] - ax)
        sq = ex * (q[1] - ay) - ey * (q[0] - ax)
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            t = sp / (sp - sq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def polygon_area(poly) -> float:
    """Shoelace area (absolute value)."""
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def convex_intersection(p, q) -> List[Tuple[float, float]]:
    """Sutherland-Hodgman clip of convex polygon ``p`` by convex polygon ``q``.
    Both must be counter-clockwise."""
    out = [tuple(v) for v in np.asarray(p, dtype=float)]
    clip = [tuple(v) for v in np.asarray(q, dtype=float)]
    for i in range(len(clip)):
        if not out:
            break
        out = _clip(out, clip[i], clip[(i + 1) % len(clip)])
    return out


def bev_intersection_area(a: OrientedBox3D, b: OrientedBox3D) -> float:
    area = polygon_area(convex_intersection(a.bev_corners(), b.bev_corners()))
    return 0.0 if area < _AREA_EPS else area


def _bev_far_apart(a: OrientedBox3D, b: OrientedBox3D) -> bool:
    ra = math.hypot(a.size[0], a.size[1]) / 2.0
    rb = math.hypot(b.size[0], b.size[1]) / 2.0
    dx = a.center[0] - b.center[0]
    dy = a.center[1] - b.center[1]
    return dx * dx + dy * dy >= (ra + rb) ** 2


def iou3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Volumetric IOU of two yaw-only boxes."""
    lo = max(a.z_range[0], b.z_range[0])
    hi = min(a.z_range[1], b.z_range[1])
    if hi <= lo or _bev_far_apart(a, b):
        return 0.0
    inter = bev_intersection_area(a, b) * (hi - lo)
    union = a.volume + b.volume - inter
    return float(min(1.0, max(0.0, inter / union)))


def bev_iou(a: OrientedBox3D, b: OrientedBox3D) -> float:
    if _bev_far_apart(a, b):
        return 0.0
    inter = bev_intersection_area(a, b)
    union = a.size[0] * a.size[1] + b.size[0] * b.size[1] - inter
    return float(min(1.0, max(0.0, inter / union)))


def iou_matrix(boxes_a: Sequence[OrientedBox3D], boxes_b: Sequence[OrientedBox3D]) -> np.ndarray:
    m = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            m[i, j] = iou3d(a, b)
    return m


def _box(x):
    return x.box if hasattr(x, "box") else x


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)
    unmatched_gt: set = field(default_factory=set)
    unmatched_det: set = field(default_factory=set)
    kappa: float = 0.7

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def precision(self) -> float:
        n = self.tp + len(self.unmatched_det)
        return self.tp / n if n else 0.0

    @property
    def recall(self) -> float:
        n = self.tp + len(self.unmatched_gt)
        return self.tp / n if n else 0.0


def _score_order(dets) -> List[int]:
    # stable: equal scores keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def _greedy_flags(gt_boxes, dets, kappa, order, ious=None):
    """Greedy assignment in the given detection order. Returns per-order
    (gt index or -1, iou) entries."""
    if ious is None:
        ious = iou_matrix(gt_boxes, [d.box for d in dets])
    taken = np.zeros(len(gt_boxes), dtype=bool)
    out = []
    for j in order:
        best, best_iou = -1, -1.0
        for i in range(len(gt_boxes)):
            if not taken[i] and ious[i, j] > best_iou:
                best, best_iou = i, ious[i, j]
        if best >= 0 and best_iou >= kappa:
            taken[best] = True
            out.append((best, best_iou))
        else:
            out.append((-1, best_iou))
    return out


def match(gt, det, kappa: float = 0.7, tau: float = 0.0) -> MatchResult:
    """Greedy one-to-one matching of detections (score >= tau, descending
    score) to the unmatched ground-truth box of highest IOU, if >= kappa."""
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    gt_boxes = [_box(g) for g in gt]
    keep = [j for j in _score_order(det) if det[j].score >= tau]
    res = MatchResult(kappa=kappa, unmatched_gt=set(range(len(gt_boxes))),
                      unmatched_det=set(keep))
    flags = _greedy_flags(gt_boxes, det, kappa, keep)
    for j, (i, v) in zip(keep, flags):
        if i >= 0:
            res.pairs.append((i, j, float(v)))
            res.unmatched_gt.discard(i)
            res.unmatched_det.discard(j)
    return res


@dataclass
class PRCurve:
    """Rows of (recall, precision, tau) by descending tau."""

    points: List[Tuple[float, float, float]]
    n_gt: int

    @property
    def recall(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def precision(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def tau(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])


def pr_curve(gt_frames, det_frames, kappa: float = 0.7) -> PRCurve:
    """Sweep tau over all detection scores (descending) across frames.

    Matching is greedy by score, so the match decisions for the top-k
    detections do not depend on the rest; a single pass yields every
    operating point.
    """
    if len(gt_frames) != len(det_frames):
        raise ValueError("gt_frames and det_frames differ in length")
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    scores, hits = [], []
    n_gt = 0
    for gts, dets in zip(gt_frames, det_frames):
        gt_boxes = [_box(g) for g in gts]
        n_gt += len(gt_boxes)
        order = _score_order(dets)
        for j, (i, _) in zip(order, _greedy_flags(gt_boxes, dets, kappa, order)):
            scores.append(dets[j].score)
            hits.append(i >= 0)
    # global ranking; mergesort keeps frame order for equal scores
    order = np.argsort(-np.asarray(scores, dtype=float), kind="mergesort")
    tp = np.cumsum(np.asarray(hits, dtype=float)[order]) if len(order) else np.zeros(0)
    ranks = np.arange(1, len(order) + 1)
    recall = tp / n_gt if n_gt else np.full(len(order), np.nan)
    precision = tp / ranks
    taus = np.asarray(scores, dtype=float)[order]
    return PRCurve([(float(r), float(p), float(t)) for r, p, t in zip(recall, precision, taus)], n_gt)


def ap_from_curve(curve: PRCurve) -> float:
    """All-point interpolated AP: sum of recall steps times the maximum
    precision at any recall at or beyond the step."""
    if curve.n_gt == 0:
        return float("nan")
    if not curve.points:
        return 0.0
    r = curve.recall
    p = curve.precision
    p_interp = np.maximum.accumulate(p[::-1])[::-1]
    # recall steps as whole true-positive counts; divide once to avoid drift
    dtp = np.diff(np.concatenate([[0], np.rint(r * curve.n_gt)]))
    return float(np.sum(dtp * p_interp) / curve.n_gt)


def average_precision(gt_frames, det_frames, kappa: float = 0.7) -> float:
    """AP over a set of frames. Returns NaN when there is no ground truth."""
    return ap_from_curve(pr_curve(gt_frames, det_frames, kappa))


def recall_at_precision(curve: PRCurve, min_precision: float) -> float:
    """Largest recall reached at an operating point with precision >= min_precision."""
    ok = [r for r, p, _ in curve.points if p >= min_precision]
    return max(ok) if ok else 0.0


def object_densities(cloud, boxes) -> np.ndarray:
    """Point count inside each box."""
    return np.array([points_in_box(cloud, _box(b))[0] for b in boxes], dtype=int)


def density_cdf(densities) -> np.ndarray:
    """Empirical CDF on the sorted support: rows of (d, F(d))."""
    d = np.sort(np.asarray(densities, dtype=int).ravel())
    if len(d) == 0:
        return np.zeros((0, 2))
    support, counts = np.unique(d, return_counts=True)
    return np.column_stack([support, np.cumsum(counts) / len(d)])


def cdf_at(table: np.ndarray, x) -> np.ndarray:
    """Evaluate a step CDF table at arbitrary points."""
    x = np.asarray(x, dtype=float)
    if len(table) == 0:
        return np.full(x.shape, np.nan)
    idx = np.searchsorted(table[:, 0], x, side="right") - 1
    return np.where(idx >= 0, table[np.clip(idx, 0, None), 1], 0.0)


def iou_vs_density(densities, ious, bins: int = 200,
                   value_range: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Mean IOU per uniform density bin. Rows: (bin centre, mean IOU, count);
    empty bins are omitted."""
    d = np.asarray(densities, dtype=float)
    v = np.asarray(ious, dtype=float)
    if len(d) == 0:
        return np.zeros((0, 3))
    lo, hi = value_range if value_range is not None else (d.min(), d.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    sums = np.bincount(idx, weights=v, minlength=bins)
    centres = (edges[:-1] + edges[1:]) / 2.0
    occ = counts > 0
    return np.column_stack([centres[occ], sums[occ] / counts[occ], counts[occ]])


def in_area(box, area) -> bool:
    x0, y0, x1, y1 = area
    cx, cy = _box(box).center[:2]
    return x0 <= cx <= x1 and y0 <= cy <= y1


def restrict(items, area):
    """Keep boxes/detections whose centre lies in the rectangle."""
    return [it for it in items if in_area(it, area)]
