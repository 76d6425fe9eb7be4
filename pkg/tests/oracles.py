"""Independent reference implementations used to check the library.

None of these import the code under test for the quantity they verify; they
are deliberately slow and literal.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# ------------------------------------------------------------------ IOU --

def _rect_halfplanes(cx, cy, l, w, yaw):
    """Rectangle as four constraints n . p <= c."""
    c, s = math.cos(yaw), math.sin(yaw)
    ax = np.array([c, s])
    ay = np.array([-s, c])
    ctr = np.array([cx, cy])
    return [(ax, ax @ ctr + l / 2), (-ax, -(ax @ ctr) + l / 2),
            (ay, ay @ ctr + w / 2), (-ay, -(ay @ ctr) + w / 2)]


def _row_intervals(planes, ys):
    """For horizontal lines y = ys, the x-interval inside the convex region."""
    lo = np.full(len(ys), -np.inf)
    hi = np.full(len(ys), np.inf)
    for n, c in planes:
        nx, ny = n
        rhs = c - ny * ys
        if abs(nx) < 1e-15:
            bad = rhs < 0
            lo[bad], hi[bad] = np.inf, -np.inf
        elif nx > 0:
            hi = np.minimum(hi, rhs / nx)
        else:
            lo = np.maximum(lo, rhs / nx)
    return lo, hi


def _count_centres(lo, hi, x0, dx, nx):
    # cell centres x0 + (k + 0.5) dx, k in [0, nx)
    k_lo = np.ceil((lo - x0) / dx - 0.5)
    k_hi = np.floor((hi - x0) / dx - 0.5)
    k_lo = np.clip(k_lo, 0, nx)
    k_hi = np.clip(k_hi, -1, nx - 1)
    return np.maximum(k_hi - k_lo + 1, 0)


def voxel_iou(a, b, samples: int = 10_000_000) -> float:
    """Volume IOU from a regular grid of ``samples`` BEV cells covering both
    boxes; each cell contributes its area when its centre is inside. The
    z-extent is an exact interval overlap. Rows are counted analytically, so
    the grid is never materialised.

    ``a`` and ``b`` are (cx, cy, cz, l, w, h, yaw).
    """
    pa = _rect_halfplanes(a[0], a[1], a[3], a[4], a[6])
    pb = _rect_halfplanes(b[0], b[1], b[3], b[4], b[6])
    ra = math.hypot(a[3], a[4]) / 2
    rb = math.hypot(b[3], b[4]) / 2
    x0 = min(a[0] - ra, b[0] - rb)
    x1 = max(a[0] + ra, b[0] + rb)
    y0 = min(a[1] - ra, b[1] - rb)
    y1 = max(a[1] + ra, b[1] + rb)
    # square cells, about `samples` of them
    dx = math.sqrt((x1 - x0) * (y1 - y0) / samples)
    nx = int(math.ceil((x1 - x0) / dx))
    ny = int(math.ceil((y1 - y0) / dx))
    ys = y0 + (np.arange(ny) + 0.5) * dx
    la, ha = _row_intervals(pa, ys)
    lb, hb = _row_intervals(pb, ys)
    cell = dx * dx
    area_a = _count_centres(la, ha, x0, dx, nx).sum() * cell
    area_b = _count_centres(lb, hb, x0, dx, nx).sum() * cell
    area_i = _count_centres(np.maximum(la, lb), np.minimum(ha, hb), x0, dx, nx).sum() * cell
    za = (a[2] - a[5] / 2, a[2] + a[5] / 2)
    zb = (b[2] - b[5] / 2, b[2] + b[5] / 2)
    dz = max(0.0, min(za[1], zb[1]) - max(za[0], zb[0]))
    inter = area_i * dz
    union = area_a * a[5] + area_b * b[5] - inter
    return float(inter / union)


def monte_carlo_iou(a, b, samples: int = 10_000_000, seed: int = 0) -> float:
    """Uniform random samples in a 3D bounding region of both boxes."""
    rng = np.random.default_rng(seed)
    ra = math.hypot(a[3], a[4]) / 2
    rb = math.hypot(b[3], b[4]) / 2
    lo = np.array([min(a[0] - ra, b[0] - rb), min(a[1] - ra, b[1] - rb),
                   min(a[2] - a[5] / 2, b[2] - b[5] / 2)])
    hi = np.array([max(a[0] + ra, b[0] + rb), max(a[1] + ra, b[1] + rb),
                   max(a[2] + a[5] / 2, b[2] + b[5] / 2)])
    in_a = in_b = None
    n_a = n_b = n_i = 0
    chunk = 1_000_000
    for start in range(0, samples, chunk):
        p = rng.uniform(lo, hi, size=(min(chunk, samples - start), 3))
        in_a = _inside(p, a)
        in_b = _inside(p, b)
        n_a += in_a.sum()
        n_b += in_b.sum()
        n_i += (in_a & in_b).sum()
    return n_i / (n_a + n_b - n_i)


def _inside(p, box):
    c, s = math.cos(box[6]), math.sin(box[6])
    dx, dy = p[:, 0] - box[0], p[:, 1] - box[1]
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return ((np.abs(lx) <= box[3] / 2) & (np.abs(ly) <= box[4] / 2)
            & (np.abs(p[:, 2] - box[2]) <= box[5] / 2))


def axis_aligned_iou(a, b) -> float:
    """Exact IOU for boxes whose yaw is a multiple of pi/2."""
    def ext(x):
        l, w = (x[3], x[4]) if round(x[6] / (math.pi / 2)) % 2 == 0 else (x[4], x[3])
        return [(x[0] - l / 2, x[0] + l / 2), (x[1] - w / 2, x[1] + w / 2),
                (x[2] - x[5] / 2, x[2] + x[5] / 2)]
    ea, eb = ext(a), ext(b)
    inter = 1.0
    for (a0, a1), (b0, b1) in zip(ea, eb):
        inter *= max(0.0, min(a1, b1) - max(a0, b0))
    va = a[3] * a[4] * a[5]
    vb = b[3] * b[4] * b[5]
    return inter / (va + vb - inter)


# ------------------------------------------------------------------ NMS --

def nms_reference(boxes, scores, sensors, iou, threshold):
    """Classic suppression-mask NMS. ``iou(i, j)`` gives pairwise IOU.
    Returns surviving input indices in visiting order."""
    n = len(boxes)
    m = np.array([[iou(i, j) for j in range(n)] for i in range(n)]).reshape(n, n)
    order = sorted(range(n), key=lambda i: (-scores[i], -1 if sensors[i] is None else sensors[i], i))
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(i)
        for j in order[pos + 1:]:
            if m[i, j] > threshold:
                suppressed[j] = True
    return keep


# ------------------------------------------------------------ matching --

def greedy_match_reference(ious, scores, kappa):
    """Literal greedy matcher on an IOU matrix (gt x det)."""
    n_gt, n_det = ious.shape
    taken = set()
    pairs = []
    for j in sorted(range(n_det), key=lambda j: (-scores[j], j)):
        cand = [i for i in range(n_gt) if i not in taken]
        if not cand:
            continue
        i = max(cand, key=lambda i: (ious[i, j], -i))
        if ious[i, j] >= kappa:
            taken.add(i)
            pairs.append((i, j))
    return pairs


def max_matching(ious, kappa) -> int:
    """Largest one-to-one matching with every pair at IOU >= kappa
    (exhaustive; small instances only)."""
    n_gt, n_det = ious.shape
    best = 0

    def rec(i, used, count):
        nonlocal best
        if count + (n_gt - i) <= best:
            return
        if i == n_gt:
            best = max(best, count)
            return
        for j in range(n_det):
            if j not in used and ious[i, j] >= kappa:
                rec(i + 1, used | {j}, count + 1)
        rec(i + 1, used, count)

    rec(0, frozenset(), 0)
    return best


# ------------------------------------------------------------------- AP --

def brute_force_ap(frames, kappa):
    """All-point interpolated AP by re-matching every frame from scratch at
    each score threshold.

    ``frames`` is a list of (gt_boxes, det_boxes, det_scores) with boxes as
    7-tuples with yaw a multiple of pi/2. Scores must be distinct.
    """
    n_gt = sum(len(g) for g, _, _ in frames)
    if n_gt == 0:
        return float("nan")
    taus = sorted({s for _, _, sc in frames for s in sc}, reverse=True)
    if not taus:
        return 0.0
    rs, ps = [], []
    for tau in taus:
        tp = fp = 0
        for gts, dets, scores in frames:
            keep = [j for j in range(len(dets)) if scores[j] >= tau]
            m = np.array([[axis_aligned_iou(g, dets[j]) for j in keep] for g in gts]).reshape(len(gts), len(keep))
            pairs = greedy_match_reference(m, [scores[j] for j in keep], kappa)
            tp += len(pairs)
            fp += len(keep) - len(pairs)
        rs.append(tp / n_gt)
        ps.append(tp / (tp + fp))
    ap = 0.0
    prev = 0.0
    for k in range(len(taus)):
        ap += (rs[k] - prev) * max(ps[k:])
        prev = rs[k]
    return ap


def all_subsets(ids):
    return [c for k in range(1, len(ids) + 1) for c in itertools.combinations(ids, k)]
