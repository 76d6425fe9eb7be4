import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopfusion.detector import Detection, DetectorParams, OracleDetector
from coopfusion.fusion import (FusionConfig, SensorOutput, early_fuse, far_field, hybrid_fuse,
                               late_fuse, nms)
from coopfusion.geometry import OrientedBox3D, PointCloud
from coopfusion.metrics import iou3d
from oracles import nms_reference


def d(x, y, score, sensor=None, yaw=0.0, l=4.0):
    return Detection(OrientedBox3D((x, y, 0.8), (l, 1.8, 1.6), yaw), score, sensor)


def random_dets(rng, n, tie_scores=False):
    out = []
    for _ in range(n):
        score = float(rng.integers(0, 4)) / 4 if tie_scores else float(rng.random())
        sensor = None if rng.random() < 0.2 else int(rng.integers(0, 6))
        out.append(Detection(OrientedBox3D((rng.uniform(0, 12), rng.uniform(0, 12), 0.8),
                                           (rng.uniform(1, 5), rng.uniform(1, 2.5), 1.6),
                                           rng.uniform(-math.pi, math.pi)), score, sensor))
    return out


# ------------------------------------------------------------- early fuse --

def test_early_fuse_counts():
    a = PointCloud(np.ones((3, 3)))
    b = PointCloud(np.zeros((2, 3)))
    assert np.array_equal(early_fuse([a, PointCloud.empty()]).points, a.points)
    assert len(early_fuse([a, b])) == 5
    assert len(early_fuse([])) == 0
    ab = early_fuse([a, b]).points
    ba = early_fuse([b, a]).points
    assert sorted(map(tuple, ab)) == sorted(map(tuple, ba))
    with pytest.raises(ValueError):
        early_fuse([PointCloud(np.ones((1, 3)), "sensor", 0)])


# -------------------------------------------------------------------- NMS --

def test_nms_identical_boxes():
    out = nms([d(0, 0, 0.8), d(0, 0, 0.9)], 0.1)
    assert [x.score for x in out] == [0.9]


def test_nms_disjoint():
    assert len(nms([d(0, 0, 0.8), d(20, 0, 0.9)], 0.1)) == 2


def test_nms_tie_break():
    a, b, c = d(0, 0, 0.5, sensor=3), d(0.1, 0, 0.5, sensor=1), d(0.2, 0, 0.5)
    assert nms([a, b, c], 0.1) == [c]
    assert nms([a, b], 0.1) == [b]
    # same sensor: input order decides
    e, f = d(0, 0, 0.5, 2), d(0.1, 0, 0.5, 2)
    assert nms([f, e], 0.1) == [f]


def test_nms_vs_reference_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        dets = random_dets(rng, int(rng.integers(0, 12)), tie_scores=rng.random() < 0.5)
        keep = nms_reference([x.box for x in dets], [x.score for x in dets],
                             [x.source_sensor for x in dets],
                             lambda i, j: iou3d(dets[i].box, dets[j].box), 0.1)
        assert nms(dets, 0.1) == [dets[i] for i in keep]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 0.9))
def test_nms_properties(seed, thr):
    rng = np.random.default_rng(seed)
    dets = random_dets(rng, 15)
    out = nms(dets, thr)
    assert all(any(o is x for x in dets) for o in out)
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            assert iou3d(out[i].box, out[j].box) <= thr
    assert [o.score for o in out] == sorted((o.score for o in out), reverse=True)
    # every dropped box overlaps a kept one
    for x in dets:
        if not any(o is x for o in out):
            assert any(iou3d(x.box, o.box) > thr for o in out)


# -------------------------------------------------------------- late fuse --

def test_late_fuse_suppresses_duplicate():
    s1 = [d(0, 0, 0.9, 0)]
    s2 = [d(0.3, 0.1, 0.7, 1)]
    out = late_fuse([s1, s2])
    assert out == s1


def test_late_fuse_single_sensor_and_union():
    s1 = [d(0, 0, 0.9, 0), d(0.1, 0, 0.8, 0), d(30, 0, 0.3, 0)]
    assert late_fuse([s1]) == nms(s1, 0.1)
    s2 = [d(-30, 0, 0.5, 1)]
    assert {id(x) for x in late_fuse([[s1[2]], s2])} == {id(s1[2]), id(s2[0])}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_late_fuse_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    per = [random_dets(rng, 5) for _ in range(3)]
    for k, lst in enumerate(per):
        per[k] = [Detection(x.box, x.score, k) for x in lst]
    a = late_fuse(per)
    b = late_fuse(per[::-1])
    assert a == b


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig("mid")
    with pytest.raises(ValueError):
        FusionConfig(nms_iou_threshold=1.0)
    with pytest.raises(ValueError):
        FusionConfig(hybrid_radius=-1)
    assert FusionConfig(hybrid_nms_threshold=0.3).central_threshold == 0.3
    assert FusionConfig().central_threshold == 0.1


# ----------------------------------------------------------------- hybrid --

def test_far_field():
    pc = PointCloud([[3, 4, 0], [30, 40, 0], [0, 0, 9]])
    assert far_field(pc, [0, 0, 5], 5.0).points.tolist() == [[30, 40, 0]]
    assert len(far_field(pc, [0, 0, 5], 0.0)) == 3


def _scene(rng):
    from coopfusion.scene import GroundTruthObject
    gt = [GroundTruthObject(OrientedBox3D((x, 0.0, 0.8), (4.2, 1.8, 1.6)), k)
          for k, x in enumerate((-25.0, -5.0, 15.0, 35.0))]
    positions = [np.array([-30.0, 5.0, 5.2]), np.array([30.0, 5.0, 5.2])]
    clouds = []
    for p in positions:
        pts = []
        for g in gt:
            n = int(rng.integers(0, 80))
            pts.append(np.array(g.box.center) + rng.uniform(-0.5, 0.5, (n, 3)) * [4, 1.6, 1.4])
        clouds.append(PointCloud(np.concatenate(pts)))
    return gt, positions, clouds


@pytest.mark.parametrize("seed", range(5))
def test_hybrid_limits(seed):
    rng = np.random.default_rng(seed)
    gt, positions, clouds = _scene(rng)
    det = OracleDetector(DetectorParams(), seed)
    per = [SensorOutput(c, det(c, gt, 0, k), p, k) for k, (c, p) in enumerate(zip(clouds, positions))]
    central = lambda pc: det(pc, gt, 0)  # noqa: E731
    late = late_fuse([s.detections for s in per])
    assert hybrid_fuse(per, FusionConfig("hybrid", hybrid_radius=1e9), central) == late
    at_zero = hybrid_fuse(per, FusionConfig("hybrid", hybrid_radius=0.0), central)
    want = nms(central(early_fuse(clouds)) + [x for s in per for x in s.detections], 0.1)
    assert at_zero == want


def test_hybrid_recall_at_least_late_with_perfect_detector():
    from coopfusion.metrics import match
    rng = np.random.default_rng(9)
    det = OracleDetector(DetectorParams.perfect(min_points=20))
    hits_h = hits_l = 0
    for _ in range(10):
        gt, positions, clouds = _scene(rng)
        per = [SensorOutput(c, det(c, gt, 0, k), p, k) for k, (c, p) in enumerate(zip(clouds, positions))]
        h = hybrid_fuse(per, FusionConfig("hybrid", hybrid_radius=20), lambda pc: det(pc, gt, 0))
        lt = late_fuse([s.detections for s in per])
        hits_h += match(gt, h, 0.7).tp
        hits_l += match(gt, lt, 0.7).tp
    assert hits_h >= hits_l
