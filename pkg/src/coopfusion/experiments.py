"""Evaluation protocol: scheme comparison, sensor-set sweeps, ROI studies and
point-density analyses, all driven frame by frame."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .comms import EncodingConfig, SensorPayload, cost_of_frames
from .detector import DetectorParams, OracleDetector, count_points
from .fusion import FusionConfig, SensorOutput, early_fuse, far_field, hybrid_fuse, late_fuse, nms
from .metrics import PRCurve, average_precision, ap_from_curve, match, pr_curve, restrict
from .preprocess import crop
from .scene import Frame, ScenarioConfig

DEFAULT_KAPPAS = (0.7, 0.8, 0.9)
MAX_SWEEP_SENSORS = 8


@dataclass
class ExperimentSpec:
    scenario: str = "t_junction"        # shipped name or config path
    frames: int = 200
    seed: int = 0
    schemes: Tuple[str, ...] = ("early", "hybrid", "late")
    sensor_sets: object = None          # list of id tuples, "all_subsets" or None (= all sensors)
    kappas: Tuple[float, ...] = DEFAULT_KAPPAS
    roi: Optional[Tuple[float, float, float, float]] = None
    radius: Optional[float] = None      # hybrid radius; None = scenario default
    out: Optional[str] = None
    detector: DetectorParams = field(default_factory=DetectorParams)

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if not all(0 < k < 1 for k in self.kappas):
            raise ValueError("kappas must lie in (0, 1)")


@dataclass
class FrameObservation:
    """One frame after per-sensor preprocessing, with the per-object point
    counts every scheme needs."""

    frame_id: int
    ground_truth: list
    clouds: Dict[int, object]          # cropped global clouds
    positions: Dict[int, np.ndarray]
    radius: float
    counts: Dict[int, np.ndarray] = field(default_factory=dict)
    far_counts: Dict[int, np.ndarray] = field(default_factory=dict)
    far_points: Dict[int, int] = field(default_factory=dict)

    @classmethod
    def from_frame(cls, frame: Frame, cfg: ScenarioConfig, radius: Optional[float] = None,
                   sensor_ids: Optional[Iterable[int]] = None) -> "FrameObservation":
        radius = cfg.hybrid_radius if radius is None else radius
        ids = list(cfg.sensor_ids if sensor_ids is None else sensor_ids)
        clouds = {sid: crop(frame.clouds[sid], cfg.detection_area, cfg.height_cutoff) for sid in ids}
        positions = {sid: cfg.sensor(sid).position for sid in ids}
        obs = cls(frame.frame_id, list(frame.ground_truth), clouds, positions, radius)
        for sid in ids:
            obs.counts[sid] = count_points(clouds[sid], obs.ground_truth)
            far = far_field(clouds[sid], positions[sid], radius)
            obs.far_counts[sid] = count_points(far, obs.ground_truth)
            obs.far_points[sid] = len(far)
        return obs


def _observe_one(args):
    root, fid, radius = args
    from .dataset import Dataset
    ds = Dataset(root)
    return FrameObservation.from_frame(ds.frame(fid), ds.scenario, radius)


def load_observations(dataset, radius: Optional[float] = None, frames: Optional[int] = None,
                      workers: int = 1) -> List[FrameObservation]:
    """Preprocess the first ``frames`` frames of a :class:`~coopfusion.dataset.Dataset`.

    With ``workers > 1`` frames are processed in a process pool; the result
    is ordered by frame id, so it does not depend on the worker count.
    """
    n = len(dataset) if frames is None else min(frames, len(dataset))
    if workers <= 1:
        return [FrameObservation.from_frame(dataset.frame(i), dataset.scenario, radius)
                for i in range(n)]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_observe_one, [(str(dataset.root), i, radius) for i in range(n)]))


def eval_ground_truth(obs: FrameObservation, area, classes=("car",)):
    return restrict([g for g in obs.ground_truth if g.cls in classes], area)


class SchemeRunner:
    """Runs the fusion schemes on a :class:`FrameObservation`.

    Per-sensor detections are cached per frame. ``fast`` early fusion uses the
    additivity of point counts under concatenation instead of re-counting the
    fused cloud; both paths give identical detections.
    """

    def __init__(self, detector: OracleDetector, fusion: FusionConfig = FusionConfig()):
        self.detector = detector
        self.fusion = fusion
        self._cache: Dict[Tuple[int, int], list] = {}

    def sensor_detections(self, obs: FrameObservation, sid: int):
        key = (obs.frame_id, sid)
        if key not in self._cache:
            self._cache[key] = self.detector.from_counts(obs.counts[sid], obs.ground_truth,
                                                         obs.frame_id, sid)
        return self._cache[key]

    def clear(self):
        self._cache.clear()

    def early(self, obs, ids, fast=False):
        if fast:
            counts = np.sum([obs.counts[s] for s in ids], axis=0)
            return self.detector.from_counts(counts, obs.ground_truth, obs.frame_id)
        fused = early_fuse([obs.clouds[s] for s in ids])
        return self.detector(fused, obs.ground_truth, obs.frame_id)

    def late(self, obs, ids):
        return late_fuse([self.sensor_detections(obs, s) for s in ids], self.fusion)

    def hybrid(self, obs, ids, fast=False):
        if fast:
            counts = np.sum([obs.far_counts[s] for s in ids], axis=0)
            central = self.detector.from_counts(counts, obs.ground_truth, obs.frame_id) \
                if any(obs.far_points[s] for s in ids) else []
            boxes = [d for s in ids for d in self.sensor_detections(obs, s)]
            return nms(central + boxes, self.fusion.central_threshold)
        outputs = [SensorOutput(obs.clouds[s], self.sensor_detections(obs, s), obs.positions[s], s)
                   for s in ids]
        det = lambda pc: self.detector(pc, obs.ground_truth, obs.frame_id)  # noqa: E731
        return hybrid_fuse(outputs, FusionConfig("hybrid", self.fusion.nms_iou_threshold,
                                                 obs.radius, self.fusion.hybrid_nms_threshold), det)

    def run(self, scheme, obs, ids, fast=False):
        if scheme == "early":
            return self.early(obs, ids, fast)
        if scheme == "late":
            return self.late(obs, ids)
        if scheme == "hybrid":
            return self.hybrid(obs, ids, fast)
        raise ValueError(f"unknown scheme {scheme!r}")

    def payloads(self, scheme, obs, ids) -> Dict[int, SensorPayload]:
        out = {}
        for s in ids:
            n_boxes = len(self.sensor_detections(obs, s))
            if scheme == "early":
                out[s] = SensorPayload(len(obs.clouds[s]), 0)
            elif scheme == "late":
                out[s] = SensorPayload(0, n_boxes)
            else:
                out[s] = SensorPayload(obs.far_points[s], n_boxes)
        return out


# ----------------------------------------------------------- comparisons --

@dataclass
class SchemeResult:
    scheme: str
    ap: Dict[float, float]
    kbit_per_sensor: float
    ms_per_frame: float
    curve: Optional[PRCurve] = None


def compare_schemes(observations: Sequence[FrameObservation], area, runner: SchemeRunner,
                    schemes=("early", "hybrid", "late"), kappas=DEFAULT_KAPPAS,
                    sensor_ids=None, enc: EncodingConfig = EncodingConfig()) -> List[SchemeResult]:
    results = []
    for scheme in schemes:
        gts, dets, payloads = [], [], []
        elapsed = 0.0
        for obs in observations:
            ids = list(obs.clouds) if sensor_ids is None else list(sensor_ids)
            t0 = time.perf_counter()
            d = runner.run(scheme, obs, ids)
            elapsed += time.perf_counter() - t0
            gts.append(eval_ground_truth(obs, area))
            dets.append(restrict(d, area))
            payloads.append(runner.payloads(scheme, obs, ids))
        ap = {k: average_precision(gts, dets, k) for k in kappas}
        cost = cost_of_frames(scheme, payloads, enc)
        results.append(SchemeResult(scheme, ap, cost.kbit_per_sensor,
                                    1000.0 * elapsed / max(len(observations), 1),
                                    pr_curve(gts, dets, kappas[0])))
    return results


def all_subsets(ids: Sequence[int]) -> List[Tuple[int, ...]]:
    ids = sorted(ids)
    if len(ids) > MAX_SWEEP_SENSORS:
        raise ValueError(f"all_subsets is limited to {MAX_SWEEP_SENSORS} sensors")
    return [c for k in range(1, len(ids) + 1) for c in itertools.combinations(ids, k)]


@dataclass
class SweepRow:
    sensors: Tuple[int, ...]
    ap_early: float
    ap_late: float
    curve_early: PRCurve


def sensor_sweep(observations: Sequence[FrameObservation], area, runner: SchemeRunner,
                 sensor_sets: Sequence[Tuple[int, ...]], kappa: float = 0.7) -> List[SweepRow]:
    rows = []
    gts = [eval_ground_truth(o, area) for o in observations]
    for ids in sensor_sets:
        early = [restrict(runner.early(o, ids, fast=True), area) for o in observations]
        late = [restrict(runner.late(o, ids), area) for o in observations]
        curve = pr_curve(gts, early, kappa)
        rows.append(SweepRow(tuple(ids), ap_from_curve(curve), average_precision(gts, late, kappa), curve))
    return rows


def best_per_cardinality(rows: Sequence[SweepRow], top: int = 3) -> Dict[int, List[SweepRow]]:
    by_k: Dict[int, List[SweepRow]] = {}
    for r in rows:
        by_k.setdefault(len(r.sensors), []).append(r)
    # ties keep enumeration order
    return {k: sorted(v, key=lambda r: -r.ap_early)[:top] for k, v in sorted(by_k.items())}


def roi_study(observations: Sequence[FrameObservation], roi, runner: SchemeRunner,
              pair: Tuple[int, int], kappa: float = 0.7) -> List[Tuple[Tuple[int, ...], float]]:
    """Early-fusion AP inside ``roi`` for each sensor of ``pair`` and the pair.
    AP is NaN when the ROI holds no ground truth."""
    out = []
    gts = [eval_ground_truth(o, roi) for o in observations]
    for ids in [(pair[0],), (pair[1],), tuple(pair)]:
        dets = [restrict(runner.early(o, ids), roi) for o in observations]
        out.append((ids, average_precision(gts, dets, kappa)))
    return out


def densities(observations: Sequence[FrameObservation], ids, area) -> np.ndarray:
    """Point density of every evaluated ground-truth object under early
    fusion of ``ids``."""
    out = []
    for o in observations:
        keep = {id(g) for g in eval_ground_truth(o, area)}
        total = np.sum([o.counts[s] for s in ids], axis=0)
        out.extend(int(total[k]) for k, g in enumerate(o.ground_truth) if id(g) in keep)
    return np.asarray(out, dtype=int)


def density_iou_pairs(observations: Sequence[FrameObservation], ids, area, runner: SchemeRunner,
                      kappa: float = 0.01):
    """(density, IOU) of each matched ground-truth object under early fusion."""
    dens, ious = [], []
    for o in observations:
        gts = eval_ground_truth(o, area)
        total = np.sum([o.counts[s] for s in ids], axis=0)
        index = {id(g): k for k, g in enumerate(o.ground_truth)}
        dets = restrict(runner.early(o, ids, fast=True), area)
        m = match(gts, dets, kappa)
        for i, _, v in m.pairs:
            dens.append(int(total[index[id(gts[i])]]))
            ious.append(v)
    return np.asarray(dens), np.asarray(ious)


# --------------------------------------------------------------- writers --

def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = ["\t".join(header)] + ["\t".join(_fmt(v) for v in r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path) -> List[Dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split("\t")
    return [dict(zip(head, ln.split("\t"))) for ln in lines[1:] if ln]


def write_pr_curve(path, curve: PRCurve) -> None:
    write_table(path, ("tau", "precision", "recall"),
                [(t, p, r) for r, p, t in curve.points])
