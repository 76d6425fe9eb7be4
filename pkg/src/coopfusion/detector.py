"""Detection stage.

The learned network is not part of this package. :class:`OracleDetector`
stands in for it: it looks at how many points of the cloud fall inside each
ground-truth box and emits a perturbed copy of that box whose error shrinks
and whose confidence grows with the point count. External detectors plug in
through the detection text format (:func:`load_external_detections`).

The voxel grouping and anchor grid used by the original network's data
preparation are provided as deterministic utilities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import CLASSES, OrientedBox3D, PointCloud, points_in_box


@dataclass(frozen=True)
class Detection:
    box: OrientedBox3D
    score: float
    source_sensor: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


# ---------------------------------------------------------------- voxels --

@dataclass(frozen=True)
class VoxelGridSpec:
    voxel_size: Tuple[float, float, float] = (0.2, 0.2, 0.4)
    max_points: int = 35
    # (xmin, ymin, zmin, xmax, ymax, zmax)
    extent: Tuple[float, float, float, float, float, float] = (-40, -20, -0.1, 40, 20, 4.0)

    def __post_init__(self):
        if min(self.voxel_size) <= 0:
            raise ValueError("voxel sizes must be positive")
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")
        e = self.extent
        if not (e[3] > e[0] and e[4] > e[1] and e[5] > e[2]):
            raise ValueError("degenerate voxel extent")

    @property
    def grid_shape(self) -> Tuple[int, int, int]:
        e = self.extent
        return tuple(int(math.ceil((e[i + 3] - e[i]) / self.voxel_size[i] - 1e-9))
                     for i in range(3))

    @classmethod
    def for_scenario(cls, name: str, area, height_range=(-0.1, 4.0)) -> "VoxelGridSpec":
        size = (0.4, 0.4, 0.4) if name == "roundabout" else (0.2, 0.2, 0.4)
        x0, y0, x1, y1 = area
        return cls(size, 35, (x0, y0, height_range[0], x1, y1, height_range[1]))


def voxelize(pc, spec: VoxelGridSpec, rng_seed=0) -> Dict[Tuple[int, int, int], np.ndarray]:
    """Group points into voxels by floor division from the extent origin.

    Voxels holding more than ``spec.max_points`` points keep a uniform random
    subset of that size. Keys are (ix, iy, iz); empty voxels are absent.
    """
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, float).reshape(-1, 3)
    origin = np.array(spec.extent[:3])
    idx = np.floor((pts - origin) / np.array(spec.voxel_size)).astype(np.int64)
    rng = np.random.default_rng(rng_seed)
    if len(pts) == 0:
        return {}
    keys, inverse = np.unique(idx, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    out = {}
    for k in range(len(keys)):
        members = order[bounds[k]:bounds[k + 1]]
        if len(members) > spec.max_points:
            members = np.sort(rng.choice(members, spec.max_points, replace=False))
        out[tuple(int(v) for v in keys[k])] = pts[members]
    return out


@dataclass(frozen=True)
class AnchorGridSpec:
    size: Tuple[float, float, float] = (3.9, 1.6, 1.56)
    orientations: Tuple[float, ...] = (0.0, math.pi / 2)
    stride: float = 0.4
    z_center: float = 1.0

    def __post_init__(self):
        if self.stride <= 0:
            raise ValueError("stride must be positive")


def anchor_counts(spec: AnchorGridSpec, area) -> Tuple[int, int]:
    x0, y0, x1, y1 = area
    nx = max(1, int(math.ceil((x1 - x0) / spec.stride - 1e-9)))
    ny = max(1, int(math.ceil((y1 - y0) / spec.stride - 1e-9)))
    return nx, ny


def anchor_grid(spec: AnchorGridSpec, area) -> List[OrientedBox3D]:
    """Anchors at (x0 + i*stride, y0 + j*stride), one per orientation."""
    x0, y0, _, _ = area
    nx, ny = anchor_counts(spec, area)
    return [OrientedBox3D((x0 + i * spec.stride, y0 + j * spec.stride, spec.z_center),
                          spec.size, yaw)
            for i in range(nx) for j in range(ny) for yaw in spec.orientations]


def anchor_array(spec: AnchorGridSpec, area) -> np.ndarray:
    """Same grid as :func:`anchor_grid` as an (N, 7) array
    (x, y, z, l, w, h, yaw); cheaper for large grids."""
    x0, y0, _, _ = area
    nx, ny = anchor_counts(spec, area)
    xs = x0 + np.arange(nx) * spec.stride
    ys = y0 + np.arange(ny) * spec.stride
    gx, gy, gyaw = np.meshgrid(xs, ys, np.asarray(spec.orientations), indexing="ij")
    n = gx.size
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(n, spec.z_center),
                            np.tile(spec.size, (n, 1)), gyaw.ravel()])


# ---------------------------------------------------------------- oracle --

@dataclass(frozen=True)
class DetectorParams:
    """Knobs of the oracle detector.

    Box errors are zero-mean normal with standard deviation ``scale / sqrt(n)``
    for an object holding ``n`` points. The score is
    ``logistic(score_slope * (log n - log score_half_density) + score_jitter * e)``
    where ``e`` is a per-object standard normal draw.
    """

    min_points: int = 20
    center_scale: float = 1.2
    size_scale: float = 0.5
    yaw_scale: float = 0.3
    score_slope: float = 1.5
    score_half_density: float = 40.0
    score_jitter: float = 0.1
    classes: Tuple[str, ...] = ("car",)
    nms_threshold: Optional[float] = 0.1
    false_positive_rate: float = 0.0
    false_positive_score: Tuple[float, float] = (0.05, 0.4)

    def __post_init__(self):
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")
        if min(self.center_scale, self.size_scale, self.yaw_scale) < 0:
            raise ValueError("noise scales must be non-negative")

    @classmethod
    def perfect(cls, **kw) -> "DetectorParams":
        """Noise-free detector that reports every observed object with score 1."""
        base = dict(min_points=1, center_scale=0.0, size_scale=0.0, yaw_scale=0.0,
                    score_half_density=0.0, score_jitter=0.0)
        base.update(kw)
        return cls(**base)

    def score(self, n, jitter=0.0):
        n = np.asarray(n, dtype=float)
        if self.score_half_density <= 0:
            return np.ones_like(n)
        z = self.score_slope * (np.log(n) - math.log(self.score_half_density)) \
            + self.score_jitter * np.asarray(jitter)
        return 1.0 / (1.0 + np.exp(-z))


def _object_rng(seed: int, frame_id: int, object_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(frame_id), int(object_id)])


def _gt_box(g):
    return g.box if hasattr(g, "box") else g


def _gt_id(g, k):
    return getattr(g, "object_id", k)


def detect_from_counts(counts: Sequence[int], ground_truth, params: DetectorParams,
                       rng_seed: int = 0, frame_id: int = 0,
                       source_sensor: Optional[int] = None) -> List[Detection]:
    """Oracle output given precomputed per-object point counts.

    ``counts[k]`` is the number of points inside ``ground_truth[k]``. Point
    counts are additive under concatenation of clouds, which lets sensor-set
    sweeps reuse per-sensor counts.
    """
    from .fusion import nms

    dets = []
    for k, g in enumerate(ground_truth):
        b = _gt_box(g)
        n = int(counts[k])
        if b.cls not in params.classes or n < params.min_points:
            continue
        rng = _object_rng(rng_seed, frame_id, _gt_id(g, k))
        # fixed draw order: same object -> same unit errors for any n
        e_c, e_s, e_yaw, e_score = rng.standard_normal(3), rng.standard_normal(3), \
            rng.standard_normal(), rng.standard_normal()
        k_n = 1.0 / math.sqrt(n)
        center = np.array(b.center) + params.center_scale * k_n * e_c
        size = np.maximum(np.array(b.size) + params.size_scale * k_n * e_s, 0.1)
        yaw = b.yaw + params.yaw_scale * k_n * e_yaw
        score = float(params.score(n, e_score))
        dets.append(Detection(OrientedBox3D(tuple(center), tuple(size), yaw, b.cls),
                              score, source_sensor))
    if params.false_positive_rate > 0:
        dets.extend(_false_positives(ground_truth, params, rng_seed, frame_id, source_sensor))
    if params.nms_threshold is not None:
        dets = nms(dets, params.nms_threshold)
    return dets


def _false_positives(ground_truth, params, seed, frame_id, source_sensor):
    boxes = [_gt_box(g) for g in ground_truth]
    if not boxes:
        return []
    sensor_tag = -1 if source_sensor is None else source_sensor
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(frame_id), 1_000_003, sensor_tag + 1])
    out = []
    lo, hi = params.false_positive_score
    for _ in range(rng.poisson(params.false_positive_rate)):
        ref = boxes[rng.integers(len(boxes))]
        center = np.array(ref.center) + np.r_[rng.uniform(-6, 6, 2), 0.0]
        out.append(Detection(OrientedBox3D(tuple(center), (4.3, 1.8, 1.6),
                                           rng.uniform(-math.pi, math.pi)),
                             float(rng.uniform(lo, hi)), source_sensor))
    return out


def count_points(pc, ground_truth) -> np.ndarray:
    return np.array([points_in_box(pc, _gt_box(g))[0] for g in ground_truth], dtype=int)


def oracle_detect(pc, ground_truth, params: DetectorParams = DetectorParams(),
                  rng_seed: int = 0, frame_id: int = 0,
                  source_sensor: Optional[int] = None) -> List[Detection]:
    """Detect every ground-truth object of a detectable class that holds at
    least ``params.min_points`` points of ``pc``."""
    return detect_from_counts(count_points(pc, ground_truth), ground_truth, params,
                              rng_seed, frame_id, source_sensor)


@dataclass
class OracleDetector:
    """Callable wrapper binding params and seed; ``detector(pc, gt, frame_id)``."""

    params: DetectorParams = field(default_factory=DetectorParams)
    seed: int = 0

    def __call__(self, pc, ground_truth, frame_id: int = 0,
                 source_sensor: Optional[int] = None) -> List[Detection]:
        return oracle_detect(pc, ground_truth, self.params, self.seed, frame_id, source_sensor)

    def from_counts(self, counts, ground_truth, frame_id: int = 0,
                    source_sensor: Optional[int] = None) -> List[Detection]:
        return detect_from_counts(counts, ground_truth, self.params, self.seed,
                                  frame_id, source_sensor)


# ------------------------------------------------------------ file format --

class DetectionFormatError(ValueError):
    pass


def format_detection(frame_id: int, d: Detection) -> str:
    b = d.box
    sid = -1 if d.source_sensor is None else d.source_sensor
    vals = list(b.center) + list(b.size) + [b.yaw, d.score]
    return f"{frame_id} {sid} {b.cls} " + " ".join(repr(float(v)) for v in vals)


def save_detections(path, frames: Iterable[Tuple[int, Sequence[Detection]]]) -> None:
    """Write ``(frame_id, detections)`` groups, one detection per line:
    ``frame_id sensor_id class cx cy cz l w h yaw score`` (sensor -1 = none)."""
    lines = [format_detection(fid, d) for fid, dets in frames for d in dets]
    Path(path).write_text("".join(line + "\n" for line in lines))


def parse_detection_line(line: str, lineno: int = 0):
    tok = line.split()
    if len(tok) != 11:
        raise DetectionFormatError(f"line {lineno}: expected 11 fields, got {len(tok)}")
    names = ("frame_id", "sensor_id", "class", "cx", "cy", "cz", "l", "w", "h", "yaw", "score")
    try:
        frame_id, sensor_id = int(tok[0]), int(tok[1])
    except ValueError:
        raise DetectionFormatError(f"line {lineno}: bad frame/sensor id") from None
    cls = tok[2]
    if cls not in CLASSES:
        raise DetectionFormatError(f"line {lineno}: unknown class {cls!r}")
    vals = []
    for name, t in zip(names[3:], tok[3:]):
        try:
            v = float(t)
        except ValueError:
            raise DetectionFormatError(f"line {lineno}: bad {name} value {t!r}") from None
        if not math.isfinite(v):
            raise DetectionFormatError(f"line {lineno}: non-finite {name}")
        vals.append(v)
    score = vals[-1]
    if not 0.0 <= score <= 1.0:
        raise DetectionFormatError(f"line {lineno}: score {score} outside [0, 1]")
    try:
        box = OrientedBox3D(tuple(vals[0:3]), tuple(vals[3:6]), vals[6], cls)
    except ValueError as e:
        raise DetectionFormatError(f"line {lineno}: {e}") from None
    return frame_id, Detection(box, score, None if sensor_id < 0 else sensor_id)


def load_external_detections(path, frame_id: Optional[int] = None,
                             sensor_id: Optional[int] = None) -> List[Detection]:
    """Read detections, optionally keeping a single frame and/or sensor.
    ``sensor_id=-1`` selects detections without a source sensor."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fid, det = parse_detection_line(line, lineno)
            if frame_id is not None and fid != frame_id:
                continue
            sid = -1 if det.source_sensor is None else det.source_sensor
            if sensor_id is not None and sid != sensor_id:
                continue
            out.append(det)
    return out
