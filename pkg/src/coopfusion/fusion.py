"""Early, late and hybrid fusion at the central fusion system."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .detector import Detection
from .geometry import PointCloud
from .metrics import iou3d

SCHEMES = ("early", "late", "hybrid")


@dataclass(frozen=True)
class FusionConfig:
    scheme: str = "late"
    nms_iou_threshold: float = 0.1
    hybrid_radius: float = 20.0
    # central NMS in hybrid fusion; None reuses nms_iou_threshold
    hybrid_nms_threshold: Optional[float] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.nms_iou_threshold < 1:
            raise ValueError("nms_iou_threshold must lie in (0, 1)")
        if self.hybrid_radius < 0:
            raise ValueError("hybrid_radius must be >= 0")

    @property
    def central_threshold(self) -> float:
        t = self.hybrid_nms_threshold
        return self.nms_iou_threshold if t is None else t


@dataclass
class SensorOutput:
    """What one sensor node has locally: its cropped global-frame cloud, the
    detections computed from it, and its mounting position."""

    cloud: PointCloud
    detections: List[Detection]
    position: Sequence[float]
    sensor_id: Optional[int] = None


def early_fuse(clouds: Sequence[PointCloud]) -> PointCloud:
    """Concatenate global-frame clouds in input order."""
    for c in clouds:
        if c.frame != "global":
            raise ValueError("early fusion needs global-frame clouds")
    if not clouds:
        return PointCloud.empty()
    return PointCloud(np.concatenate([c.points for c in clouds], axis=0), "global")


def _nms_order(detections):
    def key(i):
        d = detections[i]
        sid = d.source_sensor if d.source_sensor is not None else -1
        return (-d.score, sid, i)
    return sorted(range(len(detections)), key=key)


def nms(detections: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Greedy non-maximum suppression with 3D IOU.

    Candidates are visited by descending score (ties: lower sensor id, then
    input position); a box survives when its IOU with every kept box is at
    most ``iou_threshold``.
    """
    kept: List[Detection] = []
    for i in _nms_order(detections):
        d = detections[i]
        if all(iou3d(d.box, k.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def late_fuse(per_sensor_detections: Sequence[Sequence[Detection]],
              cfg: FusionConfig = FusionConfig()) -> List[Detection]:
    merged = [d for dets in per_sensor_detections for d in dets]
    return nms(merged, cfg.nms_iou_threshold)


def far_field(cloud: PointCloud, position, radius: float) -> PointCloud:
    """Points whose horizontal distance to ``position`` exceeds ``radius``.
    A zero radius keeps the whole cloud."""
    if radius <= 0:
        return cloud
    p = cloud.points
    d2 = (p[:, 0] - position[0]) ** 2 + (p[:, 1] - position[1]) ** 2
    return PointCloud(p[d2 > radius * radius], cloud.frame, cloud.source_sensor)


def hybrid_fuse(per_sensor: Sequence[SensorOutput], cfg: FusionConfig,
                detector: Callable[[PointCloud], List[Detection]]) -> List[Detection]:
    """Late fusion of every sensor's boxes plus a central detection over the
    early-fused far-field points of all sensors."""
    far = [far_field(s.cloud, s.position, cfg.hybrid_radius) for s in per_sensor]
    central = early_fuse(far)
    central_dets = detector(central) if len(central) else []
    boxes = [d for s in per_sensor for d in s.detections]
    return nms(list(central_dets) + boxes, cfg.central_threshold)
