"""Per-sensor preprocessing: move a cloud into the global frame, then crop it
to the detection area and the height band."""
from __future__ import annotations

from .geometry import PointCloud

GROUND_EPS = -0.1


def to_global(pc: PointCloud, sensor) -> PointCloud:
    if pc.frame != "sensor" or pc.source_sensor != sensor.id:
        raise ValueError(f"cloud in frame {pc.frame!r} (sensor {pc.source_sensor}) "
                         f"cannot be mapped with sensor {sensor.id}")
    return PointCloud(sensor.extrinsic.apply(pc.points), "global", sensor.id)


def to_sensor(pc: PointCloud, sensor) -> PointCloud:
    if pc.frame != "global":
        raise ValueError("expected a global-frame cloud")
    return PointCloud(sensor.extrinsic.inverse().apply(pc.points), "sensor", sensor.id)


def crop(pc: PointCloud, area, height_cutoff: float = 4.0,
         floor: float = GROUND_EPS) -> PointCloud:
    """Keep points inside the area rectangle (edges included) with
    ``floor <= z <= height_cutoff``. Order is preserved."""
    if pc.frame != "global":
        raise ValueError("crop expects a global-frame cloud")
    x0, y0, x1, y1 = area
    p = pc.points
    keep = ((p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)
            & (p[:, 2] <= height_cutoff) & (p[:, 2] >= floor))
    return PointCloud(p[keep], "global", pc.source_sensor)


def preprocess(pc: PointCloud, sensor, area, height_cutoff: float = 4.0) -> PointCloud:
    """Sensor-frame cloud in, cropped global-frame cloud out."""
    if pc.frame == "sensor":
        pc = to_global(pc, sensor)
    return crop(pc, area, height_cutoff)
