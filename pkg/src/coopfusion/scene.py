"""Synthetic scenarios: sensor layouts, traffic, and noisy depth rendering.

Shipped layouts live in ``coopfusion/data/*.yaml``. Sensor poses in those
files are hand-tuned data (full coverage of the detection area with
overlapping fields of view), not measured values.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .geometry import (CLASSES, CameraIntrinsics, OrientedBox3D, PointCloud,
                       RigidTransform, camera_to_global, depth_to_pointcloud,
                       ray_box_distances)
from .metrics import bev_iou

SCENARIOS = ("t_junction", "roundabout")

DEFAULT_SIZES = {
    "car": ((3.8, 4.8), (1.7, 2.0), (1.4, 1.8)),
    "cyclist": ((1.7, 1.9), (0.6, 0.8), (1.6, 1.8)),
    "pedestrian": ((0.4, 0.6), (0.4, 0.6), (1.6, 1.9)),
}
DEFAULT_SPEEDS = {"car": (5.0, 9.0), "cyclist": (3.0, 5.0), "pedestrian": (1.0, 1.6)}

_MAX_SPAWN_ATTEMPTS = 100


@dataclass(frozen=True)
class SensorConfig:
    id: int
    intrinsics: CameraIntrinsics
    extrinsic: RigidTransform
    mount_height: float
    yaw_deg: Optional[float] = None
    pitch_deg: Optional[float] = None

    def __post_init__(self):
        if not self.mount_height > 0:
            raise ValueError("mount_height must be positive")
        if abs(self.extrinsic.translation[2] - self.mount_height) > 1e-9:
            raise ValueError("extrinsic height differs from mount_height")

    @classmethod
    def from_pose(cls, id: int, x: float, y: float, mount_height: float,
                  yaw_deg: float, pitch_deg: float,
                  intrinsics: CameraIntrinsics) -> "SensorConfig":
        ext = camera_to_global((x, y, mount_height), math.radians(yaw_deg), math.radians(pitch_deg))
        return cls(id, intrinsics, ext, mount_height, yaw_deg, pitch_deg)

    @property
    def position(self) -> np.ndarray:
        return self.extrinsic.translation


@dataclass
class ScenarioConfig:
    name: str
    detection_area: Tuple[float, float, float, float]
    sensors: List[SensorConfig]
    max_objects: int = 30
    spawn_probabilities: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    object_lifespan_frames: int = 4
    noise_sigma: float = 0.015
    height_cutoff: float = 4.0
    max_range: float = 120.0
    downsample_factor: int = 2
    hybrid_radius: float = 20.0
    frame_interval: float = 0.5
    vehicle_paths: List[np.ndarray] = field(default_factory=list)
    pedestrian_paths: List[np.ndarray] = field(default_factory=list)
    class_sizes: Dict[str, tuple] = field(default_factory=lambda: dict(DEFAULT_SIZES))
    class_speeds: Dict[str, tuple] = field(default_factory=lambda: dict(DEFAULT_SPEEDS))

    def __post_init__(self):
        self.detection_area = tuple(float(v) for v in self.detection_area)
        self.vehicle_paths = [np.asarray(p, dtype=float) for p in self.vehicle_paths]
        self.pedestrian_paths = [np.asarray(p, dtype=float) for p in self.pedestrian_paths]
        self.validate()

    def validate(self) -> None:
        if self.name not in SCENARIOS + ("custom",):
            raise ValueError(f"unknown scenario name {self.name!r}")
        x0, y0, x1, y1 = self.detection_area
        if not (x1 > x0 and y1 > y0):
            raise ValueError("degenerate detection area")
        if not self.sensors:
            raise ValueError("scenario needs at least one sensor")
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ValueError("sensor ids must be unique")
        p = np.asarray(self.spawn_probabilities, dtype=float)
        if p.shape != (3,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("spawn probabilities must be 3 non-negative values summing to 1")
        if self.max_objects < 0 or self.object_lifespan_frames < 1:
            raise ValueError("bad max_objects / object_lifespan_frames")
        if self.noise_sigma < 0 or self.max_range <= 0:
            raise ValueError("bad noise_sigma / max_range")

    @property
    def area_size(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.detection_area
        return x1 - x0, y1 - y0

    def sensor(self, sensor_id: int) -> SensorConfig:
        for s in self.sensors:
            if s.id == sensor_id:
                return s
        raise KeyError(f"no sensor {sensor_id}")

    @property
    def sensor_ids(self) -> List[int]:
        return [s.id for s in self.sensors]

    def subset(self, ids: Sequence[int]) -> "ScenarioConfig":
        ids = set(ids)
        missing = ids - set(self.sensor_ids)
        if missing:
            raise ValueError(f"unknown sensor ids {sorted(missing)}")
        d = dict(self.__dict__)
        d["sensors"] = [s for s in self.sensors if s.id in ids]
        return ScenarioConfig(**d)

    # ----------------------------------------------------------- file io --

    def to_dict(self) -> dict:
        sensors = []
        for s in self.sensors:
            if s.yaw_deg is None:
                raise ValueError("only pose-built sensors can be serialised")
            x, y, _ = s.position
            sensors.append({"id": s.id, "x": float(x), "y": float(y),
                            "mount_height": s.mount_height, "yaw_deg": s.yaw_deg,
                            "pitch_deg": s.pitch_deg,
                            "resolution": [s.intrinsics.width, s.intrinsics.height],
                            "hfov_deg": s.intrinsics.hfov_deg})
        return {
            "name": self.name,
            "detection_area": list(self.detection_area),
            "sensors": sensors,
            "max_objects": self.max_objects,
            "spawn_probabilities": list(self.spawn_probabilities),
            "object_lifespan_frames": self.object_lifespan_frames,
            "noise_sigma": self.noise_sigma,
            "height_cutoff": self.height_cutoff,
            "max_range": self.max_range,
            "downsample_factor": self.downsample_factor,
            "hybrid_radius": self.hybrid_radius,
            "frame_interval": self.frame_interval,
            "vehicle_paths": [p.tolist() for p in self.vehicle_paths],
            "pedestrian_paths": [p.tolist() for p in self.pedestrian_paths],
            "class_sizes": {k: [list(r) for r in v] for k, v in self.class_sizes.items()},
            "class_speeds": {k: list(v) for k, v in self.class_speeds.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        sensors = []
        for s in d.pop("sensors", []):
            w, h = s.get("resolution", (400, 300))
            intr = CameraIntrinsics.from_fov(int(w), int(h), float(s.get("hfov_deg", 90.0)))
            sensors.append(SensorConfig.from_pose(int(s["id"]), s["x"], s["y"], s["mount_height"],
                                                  s["yaw_deg"], s["pitch_deg"], intr))
        if "class_sizes" in d:
            d["class_sizes"] = {k: tuple(tuple(r) for r in v) for k, v in d["class_sizes"].items()}
        if "class_speeds" in d:
            d["class_speeds"] = {k: tuple(v) for k, v in d["class_speeds"].items()}
        if "spawn_probabilities" in d:
            d["spawn_probabilities"] = tuple(d["spawn_probabilities"])
        return cls(sensors=sensors, **d)


_HEADER = """\
# Scenario configuration.
# Units: lengths in meters, angles in degrees, frame_interval in seconds,
# speeds in m/s. detection_area is [xmin, ymin, xmax, ymax] in the global
# frame (z up). Sensor yaw is the heading of the optical axis measured
# counter-clockwise from +x; pitch is the downward tilt.
"""


def save_scenario(cfg: ScenarioConfig, path) -> None:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
    Path(path).write_text(_HEADER + text)


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        return ScenarioConfig.from_dict(yaml.safe_load(fh))


def build_scenario(name: str, **overrides) -> ScenarioConfig:
    """Shipped scenario by name. ``custom`` builds from ``overrides`` alone."""
    if name == "custom":
        overrides.setdefault("sensors", [])
        overrides.setdefault("detection_area", (-40.0, -20.0, 40.0, 20.0))
        return ScenarioConfig(name="custom", **overrides)
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}")
    text = resources.files("coopfusion").joinpath("data", f"{name}.yaml").read_text()
    d = yaml.safe_load(text)
    d.update(overrides)
    return ScenarioConfig.from_dict(d)


def resolve_scenario(name_or_path) -> ScenarioConfig:
    if str(name_or_path) in SCENARIOS:
        return build_scenario(str(name_or_path))
    return load_scenario(name_or_path)


# ------------------------------------------------------------- traffic --

@dataclass(frozen=True)
class GroundTruthObject:
    box: OrientedBox3D
    object_id: int

    @property
    def cls(self) -> str:
        return self.box.cls


class _Path:
    def __init__(self, pts: np.ndarray):
        self.pts = pts
        seg = np.diff(pts, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.heading = np.arctan2(seg[:, 1], seg[:, 0])
        self.length = float(self.cum[-1])

        self._cum = self.cum.tolist()
        self._xy = pts[:, :2].tolist()
        self._heading = self.heading.tolist()
        self._seg = self.seg_len.tolist()

    def at(self, s: float) -> Tuple[float, float, float]:
        i = min(max(bisect.bisect_right(self._cum, s) - 1, 0), len(self._seg) - 1)
        t = (s - self._cum[i]) / self._seg[i]
        (x0, y0), (x1, y1) = self._xy[i], self._xy[i + 1]
        return x0 + t * (x1 - x0), y0 + t * (y1 - y0), self._heading[i]


@dataclass
class _Agent:
    object_id: int
    cls: str
    size: Tuple[float, float, float]
    path: _Path
    s0: float
    step: float
    birth: int

    def box_at(self, frame: int) -> OrientedBox3D:
        x, y, yaw = self.path.at(self.s0 + self.step * (frame - self.birth))
        return OrientedBox3D((x, y, self.size[2] / 2.0), self.size, yaw, self.cls)

    @property
    def radius(self) -> float:
        return math.hypot(self.size[0], self.size[1]) / 2.0


class TrafficSimulator:
    """Frame-by-frame object population.

    Objects live exactly ``object_lifespan_frames`` frames and move at constant
    speed along piecewise-linear paths. A new object is accepted only if its
    footprint never overlaps a living object during their common lifetime. Each
    free slot draws its class once, then tries at most 100 placements before
    staying empty for the frame. Objects alive at frame 0 get
    random ages so that departures are staggered.
    """

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = int(seed)
        self.frame = -1
        self.agents: List[_Agent] = []
        self._next_id = 0
        self.drawn = {c: 0 for c in CLASSES}
        self._vehicle = [_Path(p) for p in cfg.vehicle_paths]
        self._walk = [_Path(p) for p in cfg.pedestrian_paths]
        if not self._vehicle and not self._walk:
            raise ValueError("scenario defines no paths to spawn objects on")

    def _sample(self, rng: np.random.Generator, frame: int, cls: str) -> _Agent:
        cfg = self.cfg
        life = cfg.object_lifespan_frames
        paths = self._walk if cls == "pedestrian" else self._vehicle
        if not paths:
            paths = self._vehicle or self._walk
        path = paths[rng.integers(len(paths))]
        if cls == "pedestrian" and rng.random() < 0.5:
            path = _Path(path.pts[::-1].copy())
        size = tuple(float(rng.uniform(*r)) for r in cfg.class_sizes[cls])
        step = float(rng.uniform(*cfg.class_speeds[cls])) * cfg.frame_interval
        age = int(rng.integers(life)) if frame == 0 else 0
        travel = step * (life - 1)
        s0 = float(rng.uniform(0.0, max(path.length - travel, 0.0)))
        return _Agent(-1, cls, size, path, s0, step, frame - age)

    def _fits(self, new: _Agent, frame: int) -> bool:
        life = self.cfg.object_lifespan_frames
        end = new.birth + life
        for a in self.agents:
            reach = (new.radius + a.radius) ** 2
            for f in range(frame, min(end, a.birth + life)):
                # same bounding-circle test bev_iou starts with, minus the box construction
                xn, yn, _ = new.path.at(new.s0 + new.step * (f - new.birth))
                xa, ya, _ = a.path.at(a.s0 + a.step * (f - a.birth))
                if (xn - xa) ** 2 + (yn - ya) ** 2 >= reach:
                    continue
                if bev_iou(new.box_at(f), a.box_at(f)) > 0:
                    return False
        return True

    def step(self) -> List[GroundTruthObject]:
        """Advance one frame and return its ground-truth objects."""
        self.frame += 1
        f = self.frame
        cfg = self.cfg
        rng = np.random.default_rng([self.seed & 0xFFFFFFFF, f])
        self.agents = [a for a in self.agents if f - a.birth < cfg.object_lifespan_frames]
        for _ in range(cfg.max_objects - len(self.agents)):
            # class is drawn once per slot so rejections cannot bias the mix
            cls = CLASSES[rng.choice(3, p=cfg.spawn_probabilities)]
            self.drawn[cls] += 1
            for _attempt in range(_MAX_SPAWN_ATTEMPTS):
                cand = self._sample(rng, f, cls)
                if self._fits(cand, f):
                    cand.object_id = self._next_id
                    self._next_id += 1
                    self.agents.append(cand)
                    break
        return [GroundTruthObject(a.box_at(f), a.object_id) for a in self.agents]

    def run(self, n_frames: int):
        for _ in range(n_frames):
            yield self.step()


def spawn_objects(cfg: ScenarioConfig, rng_seed: int, frame_id: int) -> List[GroundTruthObject]:
    """Ground truth of frame ``frame_id`` for a simulation seeded with ``rng_seed``."""
    sim = TrafficSimulator(cfg, rng_seed)
    objs = []
    for objs in sim.run(frame_id + 1):
        pass
    return objs


# ------------------------------------------------------------ rendering --

def _box_pixel_window(sensor: SensorConfig, box: OrientedBox3D):
    """Pixel rectangle (u0, u1, v0, v1) that can see ``box``; None when the box
    is entirely behind the camera, the full image when it straddles it."""
    from .geometry import box_corners, project_points

    intr = sensor.intrinsics
    cam = sensor.extrinsic.inverse().apply(box_corners(box))
    if np.all(cam[:, 2] <= 0):
        return None
    if np.any(cam[:, 2] <= 1e-3):
        return 0, intr.width - 1, 0, intr.height - 1
    uvd = project_points(cam, intr)
    u0 = max(int(math.floor(uvd[:, 0].min())) - 1, 0)
    u1 = min(int(math.ceil(uvd[:, 0].max())) + 1, intr.width - 1)
    v0 = max(int(math.floor(uvd[:, 1].min())) - 1, 0)
    v1 = min(int(math.ceil(uvd[:, 1].max())) + 1, intr.height - 1)
    if u0 > u1 or v0 > v1:
        return None
    return u0, u1, v0, v1


def render_depth(sensor: SensorConfig, objects, rng_seed=0, noise_sigma: float = 0.015,
                 max_range: float = 120.0, ground: bool = True) -> np.ndarray:
    """Planar depth image seen by ``sensor``.

    Each pixel-centre ray takes the nearest of: any object box, the ground
    plane z = 0, or nothing (``max_range`` sentinel). Hits receive i.i.d.
    N(0, noise_sigma^2) depth noise.
    """
    intr = sensor.intrinsics
    rays_cam = intr.pixel_rays()
    rot = sensor.extrinsic.rotation
    origin = sensor.position
    dirs = rays_cam @ rot.T
    depth = np.full((intr.height, intr.width), np.inf)
    if ground:
        dz = dirs[..., 2]
        with np.errstate(divide="ignore"):
            t = np.where(dz < 0, -origin[2] / dz, np.inf)
        depth = np.minimum(depth, t)
    for obj in objects:
        box = obj.box if hasattr(obj, "box") else obj
        win = _box_pixel_window(sensor, box)
        if win is None:
            continue
        u0, u1, v0, v1 = win
        sub = dirs[v0:v1 + 1, u0:u1 + 1].reshape(-1, 3)
        t = ray_box_distances(np.broadcast_to(origin, sub.shape), sub, box)
        blk = depth[v0:v1 + 1, u0:u1 + 1]
        depth[v0:v1 + 1, u0:u1 + 1] = np.minimum(blk, t.reshape(blk.shape))
    hit = depth < max_range
    if noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        noise = rng.standard_normal(depth.shape) * noise_sigma
        depth = np.where(hit, np.maximum(depth + noise, 0.0), depth)
    return np.where(hit, depth, max_range)


def downsample_depth(image: np.ndarray, factor: int = 2) -> np.ndarray:
    """Keep every ``factor``-th pixel in both directions (no averaging).
    Pair with :meth:`CameraIntrinsics.downsampled` for the matching intrinsics."""
    h, w = image.shape
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide {w}x{h}")
    return image[::factor, ::factor].copy()


# --------------------------------------------------------------- frames --

@dataclass
class Frame:
    frame_id: int
    depth: Dict[int, np.ndarray]
    clouds: Dict[int, PointCloud]
    ground_truth: List[GroundTruthObject]


def sensor_noise_seed(seed: int, frame_id: int, sensor_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(frame_id), int(sensor_id), 0x5EED])


def observe(cfg: ScenarioConfig, sensor: SensorConfig, objects, seed: int, frame_id: int):
    """Render, downsample and back-project one sensor; returns
    (depth image, global-frame cloud)."""
    img = render_depth(sensor, objects, sensor_noise_seed(seed, frame_id, sensor.id),
                       cfg.noise_sigma, cfg.max_range)
    img = downsample_depth(img, cfg.downsample_factor)
    intr = sensor.intrinsics.downsampled(cfg.downsample_factor)
    pts = depth_to_pointcloud(img, intr, cfg.max_range)
    # clouds travel as float32; round here so in-memory and on-disk frames agree
    glob = sensor.extrinsic.apply(pts).astype(np.float32).astype(float)
    return img, PointCloud(glob, "global", sensor.id)


def generate_frames(cfg: ScenarioConfig, n_frames: int, seed: int = 0):
    """Yield :class:`Frame` objects for a seeded simulation."""
    sim = TrafficSimulator(cfg, seed)
    for fid in range(n_frames):
        objs = sim.step()
        depth, clouds = {}, {}
        for s in cfg.sensors:
            depth[s.id], clouds[s.id] = observe(cfg, s, objs, seed, fid)
        yield Frame(fid, depth, clouds, objs)
