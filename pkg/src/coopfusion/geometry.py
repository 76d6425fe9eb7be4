"""Rigid transforms, pinhole back-projection and yaw-only oriented boxes.

Conventions
-----------
Global frame: right-handed, z up, ground plane at z = 0.

Camera frame: z forward along the optical axis (the depth axis), x right,
y down. Depth values are planar depth, i.e. the z coordinate of the point in
the camera frame, not the ray length.

Boxes rotate about the vertical axis only. ``yaw`` is the heading of the box
length axis measured counter-clockwise from global +x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

CLASSES = ("car", "cyclist", "pedestrian")

_ORTHO_TOL = 1e-9


def normalize_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    if -math.pi <= a < math.pi:
        return a
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    out = a - math.pi
    # fmod rounding can land exactly on +pi
    if out >= math.pi:
        out -= 2.0 * math.pi
    return out


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation, ``p -> R @ p + t``.

    Sensor extrinsics are stored in the sensor-to-global direction so that
    applying the transform to a sensor-frame point yields its global position.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def transform_point(t: RigidTransform, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    return t.apply(p)


def camera_to_global(position, yaw: float, pitch: float) -> RigidTransform:
    """Extrinsic for a camera at ``position`` looking along heading ``yaw``,
    tilted down by ``pitch`` (radians, positive looks at the ground)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    forward = np.array([cp * cy, cp * sy, -sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(forward, right)
    return RigidTransform(np.column_stack([right, down, forward]), position)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. Pixel (u, v) refers to the pixel centre at integer
    coordinates, u along the width and v along the height."""

    f: float
    cu: float
    cv: float
    width: int
    height: int
    hfov_deg: Optional[float] = None

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError("focal length must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("resolution must be positive")
        if not (0 <= self.cu < self.width and 0 <= self.cv < self.height):
            raise ValueError("principal point outside the image")
        fov = 2.0 * math.degrees(math.atan(self.width / (2.0 * self.f)))
        if self.hfov_deg is None:
            object.__setattr__(self, "hfov_deg", fov)
        elif abs(self.hfov_deg - fov) > 0.1:
            raise ValueError(f"FOV {self.hfov_deg} inconsistent with f and width ({fov:.3f})")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        f = width / (2.0 * math.tan(math.radians(hfov_deg) / 2.0))
        return cls(f, width / 2.0, height / 2.0, width, height, hfov_deg)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.cu], [0.0, self.f, self.cv], [0.0, 0.0, 1.0]])

    def downsampled(self, factor: int) -> "CameraIntrinsics":
        if self.width % factor or self.height % factor:
            raise ValueError(f"factor {factor} does not divide {self.width}x{self.height}")
        return CameraIntrinsics(self.f / factor, self.cu / factor, self.cv / factor,
                                self.width // factor, self.height // factor)

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray through every pixel centre, shape (H, W, 3), with
        unit z component so that the ray parameter equals planar depth."""
        u = np.arange(self.width, dtype=float)
        v = np.arange(self.height, dtype=float)
        uu, vv = np.meshgrid(u, v)
        return np.stack([(uu - self.cu) / self.f, (vv - self.cv) / self.f,
                         np.ones_like(uu)], axis=-1)


@dataclass
class PointCloud:
    """(N, 3) float array tagged with the frame it is expressed in.

    ``frame`` is ``"global"`` or ``"sensor"``; sensor-frame clouds name their
    sensor in ``source_sensor``.
    """

    points: np.ndarray
    frame: str = "global"
    source_sensor: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        if self.frame not in ("global", "sensor"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.frame == "sensor" and self.source_sensor is None:
            raise ValueError("sensor-frame cloud needs source_sensor")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, frame="global", source_sensor=None) -> "PointCloud":
        return cls(np.zeros((0, 3)), frame, source_sensor)


def depth_to_pointcloud(depth: np.ndarray, intr: CameraIntrinsics,
                        max_range: float = 120.0,
                        sensor_id: Optional[int] = None,
                        return_pixels: bool = False):
    """Back-project a planar depth image into the camera frame.

    Pixels at or beyond ``max_range`` (the no-return sentinel) are skipped.
    Returns a sensor-frame :class:`PointCloud` when ``sensor_id`` is given,
    otherwise the raw (N, 3) array. With ``return_pixels`` the (N, 2) integer
    (u, v) indices of the kept pixels are returned as well.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (intr.height, intr.width):
        raise ValueError(f"depth image shape {depth.shape} does not match "
                         f"intrinsics {intr.height}x{intr.width}")
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise ValueError("depth values must be finite and non-negative")
    vv, uu = np.nonzero(depth < max_range)
    d = depth[vv, uu]
    pts = np.column_stack([(uu - intr.cu) * d / intr.f, (vv - intr.cv) * d / intr.f, d])
    out = pts if sensor_id is None else PointCloud(pts, "sensor", sensor_id)
    if return_pixels:
        return out, np.column_stack([uu, vv])
    return out


def project_points(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Inverse of the pinhole back-projection: camera-frame (N, 3) -> (u, v, d)."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    d = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = p[:, 0] * intr.f / d + intr.cu
        v = p[:, 1] * intr.f / d + intr.cv
    return np.column_stack([u, v, d])


@dataclass(frozen=True)
class OrientedBox3D:
    """Box with yaw about z. ``size`` is (length, width, height); the length
    axis points along ``yaw``."""

    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    yaw: float = 0.0
    cls: str = "car"

    def __post_init__(self):
        c = tuple(float(x) for x in self.center)
        s = tuple(float(x) for x in self.size)
        if len(c) != 3 or len(s) != 3:
            raise ValueError("center and size need three components")
        if not all(math.isfinite(x) for x in c + s + (float(self.yaw),)):
            raise ValueError("box parameters must be finite")
        if min(s) <= 0:
            raise ValueError(f"box size must be positive, got {s}")
        if self.cls not in CLASSES:
            raise ValueError(f"unknown class {self.cls!r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def volume(self) -> float:
        l, w, h = self.size
        return l * w * h

    @property
    def z_range(self) -> Tuple[float, float]:
        h = self.size[2] / 2.0
        return self.center[2] - h, self.center[2] + h

    def bev_corners(self) -> np.ndarray:
        """Footprint corners, (4, 2), counter-clockwise starting front-left."""
        l, w, _ = self.size
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]]) / 2.0
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """Express global points in the box frame (centre origin, x along length)."""
        p = np.asarray(points, dtype=float).reshape(-1, 3) - np.array(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = c * p[:, 0] + s * p[:, 1]
        y = -s * p[:, 0] + c * p[:, 1]
        return np.column_stack([x, y, p[:, 2]])

    def transformed(self, t: RigidTransform) -> "OrientedBox3D":
        """Apply a z-rotation + translation to the box."""
        r = t.rotation
        if abs(r[2, 2] - 1.0) > 1e-9:
            raise ValueError("only rotations about z keep a box yaw-only")
        dyaw = math.atan2(r[1, 0], r[0, 0])
        return OrientedBox3D(tuple(t.apply(np.array(self.center))), self.size,
                             self.yaw + dyaw, self.cls)

    def as_array(self) -> np.ndarray:
        return np.array(self.center + self.size + (self.yaw,))


# corner order: bottom face then top face, each counter-clockwise seen from
# above starting at (+l/2, +w/2)
_CORNER_SIGNS = np.array([
    [1, 1, -1], [-1, 1, -1], [-1, -1, -1], [1, -1, -1],
    [1, 1, 1], [-1, 1, 1], [-1, -1, 1], [1, -1, 1],
], dtype=float)


def box_corners(b: OrientedBox3D) -> np.ndarray:
    """The 8 corners as an (8, 3) array; bottom face first (see _CORNER_SIGNS)."""
    half = np.array(b.size) / 2.0
    local = _CORNER_SIGNS * half
    return local @ rot_z(b.yaw).T + np.array(b.center)


def points_in_box(points, b: OrientedBox3D, tol: float = 1e-9) -> Tuple[int, np.ndarray]:
    """Count and indices of points inside ``b``.

    The boundary counts as inside, widened by ``tol`` meters so that surface
    points produced by ray casting survive rounding.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, float)
    pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        return 0, np.zeros(0, dtype=np.intp)
    l, w, h = b.size
    # cheap radius pre-filter before the exact box-frame test
    r = math.hypot(l, w) / 2.0 + tol
    dx = pts[:, 0] - b.center[0]
    dy = pts[:, 1] - b.center[1]
    near = np.nonzero((dx * dx + dy * dy <= r * r)
                      & (np.abs(pts[:, 2] - b.center[2]) <= h / 2.0 + tol))[0]
    if len(near) == 0:
        return 0, near
    loc = b.to_local(pts[near])
    inside = (np.abs(loc[:, 0]) <= l / 2.0 + tol) & (np.abs(loc[:, 1]) <= w / 2.0 + tol)
    idx = near[inside]
    return int(len(idx)), idx


def ray_box_distances(origins: np.ndarray, directions: np.ndarray,
                      b: OrientedBox3D) -> np.ndarray:
    """Vectorised slab test. Returns the smallest positive ray parameter for
    each ray, or +inf on a miss. Directions need not be normalised; the
    parameter is then in units of the direction vector."""
    o = b.to_local(origins)
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    dl = np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]])
    half = np.array(b.size) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dl
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # a zero direction component leaves the ray parallel to that slab
    parallel = dl == 0.0
    inside_slab = np.abs(o) <= half
    tmin = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), tmax)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    hit = (t_near <= t_far) & (t_far > 0)
    t = np.where(t_near > 0, t_near, t_far)
    return np.where(hit, t, np.inf)


def ray_box_intersect(origin, direction, b: OrientedBox3D) -> Optional[float]:
    """Nearest positive hit distance along a unit ``direction``, or None."""
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    t = ray_box_distances(np.asarray(origin, float)[None], d[None], b)[0]
    return None if not np.isfinite(t) else float(t)
