"""On-disk dataset layout.

::

    <root>/scenario.yaml            scenario used to generate the collection
    <root>/dataset.yaml             seed and frame count
    <root>/frame_000000/sensor_0.cppc
    <root>/frame_000000/...
    <root>/frame_000000/gt.txt

``.cppc`` point clouds are little-endian: magic ``b"CPPC"``, version u16,
point count u32, then count x 3 float32 (x, y, z) in the global frame.
``gt.txt`` holds one object per line: ``id class cx cy cz l w h yaw``.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Iterator, List

import numpy as np
import yaml

from .geometry import OrientedBox3D, PointCloud
from .scene import Frame, GroundTruthObject, ScenarioConfig, generate_frames, load_scenario, save_scenario

CLOUD_MAGIC = b"CPPC"
CLOUD_VERSION = 1
_CLOUD_HEADER = struct.Struct("<4sHI")


class DatasetError(ValueError):
    pass


def encode_cloud(points: np.ndarray) -> bytes:
    pts = np.ascontiguousarray(np.asarray(points).reshape(-1, 3), dtype="<f4")
    return _CLOUD_HEADER.pack(CLOUD_MAGIC, CLOUD_VERSION, len(pts)) + pts.tobytes()


def decode_cloud(data: bytes) -> np.ndarray:
    if len(data) < _CLOUD_HEADER.size:
        raise DatasetError("point cloud file too short")
    magic, version, n = _CLOUD_HEADER.unpack_from(data)
    if magic != CLOUD_MAGIC:
        raise DatasetError(f"bad point cloud magic {magic!r}")
    if version != CLOUD_VERSION:
        raise DatasetError(f"unsupported point cloud version {version}")
    body = data[_CLOUD_HEADER.size:]
    if len(body) != 12 * n:
        raise DatasetError(f"expected {n} points, body holds {len(body) / 12:g}")
    return np.frombuffer(body, dtype="<f4").reshape(n, 3).astype(float)


def write_cloud(path, points) -> None:
    Path(path).write_bytes(encode_cloud(points))


def read_cloud(path, source_sensor=None) -> PointCloud:
    return PointCloud(decode_cloud(Path(path).read_bytes()), "global", source_sensor)


def format_ground_truth(objects) -> str:
    lines = []
    for o in objects:
        b = o.box
        vals = list(b.center) + list(b.size) + [b.yaw]
        lines.append(f"{o.object_id} {b.cls} " + " ".join(repr(float(v)) for v in vals))
    return "".join(line + "\n" for line in lines)


def parse_ground_truth(text: str) -> List[GroundTruthObject]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != 9:
            raise DatasetError(f"gt line {lineno}: expected 9 fields, got {len(tok)}")
        try:
            vals = [float(t) for t in tok[2:]]
            box = OrientedBox3D(tuple(vals[0:3]), tuple(vals[3:6]), vals[6], tok[1])
            out.append(GroundTruthObject(box, int(tok[0])))
        except ValueError as e:
            raise DatasetError(f"gt line {lineno}: {e}") from None
    return out


def frame_dir(root, frame_id: int) -> Path:
    return Path(root) / f"frame_{frame_id:06d}"


def write_frame(root, frame: Frame) -> None:
    d = frame_dir(root, frame.frame_id)
    d.mkdir(parents=True, exist_ok=True)
    for sid in sorted(frame.clouds):
        write_cloud(d / f"sensor_{sid}.cppc", frame.clouds[sid].points)
    (d / "gt.txt").write_text(format_ground_truth(frame.ground_truth))


def write_dataset(root, cfg: ScenarioConfig, n_frames: int, seed: int = 0) -> Path:
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        save_scenario(cfg, root / "scenario.yaml")
        (root / "dataset.yaml").write_text(yaml.safe_dump({"frames": n_frames, "seed": seed}))
    except OSError as e:
        raise DatasetError(f"cannot write dataset to {root}: {e}") from e
    for frame in generate_frames(cfg, n_frames, seed):
        write_frame(root, frame)
    return root


class Dataset:
    """Read access to a generated collection."""

    def __init__(self, root):
        self.root = Path(root)
        if not (self.root / "scenario.yaml").is_file():
            raise DatasetError(f"no dataset at {self.root}")
        self.scenario = load_scenario(self.root / "scenario.yaml")
        meta = yaml.safe_load((self.root / "dataset.yaml").read_text())
        self.n_frames = int(meta["frames"])
        self.seed = int(meta["seed"])

    def __len__(self) -> int:
        return self.n_frames

    def clouds(self, frame_id: int) -> Dict[int, PointCloud]:
        d = frame_dir(self.root, frame_id)
        return {s.id: read_cloud(d / f"sensor_{s.id}.cppc", s.id) for s in self.scenario.sensors}

    def ground_truth(self, frame_id: int) -> List[GroundTruthObject]:
        return parse_ground_truth((frame_dir(self.root, frame_id) / "gt.txt").read_text())

    def frame(self, frame_id: int) -> Frame:
        return Frame(frame_id, {}, self.clouds(frame_id), self.ground_truth(frame_id))

    def __iter__(self) -> Iterator[Frame]:
        for fid in range(self.n_frames):
            yield self.frame(fid)
