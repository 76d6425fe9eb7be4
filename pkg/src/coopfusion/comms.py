"""Sensor -> fusion-centre messages: cost accounting and the binary framing.

Frame layout (little-endian)::

    magic        4 bytes  b"CPMF"
    version      u16
    frame_id     u32
    sensor_id    u16
    payload_type u8       0 = points, 1 = boxes
    payload_len  u32      body length in bytes
    body                  float32 records: points (x, y, z),
                          boxes (class, cx, cy, cz, l, w, h, yaw, score)
"""
from __future__ import annotations

import struct
import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .detector import Detection
from .geometry import CLASSES, OrientedBox3D

MAGIC = b"CPMF"
VERSION = 1
HEADER = struct.Struct("<4sHIHBI")
POINTS, BOXES = 0, 1
_RECORD = {POINTS: 3, BOXES: 9}


class WireFormatError(ValueError):
    pass


class BadMagicError(WireFormatError):
    pass


class VersionMismatchError(WireFormatError):
    pass


class TruncatedPayloadError(WireFormatError):
    pass


# ------------------------------------------------------------------ cost --

@dataclass(frozen=True)
class EncodingConfig:
    bits_per_point: int = 96
    bits_per_box: int = 288
    # version..payload_len; the 4-byte magic is a sync marker and not billed
    header_bits: int = 104

    def __post_init__(self):
        if min(self.bits_per_point, self.bits_per_box, self.header_bits) <= 0:
            raise ValueError("encoding sizes must be positive")


@dataclass(frozen=True)
class SensorPayload:
    """What one sensor ships in one frame."""

    n_points: int = 0
    n_boxes: int = 0


@dataclass(frozen=True)
class CostReport:
    scheme: str
    kbit_per_sensor: float
    n_frames: int
    per_sensor: Dict[int, float]


def payload_bits(scheme: str, payload: SensorPayload, enc: EncodingConfig = EncodingConfig()) -> int:
    """Exact bit count for one sensor message. Early fusion ships points,
    late fusion ships boxes, hybrid ships far-field points plus boxes."""
    if scheme == "early":
        return enc.header_bits + payload.n_points * enc.bits_per_point
    if scheme == "late":
        return enc.header_bits + payload.n_boxes * enc.bits_per_box
    if scheme == "hybrid":
        return (enc.header_bits + payload.n_points * enc.bits_per_point
                + payload.n_boxes * enc.bits_per_box)
    raise ValueError(f"unknown scheme {scheme!r}")


def cost_of_frame(scheme: str, payloads, enc: EncodingConfig = EncodingConfig()) -> CostReport:
    """Mean kbit per sensor for one frame. ``payloads`` maps sensor id to
    :class:`SensorPayload` (a plain sequence is indexed from 0)."""
    return cost_of_frames(scheme, [payloads], enc)


def cost_of_frames(scheme: str, frames: Sequence, enc: EncodingConfig = EncodingConfig()) -> CostReport:
    """Average kbit per sensor per frame over several frames."""
    totals: Dict[int, int] = defaultdict(int)
    counts: Dict[int, int] = defaultdict(int)
    for payloads in frames:
        items = payloads.items() if isinstance(payloads, dict) else enumerate(payloads)
        for sid, p in items:
            totals[sid] += payload_bits(scheme, p, enc)
            counts[sid] += 1
    per_sensor = {sid: totals[sid] / counts[sid] / 1000.0 for sid in sorted(totals)}
    mean = float(np.mean(list(per_sensor.values()))) if per_sensor else 0.0
    return CostReport(scheme, mean, len(frames), per_sensor)


# ----------------------------------------------------------------- codec --

@dataclass
class Message:
    frame_id: int
    sensor_id: int
    payload_type: int
    payload: np.ndarray  # float32, (N, 3) or (N, 9)

    def __post_init__(self):
        if self.payload_type not in _RECORD:
            raise WireFormatError(f"unknown payload type {self.payload_type}")
        arr = np.asarray(self.payload, dtype="<f4")
        self.payload = arr.reshape(-1, _RECORD[self.payload_type])

    def __eq__(self, other):
        return (isinstance(other, Message) and self.frame_id == other.frame_id
                and self.sensor_id == other.sensor_id
                and self.payload_type == other.payload_type
                and self.payload.shape == other.payload.shape
                and self.payload.tobytes() == other.payload.tobytes())


def encode_message(msg: Message) -> bytes:
    body = np.ascontiguousarray(msg.payload, dtype="<f4").tobytes()
    return HEADER.pack(MAGIC, VERSION, msg.frame_id, msg.sensor_id, msg.payload_type, len(body)) + body


def decode_message(data: bytes) -> Message:
    if len(data) < HEADER.size:
        raise TruncatedPayloadError(f"{len(data)} bytes is shorter than the {HEADER.size}-byte header")
    magic, version, frame_id, sensor_id, ptype, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"version {version}, expected {VERSION}")
    if ptype not in _RECORD:
        raise WireFormatError(f"unknown payload type {ptype}")
    body = data[HEADER.size:]
    if length != len(body):
        raise TruncatedPayloadError(f"header announces {length} body bytes, got {len(body)}")
    if length % (4 * _RECORD[ptype]):
        raise TruncatedPayloadError(f"body length {length} is not a whole number of records")
    arr = np.frombuffer(body, dtype="<f4").reshape(-1, _RECORD[ptype]).copy()
    return Message(frame_id, sensor_id, ptype, arr)


def points_message(frame_id: int, sensor_id: int, points) -> Message:
    return Message(frame_id, sensor_id, POINTS, np.asarray(points, dtype="<f4"))


def boxes_message(frame_id: int, sensor_id: int, detections: Sequence[Detection]) -> Message:
    rows = [[CLASSES.index(d.box.cls), *d.box.center, *d.box.size, d.box.yaw, d.score]
            for d in detections]
    return Message(frame_id, sensor_id, BOXES, np.asarray(rows, dtype="<f4").reshape(-1, 9))


def message_detections(msg: Message) -> List[Detection]:
    if msg.payload_type != BOXES:
        raise WireFormatError("message does not carry boxes")
    out = []
    for r in msg.payload.astype(float):
        box = OrientedBox3D(tuple(r[1:4]), tuple(r[4:7]), r[7], CLASSES[int(r[0])])
        out.append(Detection(box, float(min(max(r[8], 0.0), 1.0)), msg.sensor_id))
    return out


class FusionCenterIngest:
    """Collects messages from several sensors and releases a frame once every
    configured sensor has sent ``messages_per_sensor`` messages for it (hybrid
    fusion sends points and boxes separately). Safe to feed from multiple
    threads."""

    def __init__(self, sensor_ids: Iterable[int], messages_per_sensor: int = 1):
        self.sensor_ids = frozenset(sensor_ids)
        self.messages_per_sensor = messages_per_sensor
        self._pending: Dict[int, Dict[int, List[Message]]] = defaultdict(dict)
        self._ready: List[tuple] = []
        self._lock = threading.Lock()

    def submit(self, data: bytes) -> Optional[int]:
        """Decode and store one message; returns the frame id when this
        message completes its frame, otherwise None."""
        msg = decode_message(data)
        if msg.sensor_id not in self.sensor_ids:
            raise WireFormatError(f"unexpected sensor {msg.sensor_id}")
        with self._lock:
            batch = self._pending[msg.frame_id]
            batch.setdefault(msg.sensor_id, []).append(msg)
            if set(batch) == self.sensor_ids and all(
                    len(v) >= self.messages_per_sensor for v in batch.values()):
                del self._pending[msg.frame_id]
                self._ready.append((msg.frame_id, batch))
                return msg.frame_id
        return None

    def ready(self) -> List[tuple]:
        """Pop completed frames, ordered by frame id."""
        with self._lock:
            out = sorted(self._ready, key=lambda x: x[0])
            self._ready = []
        return out

    @property
    def pending_frames(self) -> List[int]:
        with self._lock:
            return sorted(self._pending)
