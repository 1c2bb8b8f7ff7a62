"""Sharded, corruption-tolerant episode storage with asynchronous writing.

On-disk layout: root/{uuid}/meta.json + root/{uuid}/data.bin. The data
file is a sequence of frames: u32 LE payload length, u32 LE CRC-32 of the
payload, payload bytes. Episode payloads use a field-tagged little-endian
binary encoding (tag byte, LEB128 length, value); floats are 64-bit
IEEE-754, strings UTF-8, index arrays raw u32 LE.

Loader fault semantics:
  - data file absent  -> zero-length placeholder created, declared_count missing
  - bad CRC / length  -> one missing record, resync at the next parsable frame
  - short shard       -> stops gracefully, declared_count - parsed missing
The loader never aborts a whole store load.
"""
from __future__ import annotations

import json
import os
import queue
import struct
import threading
import time
import uuid
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import EmptyStore, IoError, QueueClosed
from .geometry import Pose
from .grasp import Contact, GraspPose
from .assets import Mesh
from .planner import Episode, TrajectoryStep
from .scene import BBox2D, CameraRig, CameraView, Placement, SceneLayout

SCHEMA_VERSION = 1
_FRAME_HEADER = struct.Struct("<II")


# ---------------------------------------------------------------------------
# field-tagged binary codec

def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _read_varint(buf: bytes, off: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        b = buf[off]
        off += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, off
        shift += 7


class _Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def field(self, tag: int, payload: bytes) -> None:
        self._parts.append(bytes([tag]) + _varint(len(payload)) + payload)

    def f64(self, tag: int, value: float) -> None:
        self.field(tag, struct.pack("<d", value))

    def f64s(self, tag: int, arr: np.ndarray) -> None:
        self.field(tag, np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def u32s(self, tag: int, arr: np.ndarray) -> None:
        self.field(tag, np.ascontiguousarray(arr, dtype="<u4").tobytes())

    def uint(self, tag: int, value: int) -> None:
        self.field(tag, _varint(int(value)))

    def string(self, tag: int, value: str) -> None:
        self.field(tag, value.encode("utf-8"))

    def message(self, tag: int, writer: "_Writer") -> None:
        self.field(tag, writer.bytes())

    def bytes(self) -> bytes:
        return b"".join(self._parts)


def _fields(buf: bytes) -> list[tuple[int, bytes]]:
    out = []
    off = 0
    while off < len(buf):
        tag = buf[off]
        length, off = _read_varint(buf, off + 1)
        out.append((tag, buf[off : off + length]))
        off += length
    return out


def _one(fields: list[tuple[int, bytes]], tag: int) -> bytes:
    for t, payload in fields:
        if t == tag:
            return payload
    raise ValueError(f"missing field tag {tag}")


def _f64(payload: bytes) -> float:
    return struct.unpack("<d", payload)[0]


def _f64s(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def _u32s(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<u4").astype(np.int64)


def _uint(payload: bytes) -> int:
    return _read_varint(payload, 0)[0]


def _encode_placement(p: Placement) -> _Writer:
    w = _Writer()
    w.string(1, p.instance_id)
    w.string(2, p.category)
    w.f64s(3, p.mesh.vertices)
    w.u32s(4, p.mesh.triangles)
    w.f64s(5, p.rotation)
    w.f64s(6, p.translation)
    w.f64(7, p.circle_radius)
    w.f64s(8, p.sphere_center)
    w.f64(9, p.sphere_radius)
    return w


def _decode_placement(buf: bytes) -> Placement:
    f = _fields(buf)
    instance_id = _one(f, 1).decode("utf-8")
    category = _one(f, 2).decode("utf-8")
    mesh = Mesh(
        _f64s(_one(f, 3)).reshape(-1, 3),
        _u32s(_one(f, 4)).reshape(-1, 3),
        category=category,
        instance_id=instance_id,
    )
    return Placement(
        instance_id=instance_id,
        category=category,
        mesh=mesh,
        rotation=_f64s(_one(f, 5)),
        translation=_f64s(_one(f, 6)),
        circle_radius=_f64(_one(f, 7)),
        sphere_center=_f64s(_one(f, 8)),
        sphere_radius=_f64(_one(f, 9)),
    )


def _encode_view(v: CameraView) -> _Writer:
    w = _Writer()
    w.string(1, v.name)
    w.f64s(2, v.position)
    w.f64s(3, v.lookat)
    w.f64s(4, v.rotation)
    w.f64s(5, np.asarray(v.intrinsics, dtype=np.float64))
    return w


def _decode_view(buf: bytes) -> CameraView:
    f = _fields(buf)
    intr = _f64s(_one(f, 5))
    return CameraView(
        name=_one(f, 1).decode("utf-8"),
        position=_f64s(_one(f, 2)),
        lookat=_f64s(_one(f, 3)),
        rotation=_f64s(_one(f, 4)),
        intrinsics=(intr[0], intr[1], intr[2], intr[3], int(intr[4]), int(intr[5])),
    )


def _encode_grasp(g: GraspPose) -> _Writer:
    w = _Writer()
    w.f64s(1, g.position)
    w.f64s(2, g.orientation)
    w.f64(3, g.width)
    for tag, contact in ((4, g.contacts[0]), (5, g.contacts[1])):
        cw = _Writer()
        cw.f64s(1, contact.point)
        cw.f64s(2, contact.inward_normal)
        w.message(tag, cw)
    return w


def _decode_grasp(buf: bytes) -> GraspPose:
    f = _fields(buf)
    contacts = []
    for tag in (4, 5):
        cf = _fields(_one(f, tag))
        contacts.append(Contact(_f64s(_one(cf, 1)), _f64s(_one(cf, 2))))
    return GraspPose(
        position=_f64s(_one(f, 1)),
        orientation=_f64s(_one(f, 2)),
        width=_f64(_one(f, 3)),
        contacts=(contacts[0], contacts[1]),
    )


def encode_episode(ep: Episode) -> bytes:
    w = _Writer()
    w.string(1, ep.instruction)

    lw = _Writer()
    lw.f64(1, ep.layout.table_height)
    lw.f64s(2, np.asarray(ep.layout.workspace, dtype=np.float64))
    lw.uint(3, ep.layout.randomization_seed)
    for p in ep.layout.placements:
        lw.message(4, _encode_placement(p))
    w.message(2, lw)

    rw = _Writer()
    rw.message(1, _encode_view(ep.rig.front))
    rw.message(2, _encode_view(ep.rig.side))
    w.message(3, rw)

    w.string(4, ep.target_id)

    sw = _Writer()
    for step in ep.steps:
        stw = _Writer()
        stw.f64(1, step.t)
        stw.f64s(2, step.pose.position)
        stw.f64s(3, step.pose.orientation)
        stw.uint(4, step.gripper)
        sw.message(1, stw)
    w.message(5, sw)

    w.message(6, _encode_grasp(ep.grasp_label))

    bw = _Writer()
    for step_boxes in ep.bbox_labels:
        sbw = _Writer()
        for box in step_boxes:
            xw = _Writer()
            xw.string(1, box.view)
            xw.f64s(2, np.array([box.x_min, box.y_min, box.x_max, box.y_max]))
            sbw.message(1, xw)
        bw.message(1, sbw)
    w.message(7, bw)

    w.uint(8, 1 if ep.success else 0)
    return w.bytes()


def decode_episode(buf: bytes) -> Episode:
    f = _fields(buf)
    lf = _fields(_one(f, 2))
    placements = tuple(_decode_placement(p) for t, p in lf if t == 4)
    ws = _f64s(_one(lf, 2))
    layout = SceneLayout(
        table_height=_f64(_one(lf, 1)),
        placements=placements,
        workspace=(ws[0], ws[1], ws[2], ws[3]),
        randomization_seed=_uint(_one(lf, 3)),
    )
    rf = _fields(_one(f, 3))
    rig = CameraRig(front=_decode_view(_one(rf, 1)), side=_decode_view(_one(rf, 2)))
    steps = []
    for tag, payload in _fields(_one(f, 5)):
        if tag != 1:
            continue
        sf = _fields(payload)
        steps.append(
            TrajectoryStep(
                t=_f64(_one(sf, 1)),
                pose=Pose(_f64s(_one(sf, 2)), _f64s(_one(sf, 3))),
                gripper=_uint(_one(sf, 4)),
            )
        )
    bbox_labels = []
    for tag, payload in _fields(_one(f, 7)):
        if tag != 1:
            continue
        step_boxes = []
        for btag, bpayload in _fields(payload):
            if btag != 1:
                continue
            bf = _fields(bpayload)
            coords = _f64s(_one(bf, 2))
            step_boxes.append(
                BBox2D(
                    view=_one(bf, 1).decode("utf-8"),
                    x_min=coords[0],
                    y_min=coords[1],
                    x_max=coords[2],
                    y_max=coords[3],
                )
            )
        bbox_labels.append(tuple(step_boxes))
    return Episode(
        instruction=_one(f, 1).decode("utf-8"),
        layout=layout,
        rig=rig,
        target_id=_one(f, 4).decode("utf-8"),
        steps=tuple(steps),
        grasp_label=_decode_grasp(_one(f, 6)),
        bbox_labels=tuple(bbox_labels),
        success=bool(_uint(_one(f, 8))),
    )


# ---------------------------------------------------------------------------
# shard writing

@dataclass(frozen=True)
class ShardMeta:
    shard_uuid: str
    declared_count: int
    writer_id: int
    schema_version: int = SCHEMA_VERSION


@dataclass
class LoadReport:
    loaded: int = 0
    missing: int = 0
    shards_seen: int = 0
    shards_empty: int = 0

    @property
    def missing_rate(self) -> float:
        total = self.loaded + self.missing
        return self.missing / total if total else 0.0


class ShardWriter:
    """Single-producer writer owning one UUID shard.

    write() enqueues and returns immediately; a background thread encodes,
    frames and appends records. close() blocks until everything enqueued
    is durable, then writes meta.json last. I/O failures surface at close.
    """

    def __init__(
        self,
        root: str | Path,
        writer_id: int,
        queue_size: int = 1024,
        io_delay: float = 0.0,
    ) -> None:
        root = Path(root)
        if not root.is_dir():
            raise IoError(f"store root {root} is not a directory")
        self.shard_uuid = str(uuid.uuid4())
        self.writer_id = writer_id
        self.shard_dir = root / self.shard_uuid
        self.shard_dir.mkdir()
        self._io_delay = io_delay
        self._queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self._closed = False
        self._error: Exception | None = None
        self._persisted = 0
        self._file = open(self.shard_dir / "data.bin", "wb")
        self._thread = threading.Thread(target=self._persist_loop, daemon=True)
        self._thread.start()

    def write(self, episode: Episode | bytes) -> None:
        if self._closed:
            raise QueueClosed("write after close")
        self._queue.put(episode)

    def _persist_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            if self._error is not None:
                continue  # keep draining so a blocked producer can finish
            try:
                payload = item if isinstance(item, bytes) else encode_episode(item)
                if self._io_delay:
                    time.sleep(self._io_delay)
                self._file.write(_FRAME_HEADER.pack(len(payload), zlib.crc32(payload)))
                self._file.write(payload)
                self._persisted += 1
            except Exception as exc:  # surfaced at close
                self._error = exc

    def close(self) -> ShardMeta:
        if self._closed:
            raise QueueClosed("writer already closed")
        self._closed = True
        self._queue.put(None)
        self._thread.join()
        try:
            self._file.flush()
            os.fsync(self._file.fileno())
            self._file.close()
        except OSError as exc:
            raise IoError(f"failed to finalize shard {self.shard_uuid}: {exc}") from exc
        if self._error is not None:
            raise IoError(f"persistence failed in shard {self.shard_uuid}: {self._error}")
        meta = ShardMeta(self.shard_uuid, self._persisted, self.writer_id)
        # metadata last: a crash before this point reads as a short shard
        (self.shard_dir / "meta.json").write_text(
            json.dumps(
                {
                    "shard_uuid": meta.shard_uuid,
                    "declared_count": meta.declared_count,
                    "writer_id": meta.writer_id,
                    "schema_version": meta.schema_version,
                }
            )
        )
        return meta

    def __enter__(self) -> "ShardWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        if not self._closed:
            self.close()


def open_writer(root: str | Path, writer_id: int, **kwargs) -> ShardWriter:
    return ShardWriter(root, writer_id, **kwargs)


# ---------------------------------------------------------------------------
# loading

def _shard_dirs(root: Path) -> list[Path]:
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "meta.json").exists())


def _read_meta(shard_dir: Path) -> ShardMeta:
    data = json.loads((shard_dir / "meta.json").read_text())
    return ShardMeta(
        shard_uuid=data["shard_uuid"],
        declared_count=int(data["declared_count"]),
        writer_id=int(data["writer_id"]),
        schema_version=int(data.get("schema_version", SCHEMA_VERSION)),
    )


def scan_frames(data: bytes) -> list[tuple[int, int]]:
    """(offset, payload_length) of every valid frame, stopping at corruption."""
    frames = []
    off = 0
    while off + _FRAME_HEADER.size <= len(data):
        length, crc = _FRAME_HEADER.unpack_from(data, off)
        end = off + _FRAME_HEADER.size + length
        if length == 0 or end > len(data):
            break
        if zlib.crc32(data[off + _FRAME_HEADER.size : end]) != crc:
            break
        frames.append((off, length))
        off = end
    return frames


def _resync(data: bytes, start: int) -> int | None:
    """Scan forward for the next offset holding a parsable frame."""
    for off in range(start, len(data) - _FRAME_HEADER.size + 1):
        length, crc = _FRAME_HEADER.unpack_from(data, off)
        end = off + _FRAME_HEADER.size + length
        if length == 0 or end > len(data):
            continue
        if zlib.crc32(data[off + _FRAME_HEADER.size : end]) == crc:
            return off
    return None


def load_dataset(
    root: str | Path, decode: bool = True
) -> tuple[Iterator[Episode | bytes], LoadReport]:
    """Iterate all shards under root with corruption tolerance.

    Returns a lazy iterator plus a LoadReport that is complete once the
    iterator is exhausted. Within a shard, record order is preserved.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"store root {root} is not a directory")
    report = LoadReport()

    def generate() -> Iterator[Episode | bytes]:
        for shard_dir in _shard_dirs(root):
            meta = _read_meta(shard_dir)
            report.shards_seen += 1
            data_path = shard_dir / "data.bin"
            if not data_path.exists():
                data_path.touch()  # placeholder so later passes keep working
                data = b""
            else:
                data = data_path.read_bytes()
            parsed = 0
            off = 0
            while off + _FRAME_HEADER.size <= len(data):
                length, crc = _FRAME_HEADER.unpack_from(data, off)
                end = off + _FRAME_HEADER.size + length
                if 0 < length and end <= len(data):
                    payload = data[off + _FRAME_HEADER.size : end]
                    if zlib.crc32(payload) == crc:
                        parsed += 1
                        report.loaded += 1
                        off = end
                        yield decode_episode(payload) if decode else payload
                        continue
                next_off = _resync(data, off + 1)
                if next_off is None:
                    break
                off = next_off
            if parsed < meta.declared_count:
                report.missing += meta.declared_count - parsed
            if parsed == 0:
                report.shards_empty += 1

    return generate(), report


def load_all(root: str | Path, decode: bool = True) -> tuple[list, LoadReport]:
    iterator, report = load_dataset(root, decode=decode)
    return list(iterator), report


# ---------------------------------------------------------------------------
# corruption injection (test fixture)

def inject_corruption(
    root: str | Path, kind: str, rng: np.random.Generator
) -> dict:
    """Mutate a random shard/record; returns what was mutated.

    kinds: "delete" removes a shard's data file, "flip" flips one payload
    byte of one record, "truncate" cuts the file mid-frame.
    """
    root = Path(root)
    shards = [d for d in _shard_dirs(root) if (d / "data.bin").exists()]
    if not shards:
        raise EmptyStore(f"no shards with data under {root}")
    if kind == "delete":
        shard = shards[int(rng.integers(len(shards)))]
        (shard / "data.bin").unlink()
        return {"kind": kind, "shard": shard.name}
    populated = []
    for shard in shards:
        frames = scan_frames((shard / "data.bin").read_bytes())
        if frames:
            populated.append((shard, frames))
    if not populated:
        raise EmptyStore(f"no records to corrupt under {root}")
    shard, frames = populated[int(rng.integers(len(populated)))]
    record = int(rng.integers(len(frames)))
    off, length = frames[record]
    path = shard / "data.bin"
    if kind == "flip":
        data = bytearray(path.read_bytes())
        byte = off + _FRAME_HEADER.size + int(rng.integers(length))
        data[byte] ^= 0xFF
        path.write_bytes(bytes(data))
        return {"kind": kind, "shard": shard.name, "record": record, "byte_offset": byte}
    if kind == "truncate":
        cut = off + 1 + int(rng.integers(_FRAME_HEADER.size + length - 1))
        with open(path, "r+b") as fh:
            fh.truncate(cut)
        return {"kind": kind, "shard": shard.name, "first_lost_record": record, "size": cut}
    raise ValueError(f"unknown corruption kind {kind!r}")
