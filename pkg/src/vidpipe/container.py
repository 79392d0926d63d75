"""The QVS toy container: encoder, reader/writer and the reference decoder.

A QVS file holds one video stream of length-prefixed frame bodies, cut into
packets of at most ``max_packet_bytes``, with synthetic audio packets
interleaved between them. Packets are not frame aligned; the only packet
boundaries the encoder forces are at keyframes (so they are valid seek
targets) and before the final frame (so the last packet carries the final
pts).

Frame body layout (little-endian)::

    body_len u32 | frame_type u8 | pts u64 | crc32 u32 | run-length bytes

``body_len`` counts every byte after itself. Keyframes store run-length
encoded pixels; delta frames store the run-length encoded wrapping byte
difference against the previous reconstructed frame.
"""
from __future__ import annotations

import bisect
import struct
import zlib
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from vidpipe._rle import rle_decode_into, rle_encode, wrapping_delta

MAGIC = b"QVS1"
VERSION = 1

HEADER = struct.Struct("<4sHIIQIIIQ")
PACKET_HEADER = struct.Struct("<BBQBI")
BODY_PREFIX = struct.Struct("<I")
BODY_HEADER = struct.Struct("<BQI")

KEY_FRAME = 0
DELTA_FRAME = 1

AUDIO_PAYLOAD_BYTES = 32


class ContainerError(ValueError):
    """Malformed QVS data."""


class ChecksumError(ContainerError):
    pass


class StreamKind(IntEnum):
    VIDEO = 0
    AUDIO = 1


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray  # (3, h, w) uint8
    pts: int

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ValueError(f"frame pixels must be uint8 (3, h, w), got {self.pixels.dtype} {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True, slots=True)
class Packet:
    stream_kind: StreamKind
    pts: int | None
    keyframe: bool
    payload: bytes | memoryview
    offset: int = -1  # payload offset in the source file, -1 when built in memory

    @property
    def is_video(self) -> bool:
        return self.stream_kind == StreamKind.VIDEO


@dataclass(frozen=True)
class EncodeConfig:
    keyframe_period: int = 24
    max_packet_bytes: int = 4096
    ticks_per_frame: int = 1000
    audio_interleave_period: int = 4  # 0 disables audio

    def __post_init__(self):
        if self.keyframe_period < 1:
            raise ValueError("keyframe_period (K) must be >= 1")
        if self.max_packet_bytes < 1:
            raise ValueError("max_packet_bytes must be >= 1")
        if self.ticks_per_frame < 1:
            raise ValueError("ticks_per_frame must be >= 1")
        if self.audio_interleave_period < 0:
            raise ValueError("audio_interleave_period must be >= 0")


@dataclass(frozen=True)
class VideoFile:
    width: int
    height: int
    frame_count: int
    ticks_per_frame: int
    keyframe_period: int
    max_packet_bytes: int
    packets: Sequence[Packet] = field(repr=False)
    magic: bytes = MAGIC
    version: int = VERSION

    @cached_property
    def video_packet_indices(self) -> list[int]:
        return [i for i, p in enumerate(self.packets) if p.is_video]

    @cached_property
    def _keyframe_table(self) -> tuple[list[int], list[int]]:
        pts, idx = [], []
        for i, p in enumerate(self.packets):
            if p.is_video and p.keyframe and p.pts is not None:
                pts.append(p.pts)
                idx.append(i)
        return pts, idx

    @cached_property
    def pts_range(self) -> tuple[int, int]:
        values = [p.pts for p in self.packets if p.is_video and p.pts is not None]
        if not values:
            raise ContainerError("no video stream")
        return min(values), max(values)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (3, self.height, self.width)

    @property
    def frame_bytes(self) -> int:
        return 3 * self.height * self.width

    def keyframe_packet_at_or_before(self, pts: int) -> int:
        kf_pts, kf_idx = self._keyframe_table
        j = bisect.bisect_right(kf_pts, pts) - 1
        if j < 0:
            raise ContainerError(f"no keyframe at or before pts {pts}")
        return kf_idx[j]

    def nbytes(self) -> int:
        return HEADER.size + sum(PACKET_HEADER.size + len(p.payload) for p in self.packets)


class DecoderQueue:
    """Packet-in, frame-out decoder.

    Each ``enqueue`` may make zero, one or several frames available for
    ``dequeue``; frames come out in pts order. A frame's pixels are
    reconstructed when it is dequeued, so a caller that stops early pays only
    for the frames it pulled. One instance per thread.
    """

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self._frame_bytes = 3 * width * height
        self._buf = bytearray()
        self._pos = 0
        self._ref: np.ndarray | None = None
        self._last_pts: int | None = None
        self._pending: deque[bytearray] = deque()  # complete, undecoded bodies
        self.frames_decoded = 0

    def __len__(self) -> int:
        return len(self._pending)

    def reset(self) -> None:
        """Drop buffered bytes, pending frames and the reference frame."""
        self._buf.clear()
        self._pos = 0
        self._ref = None
        self._last_pts = None
        self._pending.clear()

    def enqueue(self, packet: Packet | None) -> int:
        """Feed one packet (``None`` signals end of stream). Returns frames made ready."""
        if packet is None:
            return self.flush()
        if not packet.is_video:
            return 0
        self._buf += packet.payload
        ready = 0
        while True:
            avail = len(self._buf) - self._pos
            if avail < BODY_PREFIX.size:
                break
            (body_len,) = BODY_PREFIX.unpack_from(self._buf, self._pos)
            if avail < BODY_PREFIX.size + body_len:
                break
            start = self._pos + BODY_PREFIX.size
            self._pending.append(self._buf[start:start + body_len])
            self._pos = start + body_len
            ready += 1
        if self._pos and self._pos == len(self._buf):
            self._buf.clear()
            self._pos = 0
        return ready

    def flush(self) -> int:
        if len(self._buf) - self._pos:
            raise ContainerError("truncated frame data at end of stream")
        return 0

    def dequeue(self) -> Frame | None:
        return self._decode_body(self._pending.popleft()) if self._pending else None

    def _decode_body(self, body: bytearray) -> Frame:
        if len(body) < BODY_HEADER.size:
            raise ContainerError("frame body shorter than its header")
        kind, pts, crc = BODY_HEADER.unpack_from(body, 0)
        out = np.empty(self._frame_bytes, dtype=np.uint8)
        payload = memoryview(body)[BODY_HEADER.size:]
        if kind == KEY_FRAME:
            n = rle_decode_into(payload, out)
        elif kind == DELTA_FRAME:
            if self._ref is None:
                raise ContainerError(f"delta frame at pts {pts} has no reference frame")
            n = rle_decode_into(payload, out, self._ref)
        else:
            raise ContainerError(f"unknown frame type {kind}")
        if n != self._frame_bytes:
            raise ContainerError(f"frame at pts {pts} decoded to {n} bytes, expected {self._frame_bytes}")
        if zlib.crc32(out) != crc:
            raise ChecksumError(f"corrupt payload checksum at pts {pts}")
        if self._last_pts is not None and pts <= self._last_pts:
            raise ContainerError(f"non-increasing pts {pts} after {self._last_pts}")
        self._ref = out
        self._last_pts = pts
        self.frames_decoded += 1
        return Frame(out.reshape(3, self.height, self.width), pts)


def _as_pixels(frame) -> np.ndarray:
    pixels = frame.pixels if isinstance(frame, Frame) else frame
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ValueError(f"frames must be uint8 arrays of shape (3, h, w), got {pixels.dtype} {pixels.shape}")
    return pixels


def _frame_body(pixels: np.ndarray, ref: np.ndarray | None, pts: int) -> bytes:
    flat = np.ascontiguousarray(pixels).reshape(-1)
    if ref is None:
        kind, rle = KEY_FRAME, rle_encode(flat)
    else:
        kind, rle = DELTA_FRAME, rle_encode(wrapping_delta(flat, ref))
    head = BODY_HEADER.pack(kind, pts, zlib.crc32(flat))
    return BODY_PREFIX.pack(len(head) + len(rle)) + head + rle


def _packetize(bodies: list[tuple[int, bytes]], max_bytes: int) -> Iterator[tuple[int, bytes]]:
    """Cut a run of frame bodies into (pts, payload) chunks; the first body starts a chunk.

    A packet's pts is that of the first frame beginning inside it, or of the
    frame it continues when none begins there.
    """
    stream = b"".join(b for _, b in bodies)
    starts, acc = [], 0
    for _, b in bodies:
        starts.append(acc)
        acc += len(b)
    for a in range(0, len(stream), max_bytes):
        b = min(a + max_bytes, len(stream))
        j = bisect.bisect_left(starts, a)
        if not (j < len(starts) and starts[j] < b):
            j = bisect.bisect_right(starts, a) - 1
        yield bodies[j][0], stream[a:b]


def _audio_packet(n: int, last_video_pts: int | None) -> Packet:
    payload = bytes((n * 31 + k * 7) & 0xFF for k in range(AUDIO_PAYLOAD_BYTES))
    # every other audio packet has no pts
    pts = None if n % 2 == 0 else last_video_pts
    return Packet(StreamKind.AUDIO, pts, False, payload)


def encode(frames: Iterable, config: EncodeConfig | None = None, frame_count: int | None = None) -> VideoFile:
    """Encode frames into an in-memory ``VideoFile``.

    ``frames`` may be any iterable of ``Frame`` objects or uint8 ``(3, h, w)``
    arrays; frame ``i`` gets pts ``i * ticks_per_frame``. Pass ``frame_count``
    to stream a generator without materializing it (the count is checked).
    """
    cfg = config or EncodeConfig()
    if frame_count is None:
        if not isinstance(frames, Sequence):
            frames = list(frames)
        frame_count = len(frames)
    if frame_count < 1:
        raise ValueError("cannot encode an empty frame list")

    packets: list[Packet] = []
    since_audio = 0
    audio_n = 0

    def emit(run: list[tuple[int, bytes]], head_is_key: bool) -> None:
        nonlocal since_audio, audio_n
        for k, (pts, payload) in enumerate(_packetize(run, cfg.max_packet_bytes)):
            packets.append(Packet(StreamKind.VIDEO, pts, head_is_key and k == 0, payload))
            since_audio += 1
            if cfg.audio_interleave_period and since_audio == cfg.audio_interleave_period:
                packets.append(_audio_packet(audio_n, pts))
                audio_n += 1
                since_audio = 0

    shape = None
    ref = None
    run: list[tuple[int, bytes]] = []
    run_is_key = True
    count = 0
    for i, frame in enumerate(frames):
        pixels = _as_pixels(frame)
        if shape is None:
            shape = pixels.shape
        elif pixels.shape != shape:
            raise ValueError(f"frame {i} has shape {pixels.shape}, expected {shape}")
        is_key = i % cfg.keyframe_period == 0
        # packet boundaries at keyframes (seek targets) and before the final frame
        if run and (is_key or i == frame_count - 1):
            emit(run, run_is_key)
            run, run_is_key = [], is_key
        pts = i * cfg.ticks_per_frame
        run.append((pts, _frame_body(pixels, None if is_key else ref, pts)))
        ref = np.ascontiguousarray(pixels).reshape(-1)
        count += 1
    if count != frame_count:
        raise ValueError(f"got {count} frames, expected {frame_count}")
    emit(run, run_is_key)

    return VideoFile(
        width=shape[2],
        height=shape[1],
        frame_count=frame_count,
        ticks_per_frame=cfg.ticks_per_frame,
        keyframe_period=cfg.keyframe_period,
        max_packet_bytes=cfg.max_packet_bytes,
        packets=tuple(packets),
    )


def to_bytes(video: VideoFile) -> bytes:
    parts = [
        HEADER.pack(
            video.magic, video.version, video.width, video.height, video.frame_count,
            video.ticks_per_frame, video.keyframe_period, video.max_packet_bytes, len(video.packets),
        )
    ]
    for p in video.packets:
        parts.append(PACKET_HEADER.pack(
            int(p.stream_kind), p.pts is not None, p.pts or 0, bool(p.keyframe), len(p.payload)
        ))
        parts.append(bytes(p.payload))
    return b"".join(parts)


def write(video: VideoFile, path) -> int:
    data = to_bytes(video)
    Path(path).write_bytes(data)
    return len(data)


def from_bytes(data: bytes) -> VideoFile:
    """Parse a QVS image. Payloads are zero-copy views into ``data``."""
    if len(data) < HEADER.size:
        raise ContainerError("truncated header")
    magic, version, width, height, m, tpf, k, max_bytes, n_packets = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"version mismatch: file has {version}, reader supports {VERSION}")
    view = memoryview(data)
    pos = HEADER.size
    packets = []
    for i in range(n_packets):
        if pos + PACKET_HEADER.size > len(data):
            raise ContainerError(f"truncated packet {i} header")
        kind, has_pts, pts, key, length = PACKET_HEADER.unpack_from(data, pos)
        pos += PACKET_HEADER.size
        if pos + length > len(data):
            raise ContainerError(f"truncated packet {i} payload")
        try:
            stream_kind = StreamKind(kind)
        except ValueError:
            raise ContainerError(f"packet {i} has unknown stream kind {kind}") from None
        packets.append(Packet(stream_kind, pts if has_pts else None, bool(key), view[pos:pos + length], pos))
        pos += length
    if not any(p.is_video for p in packets):
        raise ContainerError("no video stream")
    return VideoFile(width, height, m, tpf, k, max_bytes, tuple(packets), magic, version)


def open_video(path) -> VideoFile:
    """Read a .qvs file and index its packets without decoding any payload."""
    return from_bytes(Path(path).read_bytes())


def seek(video: VideoFile, pts: int) -> int:
    """Index into ``video.packets`` of the latest keyframe packet with pts <= ``pts``."""
    lo, hi = video.pts_range
    if not lo <= pts <= hi:
        raise ContainerError(f"pts {pts} out of range [{lo}, {hi}]")
    return video.keyframe_packet_at_or_before(pts)


def iter_frames(video: VideoFile, start_packet: int = 0) -> Iterator[Frame]:
    """Decode forward from ``start_packet`` (which must be a keyframe packet) to end of stream."""
    dec = DecoderQueue(video.width, video.height)
    for packet in video.packets[start_packet:]:
        if dec.enqueue(packet):
            while (frame := dec.dequeue()) is not None:
                yield frame
    dec.flush()


def decode_sequential(video: VideoFile) -> list[Frame]:
    frames = list(iter_frames(video))
    if len(frames) != video.frame_count:
        raise ContainerError(f"decoded {len(frames)} frames, header says {video.frame_count}")
    return frames
