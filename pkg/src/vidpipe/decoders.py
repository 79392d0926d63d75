"""Frame sampling decoders: seek-per-frame and keyframe-interval parallel."""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from vidpipe.container import ContainerError, DecoderQueue, Frame, VideoFile, iter_frames, seek
from vidpipe.planner import IntervalSet, keyframe_intervals


class WorkerError(RuntimeError):
    """A decode worker failed; the original exception is chained."""


@dataclass(frozen=True)
class SampleSpec:
    indices: tuple[int, ...]
    target_size: tuple[int, int] | None = None  # (h', w')

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx:
            raise ValueError("empty sample spec")
        if idx[0] < 0:
            raise ValueError("frame indices must be >= 0")
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise ValueError("frame indices must be strictly increasing")
        if self.target_size is not None and min(self.target_size) < 1:
            raise ValueError(f"bad target size {self.target_size}")

    def __len__(self) -> int:
        return len(self.indices)

    def check(self, video: VideoFile) -> None:
        if self.indices[-1] >= video.frame_count:
            raise ValueError(f"frame index {self.indices[-1]} >= frame count {video.frame_count}")

    def offsets(self) -> dict[int, int]:
        """Frame index -> slot in the output buffer."""
        return {i: k for k, i in enumerate(self.indices)}


def sample_indices(frame_count: int, stored_fps: float, sample_fps: float) -> tuple[int, ...]:
    """Regular sampling grid: frame ``round(j * stored_fps / sample_fps)`` for j = 0, 1, ..."""
    if sample_fps <= 0 or stored_fps <= 0:
        raise ValueError("fps values must be positive")
    step = stored_fps / sample_fps
    out = []
    j = 0
    while True:
        i = int(np.floor(j * step + 0.5))
        if i >= frame_count:
            break
        if not out or i > out[-1]:
            out.append(i)
        j += 1
    return tuple(out)


def gap_indices(frame_count: int, gap: int, offset: int = 0) -> tuple[int, ...]:
    return tuple(range(offset, frame_count, gap))


@dataclass
class FrameBuffer:
    data: np.ndarray  # (n, 3, h, w) uint8
    indices: tuple[int, ...]
    fill_mask: np.ndarray = field(repr=False)  # writes per slot
    seeks: int = 0
    frames_decoded: int = 0

    @classmethod
    def allocate(cls, spec: SampleSpec, frame_shape: tuple[int, int, int]) -> "FrameBuffer":
        if spec.target_size is not None:
            frame_shape = (3, *spec.target_size)
        return cls(
            data=np.zeros((len(spec), *frame_shape), dtype=np.uint8),
            indices=spec.indices,
            fill_mask=np.zeros(len(spec), dtype=np.int32),
        )

    @property
    def complete(self) -> bool:
        return bool(np.all(self.fill_mask == 1))

    def put(self, slot: int, pixels: np.ndarray) -> None:
        self.data[slot] = pixels
        self.fill_mask[slot] += 1


def frame_index(pts: int, pts_min: int, pts_max: int, m: int) -> int:
    """Map a pts onto its frame index by linear rescaling, rounding half away from zero."""
    if m < 2:
        raise ValueError("frame_index needs m >= 2")
    if not pts_min <= pts <= pts_max or pts_min == pts_max:
        raise ValueError(f"pts {pts} outside [{pts_min}, {pts_max}]")
    num = (m - 1) * (pts - pts_min)
    den = pts_max - pts_min
    # all terms non-negative, so half-up is half-away-from-zero
    return (2 * num + den) // (2 * den)


def index_mapper(video: VideoFile) -> Callable[[int], int]:
    lo, hi = video.pts_range
    m = video.frame_count
    if m < 2 or lo == hi:
        return lambda pts: 0
    return lambda pts: frame_index(pts, lo, hi, m)


def estimate_pts(index: int, video: VideoFile) -> int:
    """Inverse of ``frame_index``: pts nearest to frame ``index``."""
    lo, hi = video.pts_range
    m = video.frame_count
    if m < 2:
        return lo
    span = hi - lo
    return lo + (2 * index * span + (m - 1)) // (2 * (m - 1))


@lru_cache(maxsize=32)
def _bilinear_axis(n_in: int, n_out: int):
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_pixels(pixels: np.ndarray, h: int, w: int) -> np.ndarray:
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {h}x{w}")
    _, h0, w0 = pixels.shape
    if (h0, w0) == (h, w):
        return pixels.copy()
    y0, y1, wy = _bilinear_axis(h0, h)
    x0, x1, wx = _bilinear_axis(w0, w)
    src = pixels.astype(np.float64)
    rows = src[:, y0, :] * (1.0 - wy)[None, :, None] + src[:, y1, :] * wy[None, :, None]
    out = rows[:, :, x0] * (1.0 - wx) + rows[:, :, x1] * wx
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def resize_bilinear(frame: Frame, h: int, w: int) -> Frame:
    """Bilinear resize with half-pixel centers and round-half-up output."""
    return Frame(resize_pixels(frame.pixels, h, w), frame.pts)


def _store(buf: FrameBuffer, slot: int, frame: Frame, target: tuple[int, int] | None) -> None:
    pixels = frame.pixels if target is None else resize_pixels(frame.pixels, *target)
    buf.put(slot, pixels)


def decode_sequential_sampled(video: VideoFile, spec: SampleSpec) -> FrameBuffer:
    """Single pass from the first packet, keeping only the requested frames."""
    spec.check(video)
    buf = FrameBuffer.allocate(spec, video.frame_shape)
    offsets = spec.offsets()
    to_index = index_mapper(video)
    n = 0
    for frame in iter_frames(video):
        n += 1
        slot = offsets.get(to_index(frame.pts))
        if slot is not None:
            _store(buf, slot, frame, spec.target_size)
    if n != video.frame_count:
        raise ContainerError(f"decoded {n} frames, header says {video.frame_count}")
    buf.frames_decoded = n
    return buf


def decode_seek_based(video: VideoFile, spec: SampleSpec) -> FrameBuffer:
    """Seek to the keyframe before every requested frame and decode forward to it."""
    spec.check(video)
    buf = FrameBuffer.allocate(spec, video.frame_shape)
    to_index = index_mapper(video)
    dec = DecoderQueue(video.width, video.height)
    for slot, target in enumerate(spec.indices):
        start = seek(video, estimate_pts(target, video))
        buf.seeks += 1
        dec.reset()
        found = False
        for packet in video.packets[start:]:
            if not dec.enqueue(packet):
                continue
            while (frame := dec.dequeue()) is not None:
                i = to_index(frame.pts)
                if i == target:
                    _store(buf, slot, frame, spec.target_size)
                    found = True
                    break
                if i > target:
                    raise ContainerError(f"frame {target} missing from stream")
            if found:
                break
        if not found:
            raise ContainerError(f"frame {target} not reached before end of stream")
    buf.frames_decoded = dec.frames_decoded
    return buf


class _SeekCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.seeks = 0
        self.frames = 0

    def add(self, seeks: int, frames: int) -> None:
        with self._lock:
            self.seeks += seeks
            self.frames += frames


def decode_interval(
    video: VideoFile,
    start: int,
    end: int,
    closed: bool,
    offsets: dict[int, int],
    buf: FrameBuffer,
    to_index: Callable[[int], int],
    target_size: tuple[int, int] | None = None,
) -> int:
    """Decode every frame with pts in [start, end) (or [start, end] if ``closed``).

    Does exactly one seek. Sampled frames are written to their slots in ``buf``;
    the rest are decoded and dropped. Returns the number of frames decoded.
    """
    dec = DecoderQueue(video.width, video.height)
    first = seek(video, start)
    for packet in video.packets[first:]:
        if not dec.enqueue(packet):
            continue
        while (frame := dec.dequeue()) is not None:
            if frame.pts > end or (frame.pts == end and not closed):
                return dec.frames_decoded
            slot = offsets.get(to_index(frame.pts))
            if slot is not None:
                _store(buf, slot, frame, target_size)
    dec.flush()
    return dec.frames_decoded


def decode_parallel(
    video: VideoFile,
    spec: SampleSpec,
    cores: int,
    intervals: IntervalSet | None = None,
) -> FrameBuffer:
    """Decode keyframe-aligned intervals concurrently, one seek per interval.

    Workers write disjoint slots of one shared buffer, so pixel data needs no
    locking.
    """
    if cores < 1:
        raise ValueError("cores must be >= 1")
    spec.check(video)
    plan = intervals if intervals is not None else keyframe_intervals(video, cores)
    buf = FrameBuffer.allocate(spec, video.frame_shape)
    offsets = spec.offsets()
    to_index = index_mapper(video)
    counter = _SeekCounter()
    jobs = plan.intervals

    def work(k: int) -> None:
        start, end = jobs[k]
        n = decode_interval(video, start, end, k == len(jobs) - 1, offsets, buf, to_index, spec.target_size)
        counter.add(1, n)

    with ThreadPoolExecutor(max_workers=min(cores, len(jobs))) as pool:
        futures = [pool.submit(work, k) for k in range(len(jobs))]
        for k, fut in enumerate(futures):
            try:
                fut.result()
            except Exception as exc:
                for f in futures:
                    f.cancel()
                raise WorkerError(f"decode worker for interval {jobs[k]} failed: {exc}") from exc
    buf.seeks = counter.seeks
    buf.frames_decoded = counter.frames
    return buf


def oracle_slice(frames: Sequence[Frame], spec: SampleSpec) -> np.ndarray:
    """Reference output: pick (and resize) the requested frames from a full sequential decode."""
    out = []
    for i in spec.indices:
        px = frames[i].pixels
        if spec.target_size is not None:
            px = resize_pixels(px, *spec.target_size)
        out.append(px)
    return np.stack(out)
