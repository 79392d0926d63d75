"""Keyframe-aligned interval planning over packet metadata."""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from vidpipe.container import ContainerError, Packet, StreamKind, VideoFile


@dataclass(frozen=True)
class ScanResult:
    keyframe_pts: tuple[int, ...]
    pts_min: int
    pts_max: int


@dataclass(frozen=True)
class IntervalSet:
    """Boundaries ``b[0] < ... < b[n]``; interval i is ``[b[i], b[i+1])``, the last one closed."""

    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = self.boundaries
        if not b:
            raise ValueError("an interval set needs at least one boundary")
        if any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing: {b}")

    def __len__(self) -> int:
        return max(1, len(self.boundaries) - 1)

    @property
    def intervals(self) -> list[tuple[int, int]]:
        b = self.boundaries
        if len(b) == 1:
            return [(b[0], b[0])]
        return list(zip(b, b[1:]))

    def locate(self, pts: int) -> int:
        """Index of the interval holding ``pts``."""
        b = self.boundaries
        if not b[0] <= pts <= b[-1]:
            raise ValueError(f"pts {pts} outside [{b[0]}, {b[-1]}]")
        return min(bisect.bisect_right(b, pts) - 1, len(self) - 1)


def scan_packets(source: VideoFile | Iterable[Packet]) -> ScanResult:
    packets = source.packets if isinstance(source, VideoFile) else source
    # start from the empty range; -1 / +inf sentinels would never be updated below
    pts_min = None
    pts_max = None
    keyframes = set()
    for p in packets:
        if p.stream_kind != StreamKind.VIDEO:
            continue
        if p.pts is None:
            continue
        if pts_min is None or p.pts < pts_min:
            pts_min = p.pts
        if pts_max is None or p.pts > pts_max:
            pts_max = p.pts
        if p.keyframe:
            keyframes.add(p.pts)
    if pts_min is None:
        raise ContainerError("no video packets with pts")
    if not keyframes:
        raise ContainerError("no keyframes in video stream")
    return ScanResult(tuple(sorted(keyframes)), pts_min, pts_max)


def nearest_keyframe(keyframes: tuple[int, ...], target: Fraction) -> int:
    """Keyframe closest to ``target``; on a tie the earlier one."""
    j = bisect.bisect_left(keyframes, target)
    if j == 0:
        return keyframes[0]
    if j == len(keyframes):
        return keyframes[-1]
    before, after = keyframes[j - 1], keyframes[j]
    if abs(before - target) <= abs(after - target):
        return before
    return after


def keyframe_intervals(source: VideoFile | ScanResult, c: int) -> IntervalSet:
    """Split the stream into at most ``c`` roughly equal intervals starting on keyframes.

    Interior boundaries snap to the nearest keyframe of the even split
    ``i * (pts_max - pts_min) / c + pts_min``. Boundaries that collide are merged,
    so short videos yield fewer than ``c`` intervals.
    """
    if c < 1:
        raise ValueError("c must be >= 1")
    scan = source if isinstance(source, ScanResult) else scan_packets(source)
    span = Fraction(scan.pts_max - scan.pts_min, c)
    boundaries = {scan.pts_min, scan.pts_max}
    for i in range(1, c):
        boundaries.add(nearest_keyframe(scan.keyframe_pts, i * span + scan.pts_min))
    # a keyframe can only snap inside [pts_min, pts_max] for valid streams
    return IntervalSet(tuple(sorted(b for b in boundaries if scan.pts_min <= b <= scan.pts_max)))
