"""Deterministic synthetic video content."""
from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np

from vidpipe.container import EncodeConfig, VideoFile, encode, open_video, write


def gradient_frames(n: int, height: int, width: int, seed: int = 0) -> Iterator[np.ndarray]:
    """Drifting banded gradient with a bouncing square on top.

    Bands are 4 pixels wide so keyframes compress somewhat; the drift keeps
    most delta bytes constant and the square gives deltas real structure.
    """
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width]
    base = np.stack([((x // 4) * 5 + (y // 4) * 3 + 60 * c) for c in range(3)]).astype(np.int64)
    side = max(1, min(height, width) // 8)
    color = rng.integers(0, 256, size=3)
    vy, vx = 3, 5
    py = int(rng.integers(0, max(1, height - side)))
    px = int(rng.integers(0, max(1, width - side)))
    for i in range(n):
        frame = ((base + 2 * i) & 255).astype(np.uint8)
        frame[:, py:py + side, px:px + side] = color[:, None, None]
        yield frame
        if not 0 <= py + vy <= height - side:
            vy = -vy
        if not 0 <= px + vx <= width - side:
            vx = -vx
        py = min(max(py + vy, 0), max(0, height - side))
        px = min(max(px + vx, 0), max(0, width - side))


def constant_frames(n: int, height: int, width: int, value=(17, 99, 230)) -> list[np.ndarray]:
    frame = np.empty((3, height, width), dtype=np.uint8)
    frame[:] = np.asarray(value, dtype=np.uint8)[:, None, None]
    return [frame.copy() for _ in range(n)]


def noise_frames(n: int, height: int, width: int, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, (3, height, width), dtype=np.uint8) for _ in range(n)]


def synth_video(
    duration_s: float,
    fps: int = 24,
    size: tuple[int, int] = (240, 320),
    keyframe_period: int = 24,
    max_packet_bytes: int = 4096,
    seed: int = 0,
) -> VideoFile:
    h, w = size
    n = max(1, round(duration_s * fps))
    cfg = EncodeConfig(keyframe_period=keyframe_period, max_packet_bytes=max_packet_bytes)
    return encode(gradient_frames(n, h, w, seed), cfg, frame_count=n)


def cached_synth(directory, duration_s: float, fps: int = 24, size=(240, 320), keyframe_period: int = 24,
                 seed: int = 0) -> Path:
    """Path of a synthetic .qvs, generated once per parameter set."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h, w = size
    path = directory / f"synth_{duration_s:g}s_{fps}fps_{w}x{h}_k{keyframe_period}_s{seed}.qvs"
    if not path.exists():
        tmp = path.with_suffix(".tmp")
        write(synth_video(duration_s, fps, size, keyframe_period, seed=seed), tmp)
        tmp.replace(path)
    return path


def load_or_synth(directory, *args, **kwargs) -> VideoFile:
    return open_video(cached_synth(directory, *args, **kwargs))
