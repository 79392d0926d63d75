from __future__ import annotations

import numpy as np
import pytest

from vidpipe.container import EncodeConfig, decode_sequential, encode
from vidpipe.synth import gradient_frames


def make_video(n=240, h=24, w=32, k=24, max_bytes=512, audio=4, seed=0):
    frames = list(gradient_frames(n, h, w, seed))
    cfg = EncodeConfig(keyframe_period=k, max_packet_bytes=max_bytes, audio_interleave_period=audio)
    return frames, encode(frames, cfg)


@pytest.fixture(scope="session")
def small_video():
    """240 frames, K=24, small packets so frames straddle packet boundaries."""
    return make_video()


@pytest.fixture(scope="session")
def small_decoded(small_video):
    _, video = small_video
    return decode_sequential(video)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
