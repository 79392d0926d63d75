from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vidpipe.container import ChecksumError, EncodeConfig, Frame, decode_sequential, encode, from_bytes, to_bytes
from vidpipe.decoders import (
    FrameBuffer,
    SampleSpec,
    WorkerError,
    decode_interval,
    decode_parallel,
    decode_seek_based,
    decode_sequential_sampled,
    estimate_pts,
    frame_index,
    gap_indices,
    index_mapper,
    oracle_slice,
    resize_bilinear,
    resize_pixels,
    sample_indices,
)
from vidpipe.planner import keyframe_intervals
from vidpipe.synth import constant_frames, gradient_frames

from conftest import make_video


def test_frame_index_examples():
    assert frame_index(0, 0, 239000, 240) == 0
    assert frame_index(239000, 0, 239000, 240) == 239
    assert frame_index(120000, 0, 239000, 240) == 120
    assert all(frame_index(i * 1000, 0, 239000, 240) == i for i in range(240))


def test_frame_index_shifted_origin_and_ties():
    assert frame_index(5000, 5000, 9000, 5) == 0
    # (m-1)(pts-min)/(max-min) = 2 * 1 / 4 = 0.5 -> 1
    assert frame_index(1, 0, 4, 3) == 1
    assert frame_index(3, 0, 4, 3) == 2  # 1.5 -> 2


def test_frame_index_errors():
    with pytest.raises(ValueError):
        frame_index(0, 0, 10, 1)
    with pytest.raises(ValueError):
        frame_index(11, 0, 10, 5)


def test_estimate_pts_inverts_index(small_video):
    _, video = small_video
    to_index = index_mapper(video)
    assert all(to_index(estimate_pts(i, video)) == i for i in range(video.frame_count))


def test_sample_indices():
    assert sample_indices(100, 24, 1) == (0, 24, 48, 72, 96)
    assert sample_indices(10, 24, 48) == tuple(range(10))
    assert gap_indices(50, 12, 6) == (6, 18, 30, 42)


def test_resize_identity_and_constant(rng):
    px = rng.integers(0, 256, (3, 7, 9), dtype=np.uint8)
    f = Frame(px, 5)
    out = resize_bilinear(f, 7, 9)
    assert np.array_equal(out.pixels, px) and out.pts == 5
    const = np.full((3, 10, 13), 77, np.uint8)
    for h, w in [(1, 1), (3, 20), (25, 4)]:
        assert np.all(resize_pixels(const, h, w) == 77)


def test_resize_checkerboard_center():
    board = np.array([[0, 255], [255, 0]], np.uint8)
    px = np.stack([board] * 3)
    assert resize_pixels(px, 1, 1).tolist() == [[[128]]] * 3


def test_resize_matches_direct_formula(rng):
    px = rng.integers(0, 256, (3, 5, 6), dtype=np.uint8)
    h, w = 3, 8
    out = resize_pixels(px, h, w)
    for y in range(h):
        for x in range(w):
            sy = min(max((y + 0.5) * 5 / h - 0.5, 0), 4)
            sx = min(max((x + 0.5) * 6 / w - 0.5, 0), 5)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, 4), min(x0 + 1, 5)
            fy, fx = sy - y0, sx - x0
            v = (px[:, y0, x0] * (1 - fy) * (1 - fx) + px[:, y0, x1] * (1 - fy) * fx
                 + px[:, y1, x0] * fy * (1 - fx) + px[:, y1, x1] * fy * fx)
            assert np.array_equal(out[:, y, x], np.floor(v + 0.5).astype(np.uint8))


def test_resize_rejects_zero():
    with pytest.raises(ValueError):
        resize_pixels(np.zeros((3, 2, 2), np.uint8), 0, 3)


def test_sample_spec_validation(small_video):
    with pytest.raises(ValueError):
        SampleSpec(())
    with pytest.raises(ValueError):
        SampleSpec((3, 3))
    with pytest.raises(ValueError):
        SampleSpec((-1,))
    with pytest.raises(ValueError):
        decode_parallel(small_video[1], SampleSpec((240,)), 2)


def test_seek_based_examples(small_video, small_decoded):
    _, video = small_video
    spec = SampleSpec(tuple(range(0, 240, 96)))
    buf = decode_seek_based(video, spec)
    assert buf.seeks == len(spec)
    assert np.array_equal(buf.data, oracle_slice(small_decoded, spec))
    one = decode_seek_based(video, SampleSpec((0,)))
    assert one.seeks == 1 and one.frames_decoded == 1
    dense = SampleSpec(tuple(range(240)))
    assert np.array_equal(decode_seek_based(video, dense).data, np.stack([f.pixels for f in small_decoded]))


@pytest.mark.parametrize("cores", [1, 2, 4, 8])
def test_parallel_matches_oracle(small_video, small_decoded, cores):
    _, video = small_video
    spec = SampleSpec(sample_indices(240, 24, 2))
    buf = decode_parallel(video, spec, cores)
    assert np.array_equal(buf.data, oracle_slice(small_decoded, spec))
    assert buf.seeks == len(keyframe_intervals(video, cores))
    assert np.all(buf.fill_mask == 1)


def test_parallel_3600_frames():
    frames, video = make_video(n=3600, h=16, w=16, max_bytes=2048, audio=4)
    spec = SampleSpec(sample_indices(3600, 24, 1))
    ref = oracle_slice(decode_sequential(video), spec)
    for c in (2, 4, 8):
        assert np.array_equal(decode_parallel(video, spec, c).data, ref)


def test_more_cores_than_keyframes():
    frames, video = make_video(n=50, k=24)
    spec = SampleSpec(tuple(range(0, 50, 3)))
    buf = decode_parallel(video, spec, 16)
    assert buf.seeks == 3  # keyframes at 0, 24, 48
    assert np.array_equal(buf.data, oracle_slice(decode_sequential(video), spec))


def test_sequential_sampled_equals_full_decode(small_video, small_decoded):
    spec = SampleSpec((1, 5, 100, 239), target_size=(6, 10))
    assert np.array_equal(decode_sequential_sampled(small_video[1], spec).data, oracle_slice(small_decoded, spec))


def test_resize_in_parallel_decode(small_video, small_decoded):
    spec = SampleSpec(tuple(range(3, 240, 17)), target_size=(12, 12))
    ref = oracle_slice(small_decoded, spec)
    assert np.array_equal(decode_parallel(small_video[1], spec, 4).data, ref)
    assert np.array_equal(decode_seek_based(small_video[1], spec).data, ref)


def test_interval_exit(small_video):
    """A worker writes only frames with pts inside its half-open interval."""
    _, video = small_video
    spec = SampleSpec(tuple(range(240)))
    to_index = index_mapper(video)
    buf = FrameBuffer.allocate(spec, video.frame_shape)
    decode_interval(video, 48000, 120000, False, spec.offsets(), buf, to_index)
    written = np.flatnonzero(buf.fill_mask)
    assert written.tolist() == list(range(48, 120))
    buf = FrameBuffer.allocate(spec, video.frame_shape)
    decode_interval(video, 216000, 239000, True, spec.offsets(), buf, to_index)
    assert np.flatnonzero(buf.fill_mask).tolist() == list(range(216, 240))


def test_worker_failure_is_wrapped():
    frames, video = make_video(n=96, audio=0)
    data = bytearray(to_bytes(video))
    # corrupt a payload byte deep in the stream
    bad = from_bytes(bytes(data))
    target = [p for p in bad.packets if p.pts is not None and p.pts >= 60000][0]
    data[target.offset + len(target.payload) // 2] ^= 0x5A
    corrupt = from_bytes(bytes(data))
    with pytest.raises(WorkerError) as info:
        decode_parallel(corrupt, SampleSpec(tuple(range(96))), 4)
    assert info.value.__cause__ is not None


@st.composite
def decode_cases(draw):
    n = draw(st.integers(1, 120))
    k = draw(st.integers(1, 30))
    max_bytes = draw(st.sampled_from([32, 100, 257, 1024, 4096]))
    audio = draw(st.integers(0, 4))
    idx = draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=40, unique=True))
    resize = draw(st.one_of(st.none(), st.tuples(st.integers(1, 9), st.integers(1, 9))))
    cores = draw(st.integers(1, 12))
    seed = draw(st.integers(0, 1000))
    return n, k, max_bytes, audio, tuple(sorted(idx)), resize, cores, seed


def check_oracle_equivalence(case) -> None:
    n, k, max_bytes, audio, idx, resize, cores, seed = case
    frames = list(gradient_frames(n, 8, 12, seed))
    video = encode(frames, EncodeConfig(keyframe_period=k, max_packet_bytes=max_bytes, audio_interleave_period=audio))
    spec = SampleSpec(idx, resize)
    ref = oracle_slice(decode_sequential(video), spec)
    par = decode_parallel(video, spec, cores)
    seek = decode_seek_based(video, spec)
    assert np.array_equal(par.data, ref)
    assert np.array_equal(seek.data, ref)
    assert np.all(par.fill_mask == 1) and np.all(seek.fill_mask == 1)
    assert par.seeks == len(keyframe_intervals(video, cores))
    assert seek.seeks == len(idx)


@settings(max_examples=60, deadline=None)
@given(case=decode_cases())
def test_oracle_equivalence_property(case):
    check_oracle_equivalence(case)


def test_checksum_error_surfaces_sequentially():
    frames, video = make_video(n=30, audio=0)
    data = bytearray(to_bytes(video))
    p = from_bytes(bytes(data)).packets[0]
    data[p.offset + 14] ^= 1  # inside frame 0's stored crc32
    with pytest.raises(ChecksumError):
        decode_sequential(from_bytes(bytes(data)))
