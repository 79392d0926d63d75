"""Keyframe-parallel video loading, grouped KV-pruned prefill, and their overlap."""
from vidpipe.container import (
    ContainerError,
    DecoderQueue,
    EncodeConfig,
    Frame,
    Packet,
    StreamKind,
    VideoFile,
    decode_sequential,
    encode,
    open_video,
    seek,
    write,
)
from vidpipe.decoders import (
    FrameBuffer,
    SampleSpec,
    decode_parallel,
    decode_seek_based,
    frame_index,
    resize_bilinear,
)
from vidpipe.planner import IntervalSet, ScanResult, keyframe_intervals, scan_packets

__version__ = "0.1.0"
