"""Closed-form memory calculators for long-context video prefill.

All results are exact byte counts (``int``, or ``Fraction`` when a group
count does not divide evenly). Converting to GB is left to :func:`gib` /
:func:`gb` at the presentation edge.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

GIB = 2**30
GB = 10**9


@dataclass(frozen=True)
class MemoryParams:
    seq_len: int  # S
    batch: int = 1
    layers: int = 28
    n_heads: int = 8
    head_dim: int = 512
    d_model: int = 4096
    d_ff: int = 14336
    block_rows: int = 1024  # B_r
    block_cols: int = 1024  # B_c
    bytes_per_element: int = 2
    groups: int | None = None

    def __post_init__(self):
        sizes = (self.batch, self.layers, self.n_heads, self.head_dim, self.d_model, self.d_ff,
                 self.block_rows, self.block_cols, self.bytes_per_element)
        if min(sizes) < 1 or self.seq_len < 0:
            raise ValueError("memory parameters must be positive")
        if self.groups is not None and self.groups < 1:
            raise ValueError("groups must be >= 1")


# Named configurations: InternVL2.5-8B on a one-hour video sampled at 1 fps,
# 256 tokens per frame plus a 256-token prompt.
PRESETS = {
    "internvl25-8b-1h": MemoryParams(seq_len=3600 * 256 + 256),
    "internvl25-8b-1h-video-only": MemoryParams(seq_len=3600 * 256),
    "internvl25-8b-1h-g225": MemoryParams(seq_len=3600 * 256, groups=225),
}


def _per_group(total: int, groups: int | None):
    if groups is None:
        return total
    q = Fraction(total, groups)
    return q.numerator if q.denominator == 1 else q


def kv_cache_bytes(p: MemoryParams) -> int:
    """Keys plus values for every layer and token."""
    return 2 * p.layers * p.seq_len * p.n_heads * p.head_dim * p.bytes_per_element


def flash_attention_activation_bytes(p: MemoryParams):
    """Q, K, V for the sequence plus one B_r x B_c score block per head.

    With ``groups`` set the whole footprint is divided by the group count.
    """
    total = (3 * p.batch * p.seq_len * p.n_heads * p.head_dim
             + p.batch * p.n_heads * p.block_rows * p.block_cols) * p.bytes_per_element
    return _per_group(total, p.groups)


def swiglu_activation_bytes(p: MemoryParams):
    total = p.batch * p.seq_len * (2 * p.d_model + 4 * p.d_ff) * p.bytes_per_element
    return _per_group(total, p.groups)


def raw_video_bytes(frames: int, height: int, width: int, channels: int = 3) -> int:
    """Uncompressed 8-bit frames."""
    if min(frames, height, width, channels) < 1:
        raise ValueError("dimensions must be positive")
    return frames * channels * height * width


def raw_video_bytes_for(duration_s: float, fps: float, height: int, width: int) -> int:
    return raw_video_bytes(round(duration_s * fps), height, width)


def pruned_kv_cache_bytes(p: MemoryParams, rho: float) -> float:
    return kv_cache_bytes(p) * rho


def gib(n) -> float:
    return float(n) / GIB


def gb(n) -> float:
    return float(n) / GB


def report(p: MemoryParams) -> dict:
    ungrouped = replace(p, groups=None)
    out = {
        "params": {k: v for k, v in vars(p).items()},
        "kv_cache_bytes": kv_cache_bytes(p),
        "flash_attention_bytes": int(flash_attention_activation_bytes(ungrouped)),
        "swiglu_bytes": int(swiglu_activation_bytes(ungrouped)),
    }
    out["kv_cache_gib"] = round(gib(out["kv_cache_bytes"]), 4)
    out["flash_attention_gib"] = round(gib(out["flash_attention_bytes"]), 4)
    out["swiglu_gib"] = round(gib(out["swiglu_bytes"]), 4)
    if p.groups:
        out["flash_attention_grouped_gib"] = round(gib(flash_attention_activation_bytes(p)), 4)
        out["swiglu_grouped_gib"] = round(gib(swiglu_activation_bytes(p)), 4)
    return out
