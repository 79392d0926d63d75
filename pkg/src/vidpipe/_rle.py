"""Run-length kernels for the QVS frame payloads.

Byte layout (PackBits variant)::

    h < 128   -> literal run: the next h + 1 bytes are copied verbatim
    h >= 128  -> repeat run: the next byte is repeated h - 125 times (3..130)

The kernels are compiled with ``nogil=True`` so decode workers running in
threads can execute them concurrently.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MAX_LITERAL = 128
MIN_RUN = 3
MAX_RUN = 130


def max_encoded_size(n: int) -> int:
    # every 128 literal bytes cost one header byte
    return n + n // MAX_LITERAL + 2


@njit("int64(uint8[::1], uint8[::1])", nogil=True, cache=True)
def _encode(src, out):
    n = src.shape[0]
    i = 0
    o = 0
    while i < n:
        v = src[i]
        j = i + 1
        while j < n and src[j] == v and j - i < MAX_RUN:
            j += 1
        run = j - i
        if run >= MIN_RUN:
            out[o] = 128 + run - MIN_RUN
            out[o + 1] = v
            o += 2
            i = j
            continue
        start = i
        while i < n and i - start < MAX_LITERAL:
            if i + 2 < n and src[i] == src[i + 1] and src[i] == src[i + 2]:
                break
            i += 1
        length = i - start
        out[o] = length - 1
        o += 1
        for k in range(length):
            out[o + k] = src[start + k]
        o += length
    return o


@njit("int64(uint8[::1], uint8[::1], uint8[::1], boolean)", nogil=True, cache=True)
def _decode(src, out, ref, delta):
    # Returns bytes written, or -1 on malformed input / size mismatch.
    n = src.shape[0]
    cap = out.shape[0]
    i = 0
    o = 0
    while i < n:
        h = src[i]
        i += 1
        if h < 128:
            length = h + 1
            if i + length > n or o + length > cap:
                return -1
            if delta:
                for k in range(length):
                    out[o + k] = (src[i + k] + ref[o + k]) & 255
            else:
                for k in range(length):
                    out[o + k] = src[i + k]
            i += length
            o += length
        else:
            length = h - 125
            if i >= n or o + length > cap:
                return -1
            v = src[i]
            i += 1
            if delta:
                for k in range(length):
                    out[o + k] = (v + ref[o + k]) & 255
            else:
                for k in range(length):
                    out[o + k] = v
            o += length
    return o


@njit("void(uint8[::1], uint8[::1], uint8[::1])", nogil=True, cache=True)
def _wrapping_sub(a, b, out):
    for k in range(a.shape[0]):
        out[k] = (a[k] - b[k]) & 255


def rle_encode(data: np.ndarray) -> bytes:
    src = np.ascontiguousarray(data, dtype=np.uint8).reshape(-1)
    out = np.empty(max_encoded_size(src.size), dtype=np.uint8)
    n = _encode(src, out)
    return out[:n].tobytes()


def rle_decode_into(payload, out: np.ndarray, ref: np.ndarray | None = None) -> int:
    """Expand ``payload`` into ``out``; with ``ref`` the bytes are deltas added to it."""
    src = np.frombuffer(payload, dtype=np.uint8)
    if ref is None:
        return int(_decode(src, out, out, False))
    return int(_decode(src, out, ref, True))


def wrapping_delta(frame: np.ndarray, ref: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(frame, dtype=np.uint8).reshape(-1)
    b = np.ascontiguousarray(ref, dtype=np.uint8).reshape(-1)
    out = np.empty_like(a)
    _wrapping_sub(a, b, out)
    return out
