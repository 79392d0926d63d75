"""Group-wise prefill with per-group KV-cache pruning.

The visual encoder and LLM are replaced by seeded linear projections: tokens
are projections of mean-pooled patches, and each layer's keys/values/queries
are per-token projections of those tokens. The pruning arithmetic runs on
real tensors of the usual ``(tokens, n_h, d_h)`` layout.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float32


class Scorer(str, Enum):
    KEY_NORM_SMALL = "key_norm_small"
    VALUE_NORM = "value_norm"
    ATTENTION_SCORE = "attention_score"


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    n_heads: int = 4
    head_dim: int = 64
    layers: int = 4
    tokens_per_frame: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.d_model != self.n_heads * self.head_dim:
            raise ValueError(f"d_model ({self.d_model}) must equal n_heads * head_dim ({self.n_heads * self.head_dim})")
        if min(self.d_model, self.n_heads, self.head_dim, self.layers, self.tokens_per_frame) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def kv_dim(self) -> int:
        return self.n_heads * self.head_dim

    @cached_property
    def weights(self) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        scale = 1.0 / math.sqrt(self.d_model)

        def mat(*shape):
            return (rng.standard_normal(shape) * scale).astype(DTYPE)

        return {
            "embed": rng.standard_normal((3, self.d_model)).astype(DTYPE),
            "pos": (0.1 * rng.standard_normal((self.tokens_per_frame, self.d_model))).astype(DTYPE),
            "W_K": mat(self.layers, self.d_model, self.kv_dim),
            "W_V": mat(self.layers, self.d_model, self.kv_dim),
            "W_Q": mat(self.layers, self.d_model, self.kv_dim),
        }


def text_query(cfg: ModelConfig, n_text: int = 256, seed: int = 1) -> np.ndarray:
    """Per-layer queries of a fixed synthetic prompt, shape (L, n_text, n_h, d_h)."""
    rng = np.random.default_rng(seed)
    prompt = rng.standard_normal((n_text, cfg.d_model)).astype(DTYPE)
    q = np.einsum("td,ldk->ltk", prompt, cfg.weights["W_Q"])
    return q.reshape(cfg.layers, n_text, cfg.n_heads, cfg.head_dim)


@dataclass(frozen=True)
class PruneConfig:
    scorer: Scorer = Scorer.KEY_NORM_SMALL
    rho: float = 0.5
    text_query: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "scorer", Scorer(self.scorer))
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"retention ratio must lie in (0, 1], got {self.rho}")


@dataclass
class TokenGroup:
    group_id: int
    tokens: np.ndarray  # (N_g, d_model)
    frame_span: tuple[int, int]  # slot range [first, last], inclusive

    @property
    def size(self) -> int:
        return self.tokens.shape[0]


@dataclass
class KvCache:
    keys: list[np.ndarray]  # per layer (retained, n_h, d_h)
    values: list[np.ndarray]
    origins: list[np.ndarray]  # per layer global token ids of retained entries
    group_sizes: list[int]
    retained: list[list[int]]  # per layer, per group

    @property
    def layers(self) -> int:
        return len(self.keys)

    @property
    def nbytes(self) -> int:
        return sum(k.nbytes + v.nbytes for k, v in zip(self.keys, self.values))

    def tokens(self, layer: int = 0) -> int:
        return self.keys[layer].shape[0]

    def equals(self, other: "KvCache") -> bool:
        if self.layers != other.layers or self.group_sizes != other.group_sizes:
            return False
        pairs = zip(self.keys + self.values + self.origins, other.keys + other.values + other.origins)
        return all(np.array_equal(a, b) for a, b in pairs)


def patch_grid(tokens_per_frame: int) -> tuple[int, int]:
    """Near-square (rows, cols) factorization of the token count."""
    rows = int(math.isqrt(tokens_per_frame))
    while tokens_per_frame % rows:
        rows -= 1
    return rows, tokens_per_frame // rows


def tokenize_pixels(pixels: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(n, 3, h, w) uint8 frames -> (n * tokens_per_frame, d_model) tokens."""
    n, _, h, w = pixels.shape
    gh, gw = patch_grid(cfg.tokens_per_frame)
    if h % gh or w % gw:
        raise ValueError(f"frame {h}x{w} does not divide into a {gh}x{gw} patch grid")
    pooled = pixels.reshape(n, 3, gh, h // gh, gw, w // gw).mean(axis=(3, 5), dtype=np.float64)
    feats = (pooled / 255.0).astype(DTYPE).transpose(0, 2, 3, 1).reshape(n, gh * gw, 3)
    tokens = feats @ cfg.weights["embed"] + cfg.weights["pos"][None]
    return tokens.reshape(n * cfg.tokens_per_frame, cfg.d_model)


def group_slots(n_frames: int, frames_per_group: int) -> list[tuple[int, int]]:
    """Half-open slot ranges of each group."""
    if frames_per_group < 1:
        raise ValueError("frames_per_group must be >= 1")
    return [(a, min(a + frames_per_group, n_frames)) for a in range(0, n_frames, frames_per_group)]


def tokenize_frames(frames, cfg: ModelConfig, frames_per_group: int = 16) -> list[TokenGroup]:
    """Tokenize a FrameBuffer (or a raw (n, 3, h, w) array) into groups of ``frames_per_group`` frames."""
    pixels = frames if isinstance(frames, np.ndarray) else frames.data
    if len(pixels) == 0:
        raise ValueError("no frames to tokenize")
    return [
        TokenGroup(g, tokenize_pixels(pixels[a:b], cfg), (a, b - 1))
        for g, (a, b) in enumerate(group_slots(len(pixels), frames_per_group))
    ]


def score_tokens(keys: np.ndarray, values: np.ndarray, cfg: PruneConfig) -> np.ndarray:
    """Importance score per token (higher is kept first), computed in float64."""
    n = keys.shape[0]
    if cfg.scorer is Scorer.KEY_NORM_SMALL:
        return -np.linalg.norm(keys.reshape(n, -1).astype(np.float64), axis=1)
    if cfg.scorer is Scorer.VALUE_NORM:
        return np.linalg.norm(values.reshape(n, -1).astype(np.float64), axis=1)
    if cfg.text_query is None:
        raise ValueError("attention_score pruning needs a text query")
    q = np.asarray(cfg.text_query, dtype=np.float64)
    # mean over text tokens and heads of <K[i, h], Q[t, h]>
    return np.einsum("nhd,hd->n", keys.astype(np.float64), q.sum(axis=0)) / (q.shape[0] * q.shape[1])


def retained_count(rho: float, n: int) -> int:
    return max(1, math.floor(rho * n + 0.5))


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores (ties -> smaller index), returned ascending."""
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return np.sort(order[:k])


def prune_group(keys: np.ndarray, values: np.ndarray, cfg: PruneConfig):
    n = keys.shape[0]
    if n < 1:
        raise ValueError("cannot prune an empty group")
    if cfg.rho == 1.0:
        return keys, values, np.arange(n)
    idx = top_k(score_tokens(keys, values, cfg), retained_count(cfg.rho, n))
    return keys[idx], values[idx], idx


class GroupPrefiller:
    """Stateful prefill: feed groups in order, then ``finish()`` for the cache."""

    def __init__(self, cfg: ModelConfig, prune: PruneConfig):
        self.cfg = cfg
        self.prune = prune
        if prune.scorer is Scorer.ATTENTION_SCORE:
            q = prune.text_query if prune.text_query is not None else text_query(cfg)
            q = np.asarray(q)
            if q.ndim == 3:
                q = np.broadcast_to(q, (cfg.layers, *q.shape))
            self._layer_prune = [dataclasses.replace(prune, text_query=q[l]) for l in range(cfg.layers)]
        else:
            self._layer_prune = [prune] * cfg.layers
        self._keys = [[] for _ in range(cfg.layers)]
        self._values = [[] for _ in range(cfg.layers)]
        self._origins = [[] for _ in range(cfg.layers)]
        self._retained = [[] for _ in range(cfg.layers)]
        self.group_sizes: list[int] = []
        self.next_token = 0
        self.peak_tokens = 0

    def add(self, group: TokenGroup) -> None:
        if group.group_id != len(self.group_sizes):
            raise ValueError(f"groups must be prefilled in order: got {group.group_id}, expected {len(self.group_sizes)}")
        x = group.tokens
        n = x.shape[0]
        self.peak_tokens = max(self.peak_tokens, n)
        w = self.cfg.weights
        shape = (n, self.cfg.n_heads, self.cfg.head_dim)
        for l in range(self.cfg.layers):
            k = (x @ w["W_K"][l]).reshape(shape)
            v = (x @ w["W_V"][l]).reshape(shape)
            k, v, idx = prune_group(k, v, self._layer_prune[l])
            self._keys[l].append(k)
            self._values[l].append(v)
            self._origins[l].append(idx + self.next_token)
            self._retained[l].append(len(idx))
        self.group_sizes.append(n)
        self.next_token += n

    def finish(self) -> KvCache:
        if not self.group_sizes:
            raise ValueError("no groups were prefilled")
        return KvCache(
            keys=[np.concatenate(k) for k in self._keys],
            values=[np.concatenate(v) for v in self._values],
            origins=[np.concatenate(o) for o in self._origins],
            group_sizes=list(self.group_sizes),
            retained=[list(r) for r in self._retained],
        )


def prefill(groups: Iterable[TokenGroup], cfg: ModelConfig, prune: PruneConfig) -> KvCache:
    runner = GroupPrefiller(cfg, prune)
    for g in groups:
        runner.add(g)
    return runner.finish()


def llm_decode_stub(cache: KvCache, steps: int = 8, seed: int = 2) -> np.ndarray:
    """Fixed-cost stand-in for autoregressive decoding: one softmax readout per layer and step."""
    rng = np.random.default_rng(seed)
    n_h, d_h = cache.keys[0].shape[1:]
    out = np.zeros((n_h, d_h), dtype=np.float64)
    for _ in range(steps):
        q = rng.standard_normal((n_h, d_h))
        for k, v in zip(cache.keys, cache.values):
            logits = np.einsum("nhd,hd->hn", k, q) / math.sqrt(d_h)
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            out += np.einsum("hn,nhd->hd", p, v)
    return out


def group_count(total_frames: int, frames_per_group: int) -> int:
    return -(-total_frames // frames_per_group)


def expected_retained(group_sizes: Sequence[int], rho: float) -> list[int]:
    if rho == 1.0:
        return list(group_sizes)
    return [retained_count(rho, n) for n in group_sizes]
