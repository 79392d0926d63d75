from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vidpipe.prefill import (
    GroupPrefiller,
    ModelConfig,
    PruneConfig,
    Scorer,
    TokenGroup,
    expected_retained,
    group_count,
    prefill,
    prune_group,
    retained_count,
    score_tokens,
    text_query,
    tokenize_frames,
    tokenize_pixels,
    top_k,
)

SMALL = ModelConfig(d_model=32, n_heads=4, head_dim=8, layers=3, tokens_per_frame=4)


def frames(n, h=8, w=8, seed=0):
    return np.random.default_rng(seed).integers(0, 256, (n, 3, h, w), dtype=np.uint8)


def brute_scores(keys, values, scorer, q=None):
    out = []
    for i in range(keys.shape[0]):
        if scorer == Scorer.KEY_NORM_SMALL:
            out.append(-np.sqrt(sum(float(x) ** 2 for x in keys[i].ravel())))
        elif scorer == Scorer.VALUE_NORM:
            out.append(np.sqrt(sum(float(x) ** 2 for x in values[i].ravel())))
        else:
            tot = 0.0
            for t in range(q.shape[0]):
                for h in range(q.shape[1]):
                    tot += float(np.dot(keys[i, h].astype(np.float64), q[t, h].astype(np.float64)))
            out.append(tot / (q.shape[0] * q.shape[1]))
    return np.array(out)


def brute_topk(scores, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sorted(order[:k])


def test_tokenize_examples():
    cfg = ModelConfig(d_model=32, n_heads=4, head_dim=8, layers=1, tokens_per_frame=4)
    groups = tokenize_frames(frames(1), cfg, frames_per_group=1)
    assert len(groups) == 1 and groups[0].tokens.shape == (4, 32)
    same = np.repeat(frames(1), 3, axis=0)
    toks = tokenize_pixels(same, cfg).reshape(3, 4, 32)
    assert np.array_equal(toks[0], toks[1]) and np.array_equal(toks[1], toks[2])
    with pytest.raises(ValueError, match="patch grid"):
        tokenize_pixels(frames(1, 7, 8), cfg)


def test_hour_of_frames_token_count():
    cfg = ModelConfig(d_model=4, n_heads=1, head_dim=4, layers=1, tokens_per_frame=256)
    pixels = np.zeros((3600, 3, 16, 16), np.uint8)
    groups = tokenize_frames(pixels, cfg, frames_per_group=16)
    assert sum(g.size for g in groups) == 921600
    assert len(groups) == group_count(3600, 16) == 225


def test_scorer_examples():
    zeros = np.zeros((5, 2, 3), np.float32)
    assert np.all(score_tokens(zeros, zeros, PruneConfig(Scorer.KEY_NORM_SMALL)) == 0)
    keys = np.array([[[3, 4]], [[0, 0]]], np.float32)
    assert score_tokens(keys, keys, PruneConfig(Scorer.KEY_NORM_SMALL)).tolist() == [-5.0, 0.0]
    with pytest.raises(ValueError, match="text query"):
        score_tokens(keys, keys, PruneConfig(Scorer.ATTENTION_SCORE))


@pytest.mark.parametrize("scorer", list(Scorer))
def test_scorers_match_brute_force(rng, scorer):
    keys = rng.standard_normal((64, 4, 8)).astype(np.float32)
    values = rng.standard_normal((64, 4, 8)).astype(np.float32)
    q = rng.standard_normal((16, 4, 8)).astype(np.float32)
    got = score_tokens(keys, values, PruneConfig(scorer, 0.5, q))
    assert np.allclose(got, brute_scores(keys, values, scorer, q), rtol=0, atol=1e-6)


def test_prune_examples():
    assert top_k(np.array([1.0, 3.0, 2.0, 3.0]), retained_count(0.5, 4)).tolist() == [1, 3]
    k = np.arange(24, dtype=np.float32).reshape(4, 2, 3)
    kk, vv, idx = prune_group(k, k + 1, PruneConfig(rho=1.0))
    assert kk is k and np.array_equal(vv, k + 1) and idx.tolist() == [0, 1, 2, 3]
    assert retained_count(0.5, 16 * 4) == 32
    assert retained_count(0.01, 3) == 1


def test_retained_count_rounds_half_up():
    assert retained_count(0.5, 3) == 2  # 1.5
    assert retained_count(0.25, 10) == 3  # 2.5
    assert retained_count(0.3, 10) == 3


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 1024), rho=st.floats(0.001, 1.0), seed=st.integers(0, 10_000),
       scorer=st.sampled_from(list(Scorer)), ties=st.booleans())
def test_topk_equals_full_sort(n, rho, seed, scorer, ties):
    rng = np.random.default_rng(seed)
    keys = rng.standard_normal((n, 2, 4)).astype(np.float32)
    if ties:
        keys = np.round(keys)  # many equal norms
    values = rng.standard_normal((n, 2, 4)).astype(np.float32)
    q = rng.standard_normal((3, 2, 4)).astype(np.float32)
    cfg = PruneConfig(scorer, rho, q)
    kk, vv, idx = prune_group(keys, values, cfg)
    k = n if rho == 1.0 else max(1, int(np.floor(rho * n + 0.5)))
    assert len(idx) == k
    if rho < 1.0:
        assert idx.tolist() == brute_topk(score_tokens(keys, values, cfg).tolist(), k)
    assert np.array_equal(kk, keys[idx]) and np.array_equal(vv, values[idx])
    assert np.all(np.diff(idx) > 0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 300), r1=st.floats(0.001, 1.0), r2=st.floats(0.001, 1.0), seed=st.integers(0, 1000))
def test_monotone_inclusion(n, r1, r2, seed):
    lo, hi = sorted((r1, r2))
    scores = np.round(np.random.default_rng(seed).standard_normal(n), 1)
    a = set(top_k(scores, retained_count(lo, n)).tolist())
    b = set(top_k(scores, retained_count(hi, n)).tolist()) if hi < 1.0 else set(range(n))
    assert a <= b


def test_rho_one_is_unpruned():
    groups = tokenize_frames(frames(10), SMALL, 4)
    full = prefill(groups, SMALL, PruneConfig(rho=1.0))
    for l in range(SMALL.layers):
        x = np.concatenate([g.tokens for g in groups])
        k = (x @ SMALL.weights["W_K"][l]).reshape(-1, 4, 8)
        assert np.array_equal(full.keys[l], k)
        assert full.origins[l].tolist() == list(range(40))


@pytest.mark.parametrize("fpg", [1, 2, 3, 7, 10])
def test_grouping_invariance_at_rho_one(fpg):
    pix = frames(10)
    single = prefill(tokenize_frames(pix, SMALL, 10), SMALL, PruneConfig(rho=1.0))
    grouped = prefill(tokenize_frames(pix, SMALL, fpg), SMALL, PruneConfig(rho=1.0))
    for a, b in zip(single.keys + single.values, grouped.keys + grouped.values):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("scorer", list(Scorer))
def test_retention_arithmetic(scorer):
    pix = frames(37)
    cfg = SMALL
    cache = prefill(tokenize_frames(pix, cfg, 16), cfg, PruneConfig(scorer, 0.3))
    assert cache.group_sizes == [64, 64, 20]
    want = expected_retained(cache.group_sizes, 0.3)
    assert want == [19, 19, 6]
    for l in range(cfg.layers):
        assert cache.retained[l] == want
        assert cache.tokens(l) == sum(want)
        bounds = np.cumsum([0] + cache.group_sizes)
        pos = 0
        for g, r in enumerate(want):
            block = cache.origins[l][pos:pos + r]
            assert np.all(np.diff(block) > 0)
            assert block.min() >= bounds[g] and block.max() < bounds[g + 1]
            pos += r


def test_half_retention_at_group_size_16():
    cfg = ModelConfig(d_model=32, n_heads=4, head_dim=8, layers=2, tokens_per_frame=16)
    pix = frames(48, 16, 16)
    cache = prefill(tokenize_frames(pix, cfg, 16), cfg, PruneConfig(Scorer.KEY_NORM_SMALL, 0.5))
    assert cache.retained[0] == [128, 128, 128]
    assert cache.keys[0].shape == (384, 4, 8)


def test_layers_prune_independently():
    cache = prefill(tokenize_frames(frames(8), SMALL, 8), SMALL, PruneConfig(Scorer.VALUE_NORM, 0.5))
    assert any(not np.array_equal(cache.origins[0], cache.origins[l]) for l in range(1, SMALL.layers))


def test_in_order_groups_and_peak():
    groups = tokenize_frames(frames(10), SMALL, 4)
    runner = GroupPrefiller(SMALL, PruneConfig())
    with pytest.raises(ValueError, match="in order"):
        runner.add(groups[1])
    for g in groups:
        runner.add(g)
    assert runner.peak_tokens == max(g.size for g in groups) == 16
    with pytest.raises(ValueError):
        GroupPrefiller(SMALL, PruneConfig()).finish()


def test_text_query_shape_and_attention_prefill():
    q = text_query(SMALL)
    assert q.shape == (SMALL.layers, 256, SMALL.n_heads, SMALL.head_dim)
    cache = prefill(tokenize_frames(frames(4), SMALL, 2), SMALL, PruneConfig(Scorer.ATTENTION_SCORE, 0.5))
    assert cache.retained[0] == [4, 4]


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=30, n_heads=4, head_dim=8)
    with pytest.raises(ValueError):
        PruneConfig(rho=0.0)
    with pytest.raises(ValueError):
        PruneConfig(rho=1.5)


def test_deterministic_weights():
    a = ModelConfig(d_model=16, n_heads=2, head_dim=8, layers=1)
    b = ModelConfig(d_model=16, n_heads=2, head_dim=8, layers=1)
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
