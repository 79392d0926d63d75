"""Benchmark harness: decode scaling, duration and sampling-gap sweeps, pipeline breakdown."""
from __future__ import annotations

import logging
import math
import os
import platform
import statistics
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from typing import Callable

import numpy as np
from scipy import stats

from vidpipe.container import VideoFile
from vidpipe.decoders import (
    SampleSpec,
    decode_parallel,
    decode_seek_based,
    decode_sequential_sampled,
    gap_indices,
    sample_indices,
)
from vidpipe.overlap import PipelineConfig, run_pipeline, run_sequential
from vidpipe.prefill import ModelConfig, PruneConfig, prefill, tokenize_frames
from vidpipe.synth import load_or_synth

log = logging.getLogger(__name__)

WORKLOADS = ("cores_sweep", "duration_sweep", "gap_sweep", "e2e_breakdown")


@dataclass
class BenchSpec:
    workload: str
    repetitions: int = 5
    warmup: int = 1
    duration_s: float = 600.0
    fps: int = 24
    size: tuple[int, int] = (240, 320)
    keyframe_period: int = 24
    sample_fps: float = 1.0
    cores: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    durations_s: list[float] = field(default_factory=lambda: [60.0, 300.0, 600.0])
    gaps: list[float] = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0, 8.0])  # keyframe periods
    gap_offset: int | None = None  # frame phase of the sampling grid; default K // 2
    frames_per_group: int = 16
    rho: float = 0.5
    scorer: str = "key_norm_small"
    model_dims: tuple[int, int, int, int] = (256, 4, 64, 4)  # d_model, n_h, d_h, L
    tokens_per_frame: int = 16
    intervals: int | None = None
    balance: bool = False  # e2e_breakdown: pick the layer count so prefill time ~ decode time
    clamp_cores: bool = True
    assets_dir: str | None = None

    def __post_init__(self):
        if self.workload not in WORKLOADS:
            raise ValueError(f"unknown workload {self.workload!r}; pick one of {WORKLOADS}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class ConfigResult:
    params: dict
    samples_ms: list[float]
    mean_ms: float
    ci95_ms: float | None
    extra: dict = field(default_factory=dict)


@dataclass
class BenchResult:
    workload: str
    spec: dict
    machine: dict
    results: list[ConfigResult] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def find(self, **params) -> ConfigResult:
        for r in self.results:
            if all(r.params.get(k) == v for k, v in params.items()):
                return r
        raise KeyError(params)


def ci95_half_width(samples: list[float]) -> float | None:
    """Half-width of the t-distribution 95% confidence interval of the mean."""
    n = len(samples)
    if n < 2:
        return None
    return float(stats.t.ppf(0.975, n - 1) * statistics.stdev(samples) / math.sqrt(n))


def machine_fingerprint() -> dict:
    return {
        "cpu_count": os.cpu_count(),
        "usable_cpus": len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def usable_cpus() -> int:
    return machine_fingerprint()["usable_cpus"] or 1


def time_runs(fn: Callable[[], object], reps: int, warmup: int, check: Callable[[object], bool]):
    """Run ``fn`` with warm-up; every timed output must pass ``check``."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t = time.perf_counter()
        out = fn()
        dt = (time.perf_counter() - t) * 1e3
        if not check(out):
            raise AssertionError("benchmark output differs from the sequential oracle")
        samples.append(dt)
    return samples


def _record(result: BenchResult, params: dict, samples: list[float], **extra) -> ConfigResult:
    r = ConfigResult(params, samples, statistics.fmean(samples), ci95_half_width(samples), extra)
    result.results.append(r)
    log.info("%s mean=%.1fms", params, r.mean_ms)
    return r


def _decode_mode(mode: str, video: VideoFile, spec: SampleSpec, cores: int) -> Callable[[], np.ndarray]:
    if mode == "sequential":
        return lambda: decode_sequential_sampled(video, spec).data
    if mode == "seek":
        return lambda: decode_seek_based(video, spec).data
    if mode == "parallel":
        return lambda: decode_parallel(video, spec, cores).data
    raise ValueError(f"unknown decode mode {mode!r}")


def _measure_decode(result, spec_: BenchSpec, video, sample, mode, cores, oracle, **params):
    fn = _decode_mode(mode, video, sample, cores)
    try:
        samples = time_runs(fn, spec_.repetitions, spec_.warmup, lambda out: np.array_equal(out, oracle))
    except AssertionError as exc:
        result.errors.append({"mode": mode, "cores": cores, **params, "error": str(exc)})
        return None
    return _record(result, {"mode": mode, "cores": cores, **params}, samples)


def _effective_cores(spec: BenchSpec, requested: int) -> int:
    avail = usable_cpus()
    if spec.clamp_cores and requested > avail:
        warnings.warn(f"requested {requested} cores but only {avail} usable; clamping", RuntimeWarning)
        return avail
    return requested


def _video(spec: BenchSpec, duration_s: float) -> VideoFile:
    assets = spec.assets_dir or os.path.join(tempfile.gettempdir(), "vidpipe-assets")
    return load_or_synth(assets, duration_s, spec.fps, tuple(spec.size), spec.keyframe_period)


def _oracle(video: VideoFile, sample: SampleSpec) -> np.ndarray:
    return decode_sequential_sampled(video, sample).data


def run_bench(spec: BenchSpec) -> BenchResult:
    result = BenchResult(spec.workload, asdict(spec), machine_fingerprint())
    runner = {
        "cores_sweep": _cores_sweep,
        "duration_sweep": _duration_sweep,
        "gap_sweep": _gap_sweep,
        "e2e_breakdown": _e2e_breakdown,
    }[spec.workload]
    runner(spec, result)
    return result


def _cores_sweep(spec: BenchSpec, result: BenchResult) -> None:
    video = _video(spec, spec.duration_s)
    sample = SampleSpec(sample_indices(video.frame_count, spec.fps, spec.sample_fps))
    oracle = _oracle(video, sample)
    _measure_decode(result, spec, video, sample, "sequential", 1, oracle)
    _measure_decode(result, spec, video, sample, "seek", 1, oracle)
    for c in spec.cores:
        eff = _effective_cores(spec, c)
        _measure_decode(result, spec, video, sample, "parallel", eff, oracle, requested_cores=c)
    base = [r for r in result.results if r.params["mode"] == "parallel"]
    if base:
        t1 = base[0].mean_ms
        result.summary["parallel_speedup"] = {r.params["requested_cores"]: t1 / r.mean_ms for r in base}


def _duration_sweep(spec: BenchSpec, result: BenchResult) -> None:
    cores = _effective_cores(spec, spec.cores[-1])
    speedups = {}
    for d in spec.durations_s:
        video = _video(spec, d)
        sample = SampleSpec(sample_indices(video.frame_count, spec.fps, spec.sample_fps))
        oracle = _oracle(video, sample)
        seek_r = _measure_decode(result, spec, video, sample, "seek", 1, oracle, duration_s=d)
        par_r = _measure_decode(result, spec, video, sample, "parallel", cores, oracle, duration_s=d)
        if seek_r and par_r:
            speedups[d] = seek_r.mean_ms / par_r.mean_ms
    result.summary["seek_over_parallel"] = speedups


def _gap_sweep(spec: BenchSpec, result: BenchResult) -> None:
    video = _video(spec, spec.duration_s)
    cores = _effective_cores(spec, spec.cores[-1])
    k = spec.keyframe_period
    offset = k // 2 if spec.gap_offset is None else spec.gap_offset
    rows = []
    for g in spec.gaps:
        gap = max(1, round(g * k))
        sample = SampleSpec(gap_indices(video.frame_count, gap, min(offset, video.frame_count - 1)))
        oracle = _oracle(video, sample)
        seek_r = _measure_decode(result, spec, video, sample, "seek", 1, oracle, gap_frames=gap, gap_periods=g)
        par_r = _measure_decode(result, spec, video, sample, "parallel", cores, oracle, gap_frames=gap, gap_periods=g)
        if seek_r and par_r:
            rows.append((g, par_r.mean_ms, seek_r.mean_ms))
    result.summary["gap_sweep"] = [{"gap_periods": g, "parallel_ms": p, "seek_ms": s} for g, p, s in rows]
    result.summary["crossover_gap_periods"] = crossover(rows)


def crossover(rows: list[tuple[float, float, float]]) -> float | None:
    """Smallest gap from which seek-based decoding stays faster, if parallel wins below it."""
    rows = sorted(rows)
    winners = ["parallel" if p < s else "seek" for _, p, s in rows]
    for i in range(1, len(rows)):
        if all(w == "parallel" for w in winners[:i]) and all(w == "seek" for w in winners[i:]):
            return rows[i][0]
    return None


def balance_layers(video: VideoFile, sample: SampleSpec, cfg: PipelineConfig, reps: int = 3) -> PipelineConfig:
    """Return ``cfg`` with the layer count chosen so standalone prefill time is close to decode time.

    A one-layer timing gives a first guess; the full tokenize + prefill time at
    that guess is then measured and the layer count rescaled once.
    """
    t_dec = statistics.median(_timed(lambda: decode_parallel(video, sample, cfg.cores)) for _ in range(reps))
    frames = decode_parallel(video, sample, cfg.cores)

    def prefill_ms(layers: int) -> float:
        model = replace(cfg.model, layers=layers)
        model.weights  # build weights outside the timed region
        return statistics.median(
            _timed(lambda: prefill(tokenize_frames(frames, model, cfg.frames_per_group), model, cfg.prune))
            for _ in range(reps))

    guess = max(1, round(t_dec / prefill_ms(1)))
    layers = max(1, round(guess * t_dec / prefill_ms(guess)))
    return replace(cfg, model=replace(cfg.model, layers=layers))


def _timed(fn) -> float:
    t = time.perf_counter()
    fn()
    return (time.perf_counter() - t) * 1e3


def _e2e_breakdown(spec: BenchSpec, result: BenchResult) -> None:
    video = _video(spec, spec.duration_s)
    sample = SampleSpec(sample_indices(video.frame_count, spec.fps, spec.sample_fps))
    d_model, n_h, d_h, layers = spec.model_dims
    cfg = PipelineConfig(
        cores=_effective_cores(spec, spec.cores[-1]),
        intervals=spec.intervals,
        frames_per_group=spec.frames_per_group,
        prune=PruneConfig(spec.scorer, spec.rho),
        model=ModelConfig(d_model, n_h, d_h, layers, spec.tokens_per_frame),
    )
    if spec.balance:
        cfg = balance_layers(video, sample, cfg)
        result.summary["balanced_layers"] = cfg.model.layers
    ref = run_sequential(video, sample, cfg)
    oracle = _oracle(video, sample)
    if not np.array_equal(ref.frames.data, oracle):
        result.errors.append({"mode": "sequential_pipeline", "error": "frames differ from oracle"})
        return

    seq_parts = []

    def sequential():
        r = run_sequential(video, sample, cfg)
        seq_parts.append((r.t_dec, r.t_prefill, r.t_llm_decode))
        return r

    pipe_reports = []

    def overlapped():
        r = run_pipeline(video, sample, cfg)
        pipe_reports.append(r.report)
        return r

    def same(out) -> bool:
        return out.cache.equals(ref.cache) and np.array_equal(out.frames.data, oracle)

    s = time_runs(sequential, spec.repetitions, spec.warmup, same)
    seq_parts = seq_parts[spec.warmup:]
    _record(result, {"mode": "sequential"}, s, stages_ms=[
        {"load": a, "prefill": b, "llm_decode": c} for a, b, c in seq_parts])
    p = time_runs(overlapped, spec.repetitions, spec.warmup, same)
    reports = pipe_reports[spec.warmup:]
    _record(result, {"mode": "overlapped"}, p, reports=[r.to_dict() | {"events": []} for r in reports])
    result.summary["sequential_ms"] = statistics.fmean(s)
    result.summary["overlapped_ms"] = statistics.fmean(p)
    result.summary["predicted_ms"] = statistics.fmean(r.t_total_predicted + r.t_llm_decode for r in reports)
    stage_sum = statistics.fmean(a + b for a, b, _ in seq_parts)
    result.summary["overlap_ratio"] = statistics.fmean(r.t_total_measured for r in reports) / stage_sum
