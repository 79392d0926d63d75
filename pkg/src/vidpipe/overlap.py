"""Overlapped decode -> prefill pipeline and its latency model.

Decode workers pull fine-grained keyframe intervals earliest-first and write
into one shared frame buffer; a single consumer prefills groups strictly in
order, each as soon as every interval holding one of its frames is done.
"""
from __future__ import annotations

import bisect
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Sequence

from vidpipe.container import VideoFile, open_video
from vidpipe.decoders import FrameBuffer, SampleSpec, decode_interval, decode_parallel, index_mapper
from vidpipe.planner import IntervalSet, keyframe_intervals
from vidpipe.prefill import (
    GroupPrefiller,
    KvCache,
    ModelConfig,
    PruneConfig,
    TokenGroup,
    group_slots,
    llm_decode_stub,
    prefill,
    tokenize_frames,
    tokenize_pixels,
)


class PipelineError(RuntimeError):
    def __init__(self, message: str, report: "PipelineReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class PipelineConfig:
    cores: int = 4
    intervals: int | None = None  # s; defaults to 4 * cores
    frames_per_group: int = 16
    prune: PruneConfig = field(default_factory=PruneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    llm_decode_steps: int = 8

    def __post_init__(self):
        if self.cores < 1:
            raise ValueError("cores must be >= 1")
        if self.intervals is not None and self.intervals < self.cores:
            raise ValueError(f"need intervals >= cores, got s={self.intervals} c={self.cores}")
        if self.frames_per_group < 1:
            raise ValueError("frames_per_group must be >= 1")

    @property
    def s(self) -> int:
        return self.intervals if self.intervals is not None else 4 * self.cores


@dataclass(frozen=True)
class IntervalCompletion:
    start_index: int  # first frame index covered
    end_index: int  # one past the last frame index covered
    t: float


@dataclass
class PipelineReport:
    t_dec: float = 0.0
    t_prefill: float = 0.0
    t_g_dec: float = 0.0
    t_g_prefill: float = 0.0
    delta: float = 0.0
    t_total_measured: float = 0.0
    t_total_predicted: float = 0.0
    t_llm_decode: float = 0.0
    cores: int = 0
    intervals: int = 0
    groups: int = 0
    seeks: int = 0
    group_ready: list[float] = field(default_factory=list)
    group_start: list[float] = field(default_factory=list)
    group_end: list[float] = field(default_factory=list)
    interval_done: list[float] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["breakdown"] = self.breakdown()
        return out

    def breakdown(self) -> list[dict]:
        """Load / prefill / LLM-decode segments on the pipeline clock (ms)."""
        segs = []
        if self.interval_done:
            segs.append({"stage": "load", "start": self.delta, "end": max(self.interval_done)})
        for g, (a, b) in enumerate(zip(self.group_start, self.group_end)):
            segs.append({"stage": "prefill", "group": g, "start": a, "end": b})
        if self.group_end:
            end = self.group_end[-1]
            segs.append({"stage": "llm_decode", "start": end, "end": end + self.t_llm_decode})
        return segs


@dataclass
class PipelineResult:
    cache: KvCache
    frames: FrameBuffer
    report: PipelineReport


def predict_latency(t_dec: float, t_prefill: float, t_g_dec: float, t_g_prefill: float, delta: float) -> float:
    """End-to-end time of the overlapped pipeline: the slower stage plus the other's unoverlapped edge."""
    if min(t_dec, t_prefill, t_g_dec, t_g_prefill, delta) < 0:
        raise ValueError("stage times must be non-negative")
    return max(t_dec + t_g_prefill, t_prefill + t_g_dec) + delta


def interval_frame_ranges(video: VideoFile, plan: IntervalSet) -> list[tuple[int, int]]:
    """Half-open frame-index range decoded by each interval."""
    to_index = index_mapper(video)
    jobs = plan.intervals
    out = []
    for k, (start, end) in enumerate(jobs):
        hi = video.frame_count if k == len(jobs) - 1 else to_index(end)
        out.append((to_index(start), hi))
    return out


def group_dependencies(
    spec: SampleSpec, frames_per_group: int, ranges: Sequence[tuple[int, int]]
) -> list[list[int]]:
    """For each group, the intervals holding at least one of its sampled frames."""
    starts = [a for a, _ in ranges]
    deps = []
    for a, b in group_slots(len(spec), frames_per_group):
        need = set()
        for i in spec.indices[a:b]:
            k = _find_range(starts, ranges, i)
            if k is None:
                raise ValueError(f"frame {i} is not covered by any interval")
            need.add(k)
        deps.append(sorted(need))
    return deps


def _find_range(starts, ranges, i):
    k = bisect.bisect_right(starts, i) - 1
    if k >= 0 and ranges[k][0] <= i < ranges[k][1]:
        return k
    return None


def group_readiness(
    spec: SampleSpec, frames_per_group: int, completions: Sequence[IntervalCompletion]
) -> list[float]:
    """Time each group becomes ready: the latest completion among intervals holding its frames."""
    ordered = sorted(completions, key=lambda c: c.start_index)
    starts = [c.start_index for c in ordered]
    ranges = [(c.start_index, c.end_index) for c in ordered]
    ready = []
    for a, b in group_slots(len(spec), frames_per_group):
        t = float("-inf")
        for i in spec.indices[a:b]:
            k = _find_range(starts, ranges, i)
            t = max(t, ordered[k].t if k is not None else float("inf"))
        ready.append(t)
    return ready


def run_pipeline(video: VideoFile | str, spec: SampleSpec, cfg: PipelineConfig) -> PipelineResult:
    t0 = time.perf_counter()

    def now() -> float:
        return (time.perf_counter() - t0) * 1e3

    report = PipelineReport(cores=cfg.cores)
    events: list[dict] = []
    elock = threading.Lock()

    def log(kind: str, **kw) -> float:
        t = now()
        with elock:
            events.append({"t": t, "event": kind, **kw})
        return t

    if not isinstance(video, VideoFile):
        video = open_video(video)
    spec.check(video)
    plan = keyframe_intervals(video, cfg.s)
    jobs = plan.intervals
    ranges = interval_frame_ranges(video, plan)
    deps = group_dependencies(spec, cfg.frames_per_group, ranges)
    slots = group_slots(len(spec), cfg.frames_per_group)
    report.intervals = len(jobs)
    report.groups = len(slots)

    buf = FrameBuffer.allocate(spec, video.frame_shape)
    offsets = spec.offsets()
    to_index = index_mapper(video)

    cond = threading.Condition()
    done_at: list[float | None] = [None] * len(jobs)
    started_at: list[float | None] = [None] * len(jobs)
    queue = deque(range(len(jobs)))  # ascending start pts: earliest interval first
    failure: list[BaseException] = []

    def worker() -> None:
        while True:
            with cond:
                if failure or not queue:
                    return
                k = queue.popleft()
            start, end = jobs[k]
            started_at[k] = log("interval_start", interval=k)
            try:
                decode_interval(video, start, end, k == len(jobs) - 1, offsets, buf, to_index, spec.target_size)
            except BaseException as exc:  # surfaced by the consumer
                with cond:
                    failure.append(exc)
                    cond.notify_all()
                return
            t = log("interval_done", interval=k)
            with cond:
                done_at[k] = t
                cond.notify_all()

    threads = [threading.Thread(target=worker, name=f"decode-{i}", daemon=True)
               for i in range(min(cfg.cores, len(jobs)))]
    for th in threads:
        th.start()

    prefiller = GroupPrefiller(cfg.model, cfg.prune)
    try:
        for g, (a, b) in enumerate(slots):
            with cond:
                while not failure and any(done_at[k] is None for k in deps[g]):
                    cond.wait()
                if failure:
                    raise PipelineError(f"decode worker failed: {failure[0]}") from failure[0]
                ready = max(done_at[k] for k in deps[g])
            start = log("prefill_start", group=g)
            tokens = tokenize_pixels(buf.data[a:b], cfg.model)
            prefiller.add(TokenGroup(g, tokens, (a, b - 1)))
            end = log("prefill_end", group=g)
            report.group_ready.append(ready)
            report.group_start.append(start)
            report.group_end.append(end)
    except PipelineError as exc:
        with cond:
            queue.clear()
        for th in threads:
            th.join()
        _fill_report(report, events, started_at, done_at, ranges, len(jobs))
        report.error = str(exc)
        exc.report = report
        raise
    for th in threads:
        th.join()
    cache = prefiller.finish()
    report.t_total_measured = now()

    llm_start = log("llm_decode_start")
    llm_decode_stub(cache, cfg.llm_decode_steps)
    report.t_llm_decode = log("llm_decode_end") - llm_start

    _fill_report(report, events, started_at, done_at, ranges, len(jobs))
    return PipelineResult(cache, buf, report)


def _fill_report(report, events, started_at, done_at, ranges, n_jobs) -> None:
    report.events = sorted(events, key=lambda e: e["t"])
    report.seeks = sum(1 for s in started_at if s is not None)
    report.interval_done = [t for t in done_at if t is not None]
    first = min((s for s in started_at if s is not None), default=0.0)
    report.delta = first
    if len(report.interval_done) == n_jobs:
        report.t_dec = max(report.interval_done) - first
    if report.group_ready:
        report.t_g_dec = report.group_ready[0] - first
    durations = [b - a for a, b in zip(report.group_start, report.group_end)]
    report.t_prefill = sum(durations)
    report.t_g_prefill = durations[-1] if durations else 0.0
    report.t_total_predicted = predict_latency(
        report.t_dec, report.t_prefill, report.t_g_dec, report.t_g_prefill, report.delta
    )


@dataclass
class SequentialRun:
    frames: FrameBuffer
    cache: KvCache
    t_dec: float  # ms
    t_prefill: float
    t_llm_decode: float


def run_sequential(video: VideoFile, spec: SampleSpec, cfg: PipelineConfig) -> SequentialRun:
    """Baseline composition: parallel decode of everything, then grouped prefill."""
    t0 = time.perf_counter()
    frames = decode_parallel(video, spec, cfg.cores)
    t1 = time.perf_counter()
    cache = prefill(tokenize_frames(frames, cfg.model, cfg.frames_per_group), cfg.model, cfg.prune)
    t2 = time.perf_counter()
    llm_decode_stub(cache, cfg.llm_decode_steps)
    t3 = time.perf_counter()
    return SequentialRun(frames, cache, (t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t2) * 1e3)
