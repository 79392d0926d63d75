"""Command line entry point: ``vidpipe <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from vidpipe import memory
from vidpipe.container import EncodeConfig, encode, open_video, write
from vidpipe.decoders import (
    SampleSpec,
    decode_parallel,
    decode_seek_based,
    decode_sequential_sampled,
    sample_indices,
)
from vidpipe.planner import keyframe_intervals, scan_packets
from vidpipe.prefill import GroupPrefiller, ModelConfig, PruneConfig, Scorer, tokenize_frames

log = logging.getLogger("vidpipe")


def _pair(text: str, sep: str = "x") -> tuple[int, int]:
    try:
        a, b = text.lower().split(sep)
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AxB, got {text!r}") from None


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _model(args) -> ModelConfig:
    dims = _ints(args.model_dims)
    if len(dims) != 4:
        raise SystemExit("--model-dims takes d_model,n_h,d_h,L")
    return ModelConfig(*dims, tokens_per_frame=args.tokens_per_frame)


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, default=str)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def cmd_synth(args) -> int:
    from vidpipe.synth import gradient_frames

    w, h = args.size
    n = max(1, round(args.duration_s * args.fps))
    cfg = EncodeConfig(args.keyframe_period, args.max_packet_bytes, args.ticks_per_frame, args.audio_period)
    video = encode(gradient_frames(n, h, w, args.seed), cfg, frame_count=n)
    size = write(video, args.out)
    print(f"wrote {args.out}: {n} frames {w}x{h}, {len(video.packets)} packets, {size} bytes")
    return 0


def cmd_plan(args) -> int:
    video = open_video(args.input)
    scan = scan_packets(video)
    plan = keyframe_intervals(scan, args.cores)
    _dump({
        "boundaries": list(plan.boundaries),
        "intervals": plan.intervals,
        "pts_min": scan.pts_min,
        "pts_max": scan.pts_max,
        "keyframes": len(scan.keyframe_pts),
    }, args.out)
    return 0


def cmd_decode(args) -> int:
    video = open_video(args.input)
    spec = SampleSpec(sample_indices(video.frame_count, args.stored_fps, args.fps_sample), args.resize)
    t = time.perf_counter()
    if args.mode == "sequential":
        buf = decode_sequential_sampled(video, spec)
        buf.seeks = 1
    elif args.mode == "seek":
        buf = decode_seek_based(video, spec)
    else:
        buf = decode_parallel(video, spec, args.cores)
    wall_ms = (time.perf_counter() - t) * 1e3
    if args.out:
        buf.data.tofile(args.out)
    report = {
        "mode": args.mode,
        "cores": args.cores if args.mode == "parallel" else 1,
        "seeks": buf.seeks,
        "wall_ms": wall_ms,
        "frames": len(spec),
        "shape": list(buf.data.shape),
        "indices": list(spec.indices),
    }
    _dump(report, args.report)
    return 0


def cmd_prefill(args) -> int:
    h, w = args.frame_size
    raw = np.fromfile(args.frames, dtype=np.uint8)
    per = 3 * h * w
    if raw.size % per:
        raise SystemExit(f"{args.frames} is not a whole number of 3x{h}x{w} frames")
    frames = raw.reshape(-1, 3, h, w)
    model = _model(args)
    prune = PruneConfig(args.scorer, args.rho)
    groups = tokenize_frames(frames, model, args.group_frames)
    timings = []
    runner = GroupPrefiller(model, prune)
    for g in groups:
        t = time.perf_counter()
        runner.add(g)
        timings.append((time.perf_counter() - t) * 1e3)
    cache = runner.finish()
    _dump({
        "groups": len(groups),
        "group_ms": timings,
        "group_tokens": cache.group_sizes,
        "retained_per_group": cache.retained[0],
        "retained_per_layer": [cache.tokens(l) for l in range(cache.layers)],
        "cache_bytes": cache.nbytes,
        "peak_tokens": runner.peak_tokens,
    }, args.report)
    return 0


def cmd_pipeline(args) -> int:
    from vidpipe.overlap import PipelineConfig, run_pipeline

    video = open_video(args.input)
    spec = SampleSpec(sample_indices(video.frame_count, args.stored_fps, args.fps_sample), args.resize)
    cfg = PipelineConfig(
        cores=args.cores,
        intervals=args.intervals,
        frames_per_group=args.group_frames,
        prune=PruneConfig(args.scorer, args.rho),
        model=_model(args),
    )
    result = run_pipeline(video, spec, cfg)
    out = result.report.to_dict()
    out["cache_bytes"] = result.cache.nbytes
    _dump(out, args.report)
    return 0


def cmd_memcalc(args) -> int:
    if args.preset:
        p = memory.PRESETS[args.preset]
    else:
        p = memory.MemoryParams(args.seq_len)
    overrides = {k: getattr(args, k) for k in (
        "seq_len", "batch", "layers", "n_heads", "head_dim", "d_model", "d_ff",
        "block_rows", "block_cols", "bytes_per_element", "groups") if getattr(args, k) is not None}
    if overrides:
        p = replace(p, **overrides)
    rep = memory.report(p)
    if args.json:
        _dump(rep, None)
    else:
        print(f"sequence length      {p.seq_len} tokens")
        print(f"KV cache             {rep['kv_cache_gib']:.1f} GB")
        print(f"FlashAttention act.  {rep['flash_attention_gib']:.1f} GB")
        print(f"SwiGLU activation    {rep['swiglu_gib']:.1f} GB")
        if p.groups:
            print(f"  with G={p.groups}: attention {rep['flash_attention_grouped_gib']:.3f} GB, "
                  f"SwiGLU {rep['swiglu_grouped_gib']:.3f} GB")
    return 0


def cmd_bench(args) -> int:
    from vidpipe.bench import BenchSpec, run_bench

    kw = dict(
        workload=args.workload,
        repetitions=args.reps,
        warmup=args.warmup,
        cores=_ints(args.cores),
        clamp_cores=not args.no_clamp,
        assets_dir=args.assets,
        balance=args.balance,
    )
    if args.duration_s is not None:
        kw["duration_s"] = args.duration_s
    elif args.workload == "gap_sweep":
        kw["duration_s"] = 120.0
    elif args.workload == "e2e_breakdown":
        kw["duration_s"] = 300.0
    if args.durations:
        kw["durations_s"] = _floats(args.durations)
    if args.gaps:
        kw["gaps"] = _floats(args.gaps)
    if args.size:
        w, h = args.size
        kw["size"] = (h, w)
    result = run_bench(BenchSpec(**kw))
    _dump(result.to_dict(), args.out)
    print(json.dumps(result.summary, indent=2, default=str), file=sys.stderr)
    return 1 if result.errors else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vidpipe", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic .qvs video")
    p.add_argument("--duration-s", type=float, default=600.0)
    p.add_argument("--fps", type=int, default=24)
    p.add_argument("--size", type=_pair, default=(320, 240), help="WxH")
    p.add_argument("--keyframe-period", type=int, default=24)
    p.add_argument("--max-packet-bytes", type=int, default=4096)
    p.add_argument("--ticks-per-frame", type=int, default=1000)
    p.add_argument("--audio-period", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plan", help="print keyframe-aligned interval boundaries")
    p.add_argument("--input", required=True)
    p.add_argument("--cores", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    def sampling(p):
        p.add_argument("--input", required=True)
        p.add_argument("--fps-sample", type=float, default=1.0)
        p.add_argument("--stored-fps", type=float, default=24.0)
        p.add_argument("--cores", type=int, default=4)
        p.add_argument("--resize", type=_pair, help="HxW")

    def model(p):
        p.add_argument("--group-frames", type=int, default=16)
        p.add_argument("--rho", type=float, default=0.5)
        p.add_argument("--scorer", choices=[s.value for s in Scorer], default="key_norm_small")
        p.add_argument("--model-dims", default="256,4,64,4", help="d_model,n_h,d_h,L")
        p.add_argument("--tokens-per-frame", type=int, default=16)

    p = sub.add_parser("decode", help="decode sampled frames to a raw tensor")
    sampling(p)
    p.add_argument("--mode", choices=["sequential", "seek", "parallel"], default="parallel")
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("prefill", help="grouped prefill with KV pruning over a raw frame tensor")
    p.add_argument("--frames", required=True)
    p.add_argument("--frame-size", type=_pair, required=True, help="HxW of each frame in the tensor")
    model(p)
    p.add_argument("--report")
    p.set_defaults(func=cmd_prefill)

    p = sub.add_parser("pipeline", help="overlapped decode + prefill")
    sampling(p)
    p.add_argument("--intervals", type=int)
    model(p)
    p.add_argument("--report")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("memcalc", help="KV cache / activation memory calculator")
    p.add_argument("--preset", choices=sorted(memory.PRESETS))
    for flag in ("seq-len", "batch", "layers", "n-heads", "head-dim", "d-model", "d-ff",
                 "block-rows", "block-cols", "bytes-per-element", "groups"):
        p.add_argument(f"--{flag}", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_memcalc)

    p = sub.add_parser("bench", help="run a benchmark workload")
    p.add_argument("--workload", required=True,
                   choices=["cores_sweep", "duration_sweep", "gap_sweep", "e2e_breakdown"])
    p.add_argument("--cores", default="1,2,4,8")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--duration-s", type=float)
    p.add_argument("--durations", help="comma-separated seconds (duration_sweep)")
    p.add_argument("--gaps", help="comma-separated gaps in keyframe periods (gap_sweep)")
    p.add_argument("--size", type=_pair, help="WxH")
    p.add_argument("--assets", help="directory for cached synthetic videos")
    p.add_argument("--balance", action="store_true", help="e2e_breakdown: match prefill cost to decode cost")
    p.add_argument("--no-clamp", action="store_true", help="do not clamp core counts to usable CPUs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "memcalc" and not args.preset and args.seq_len is None:
        raise SystemExit("memcalc needs --preset or --seq-len")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
