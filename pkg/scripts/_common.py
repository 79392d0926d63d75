from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from vidpipe.bench import BenchSpec, run_bench


def run(workload: str, description: str, **defaults) -> None:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--warmup", type=int, default=1)
    ap.add_argument("--assets", help="cache directory for synthetic videos")
    ap.add_argument("--out", default=f"results/{workload}.json")
    ap.add_argument("--no-clamp", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    spec = BenchSpec(workload, repetitions=args.reps, warmup=args.warmup, assets_dir=args.assets,
                     clamp_cores=not args.no_clamp, **defaults)
    result = run_bench(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.to_dict(), indent=2, default=str) + "\n")
    print(json.dumps(result.summary, indent=2, default=str))
    if result.errors:
        print(f"{len(result.errors)} configuration(s) produced wrong output", file=sys.stderr)
        sys.exit(1)
