"""Regenerate the checked-in golden QVS file and the hashes of its source frames.

Only rerun this on a deliberate format change; the tests pin both files.
"""
from __future__ import annotations

import argparse
import hashlib
import json
from pathlib import Path

from vidpipe.container import EncodeConfig, encode, write
from vidpipe.synth import gradient_frames

N, H, W = 60, 16, 24
CONFIG = EncodeConfig(keyframe_period=12, max_packet_bytes=200, ticks_per_frame=1000, audio_interleave_period=3)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=str(Path(__file__).resolve().parents[1] / "tests" / "data"))
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = list(gradient_frames(N, H, W, seed=7))
    size = write(encode(frames, CONFIG), out / "golden.qvs")
    hashes = [hashlib.sha256(f.tobytes()).hexdigest() for f in frames]
    meta = {"frames": N, "height": H, "width": W, "seed": 7, "sha256": hashes,
            "config": {"keyframe_period": 12, "max_packet_bytes": 200, "ticks_per_frame": 1000,
                       "audio_interleave_period": 3}}
    (out / "golden_frames.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(f"wrote {size} bytes and {N} hashes to {out}")


if __name__ == "__main__":
    main()
