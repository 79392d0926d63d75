"""Sequential vs. overlapped decode+prefill on a workload balanced so both stages cost about the same."""
from _common import run

if __name__ == "__main__":
    run("e2e_breakdown", __doc__, duration_s=60.0, cores=[4], frames_per_group=4, tokens_per_frame=256,
        model_dims=(256, 4, 64, 1), balance=True)
