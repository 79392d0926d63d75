"""Seek-based vs. parallel decode as the video gets longer (1, 5, 10 minutes)."""
from _common import run

if __name__ == "__main__":
    run("duration_sweep", __doc__, durations_s=[60.0, 300.0, 600.0], cores=[8])
