"""Seek-based vs. parallel decode as the sampling gap grows; reports the crossover gap."""
from _common import run

if __name__ == "__main__":
    run("gap_sweep", __doc__, duration_s=120.0, cores=[8], gaps=[0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
