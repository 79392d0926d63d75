"""Decode wall time vs. core count on the 10-minute desk-scale video."""
from _common import run

if __name__ == "__main__":
    run("cores_sweep", __doc__, duration_s=600.0, cores=[1, 2, 4, 8, 16])
