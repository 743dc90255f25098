"""Particle Gibbs with theta fixed: x_1 traces, ESS and kernel acceptance per step (d=25 by default, d=100 at full scale)."""

from _common import run

if __name__ == "__main__":
    run("pg-states", __doc__, full_scale=dict(d=(100,), iterations=500_000, replications=3))
