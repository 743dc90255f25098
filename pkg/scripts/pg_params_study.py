"""Particle Gibbs with 100 theta moves per sweep: a0 traces, ACFs and KDEs (d=25 by default, d=100 at full scale)."""

from _common import run

if __name__ == "__main__":
    run("pg-params", __doc__, full_scale=dict(d=(100,), iterations=1_000_000, replications=2))
