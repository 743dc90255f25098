"""PMMH with standard and MCMC filters at d=25: traces, averaged ACFs and KDEs of a0."""

from _common import run

if __name__ == "__main__":
    run("pmmh", __doc__, full_scale=dict(iterations=1_000_000, replications=4))
