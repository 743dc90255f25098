"""Relative log-likelihood estimates for PF, FA-APF, MCMC-PF, MCMC-FA-APF and the original EHMM across d."""

from _common import run

if __name__ == "__main__":
    run("loglik-variance", __doc__, full_scale=dict(replications=1000))
