"""Compiled inner loops.

Random numbers are always drawn by the caller with numpy and passed in, so the
compiled code is deterministic and the streams stay under the caller's control.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

RW = 1
AR = 2


@njit(cache=True)
def _sq(a, b):
    s = 0.0
    for k in range(a.shape[0]):
        r = a[k] - b[k]
        s += r * r
    return s


@njit(cache=True)
def mh_chain(x0, a0, a_prop, z, log_u, means, var, kind, step, ar_means, ar_var, n_out, sweeps):
    """Chain of MH moves on the mixture ``sum_a W_a N(x; means[a], var I)``.

    The ancestor proposal ``a_prop[k]`` is drawn from ``W`` (independence
    proposal), so ``W`` cancels from the ratio.  ``kind`` selects the state
    proposal: random walk ``x + step * z`` or the autoregressive move
    ``mu + sqrt(1 - step^2) (x - mu) + step * sqrt(ar_var) z`` around
    ``mu = ar_means[a*]``.  The state is recorded after every ``sweeps``
    proposals.
    """
    d = x0.shape[0]
    xs = np.empty((n_out, d))
    as_ = np.empty(n_out, dtype=np.intp)
    x = x0.copy()
    a = a0
    xp = np.empty(d)
    back = np.empty(d)
    n_acc = 0
    k = 0
    lk = -0.5 * _sq(x, means[a]) / var
    rho = 0.0
    sd = 0.0
    s_var = 1.0
    if kind == AR:
        rho = math.sqrt(1.0 - step * step)
        sd = step * math.sqrt(ar_var)
        s_var = step * step * ar_var
    for i in range(n_out):
        for _ in range(sweeps):
            ap = a_prop[k]
            if kind == RW:
                for j in range(d):
                    xp[j] = x[j] + step * z[k, j]
                log_ratio = 0.0
            else:
                mu = ar_means[ap]
                for j in range(d):
                    xp[j] = mu[j] + rho * (x[j] - mu[j]) + sd * z[k, j]
                mu_b = ar_means[a]
                for j in range(d):
                    back[j] = mu_b[j] + rho * (xp[j] - mu_b[j])
                fwd = 0.0
                for j in range(d):
                    r = xp[j] - mu[j] - rho * (x[j] - mu[j])
                    fwd += r * r
                log_ratio = (-0.5 * _sq(x, back) + 0.5 * fwd) / s_var
            lk_p = -0.5 * _sq(xp, means[ap]) / var
            if log_u[k] < lk_p - lk + log_ratio:
                for j in range(d):
                    x[j] = xp[j]
                a = ap
                lk = lk_p
                n_acc += 1
            k += 1
        xs[i] = x
        as_[i] = a
    return xs, as_, n_acc


@njit(cache=True)
def _quad(x, mean, prec):
    d = x.shape[0]
    s = 0.0
    for i in range(d):
        ri = x[i] - mean[i]
        for j in range(d):
            s += ri * prec[i, j] * (x[j] - mean[j])
    return s


@njit(cache=True)
def gauss_rw_chain(x0, z, log_u, mean, prec, step, n_out):
    """Random-walk MH on ``N(mean, prec^{-1})``; returns the ``n_out`` visited states."""
    d = x0.shape[0]
    xs = np.empty((n_out, d))
    x = x0.copy()
    xp = np.empty(d)
    lq = -0.5 * _quad(x, mean, prec)
    n_acc = 0
    for k in range(n_out):
        for j in range(d):
            xp[j] = x[j] + step * z[k, j]
        lq_p = -0.5 * _quad(xp, mean, prec)
        if log_u[k] < lq_p - lq:
            for j in range(d):
                x[j] = xp[j]
            lq = lq_p
            n_acc += 1
        xs[k] = x
    return xs, n_acc


LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def complete_loglik(v, S, T, d):
    """``log p(x_{2:T} | x_1) + log p(y | x)`` from the sufficient statistics ``S``.

    ``S = (S0, S1, S2, S3, S4, S5, Sy)`` as produced by ``samplers.sufficient_stats``.
    """
    a0, a1, s, tau = v[0], v[1], v[2], v[3]
    q = S[0] - 2.0 * (a0 * S[1] + a1 * S[2]) + a0 * a0 * S[3] + 2.0 * a0 * a1 * S[4] + a1 * a1 * S[5]
    s2, t2 = s * s, tau * tau
    return (
        -0.5 * (T - 1) * d * (LOG_2PI + math.log(s2)) - 0.5 * q / s2
        - 0.5 * T * d * (LOG_2PI + math.log(t2)) - 0.5 * S[6] / t2
    )


@njit(cache=True)
def log_prior(v, ig_shape, ig_scale, log_const, bound):
    """Log prior density; ``bound > 0`` also requires ``|a0| + bound |a1| < 1``."""
    a0, a1, s, tau = v[0], v[1], v[2], v[3]
    if not (-1.0 < a0 < 1.0 and -1.0 < a1 < 1.0 and s > 0.0 and tau > 0.0):
        return -np.inf
    if bound > 0.0 and abs(a0) + bound * abs(a1) >= 1.0:
        return -np.inf
    return log_const - (ig_shape + 1.0) * (math.log(s) + math.log(tau)) - ig_scale * (1.0 / s + 1.0 / tau)


@njit(cache=True)
def theta_rw_moves(v0, S, T, d, z, log_u, step, ig_shape, ig_scale, log_const, bound):
    """Random-walk MH on theta targeting prior x complete-data likelihood.  Returns ``(v, n_accepted)``."""
    v = v0.copy()
    cur = log_prior(v, ig_shape, ig_scale, log_const, bound)
    if cur > -np.inf:
        cur += complete_loglik(v, S, T, d)
    prop = np.empty(4)
    n_acc = 0
    for m in range(z.shape[0]):
        for k in range(4):
            prop[k] = v[k] + step * z[m, k]
        lp = log_prior(prop, ig_shape, ig_scale, log_const, bound)
        if lp == -np.inf:
            continue
        new = lp + complete_loglik(prop, S, T, d)
        if log_u[m] < new - cur:
            v[:] = prop
            cur = new
            n_acc += 1
    return v, n_acc
