"""Conditional filters and the index recursions used inside particle Gibbs.

A conditional run keeps a retained path at pinned slots ``b_t`` and fills the
remaining slots as the unconditional filter would: i.i.d. for the standard
filters, and for the MCMC filters by kernel chains running upward from the
pivot for slots above it and downward for slots below it.

Backward sampling and ancestor sampling both use, for Markov models, the weight

    log v_t^i - log p~(y_{t+1} | x_t^i) + log f(x_{t+1}^* | x_t^i)

which is ``log g + log f`` for the bootstrap filter and ``log f`` under full
adaptation.  :func:`generic_index_log_weights` evaluates the same quantity
from whole lineages and serves as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .filters import ParticleSystem, Weighter, _normalize_at
from .mcmc_filters import KernelSpec, MoveStats, _target, draw_proposals, run_chain
from .model import LinearGaussianSSM, ModelDims, Theta
from .proposals import ProposalFamily
from .resampling import categorical, multinomial_resample, normalize
from .variants import get_variant

INDEX_MODES = ("bs", "as")


@dataclass
class RetainedPath:
    """A state path with its (0-based) slot indices."""

    x: np.ndarray  # (T, d)
    b: np.ndarray  # (T,)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.b = np.asarray(self.b, dtype=np.intp)
        if self.b.shape != (self.x.shape[0],):
            raise ValueError("one index per time step required")


def index_log_weights(logw_t, log_pred_t, model: LinearGaussianSSM, fm_t, x_next):
    """Backward/ancestor weights for every particle at step ``t`` given the state at ``t+1``."""
    return logw_t - log_pred_t + model.log_f_from_mean(x_next, fm_t)


def run_conditional(
    family: ProposalFamily,
    N: int,
    rng: np.random.Generator,
    retained: RetainedPath,
    mode: str = "generic",
    variant: str = "apf",
    index_mode: str = "bs",
    spec: KernelSpec | None = None,
    mcmc: bool = False,
) -> tuple[ParticleSystem, MoveStats | None]:
    """Conditional filter pinned at ``retained``.

    With ``index_mode="bs"`` the pinned ancestor is ``b_{t-1}``; with ``"as"``
    it is redrawn from the ancestor-sampling weights before the free slots
    are generated.
    """
    if index_mode not in INDEX_MODES:
        raise ValueError(f"index_mode must be one of {INDEX_MODES}")
    spec = spec or KernelSpec()
    weigh = Weighter(family, mode)
    model = family.model
    T, d = family.y.shape
    xr, b = retained.x, retained.b
    if xr.shape != (T, d):
        raise ValueError("retained path does not match the observations")
    if np.any(b < 0) or np.any(b >= N):
        raise ValueError("pinned indices out of range")
    x = np.empty((T, N, d))
    ancestors = np.empty((max(T - 1, 0), N), dtype=np.intp)
    logw = np.empty((T, N))
    log_pred = np.empty((T, N))
    terms = np.empty(T)
    stats = MoveStats.zeros(T) if mcmc else None
    log_n = math.log(N)

    for t in range(T):
        bt = int(b[t])
        if t == 0:
            target = _target(family, 0, None, None, variant) if mcmc else None
            a = None
            a_pin = 0
        else:
            if index_mode == "as":
                lw = index_log_weights(logw[t - 1], log_pred[t - 1], model, fm, xr[t])
                a_pin = categorical(_normalize_at(lw, t)[0], rng)
            else:
                a_pin = int(b[t - 1])
        if mcmc:
            if t > 0:
                target = _target(family, t, fm, logw[t - 1], variant)
            x[t], a, n_acc = _fill_around(target, N, bt, xr[t], a_pin, spec, rng)
            stats.accepted[t], stats.proposed[t] = n_acc, (N - 1) * spec.sweeps
        elif t == 0:
            x[0] = family.initial_mean() + math.sqrt(family.initial_var()) * rng.standard_normal((N, d))
            x[0, bt] = xr[0]
        else:
            a = multinomial_resample(p, N, rng)
            z = rng.standard_normal((N, d))
            mean_all = family.mean(t, fm)
            x[t] = mean_all[a] + math.sqrt(family.var(t)) * z
            x[t, bt] = xr[t]
            a[bt] = a_pin
        if t == 0:
            logw[0], log_pred[0], fm = weigh.initial(x[0])
        else:
            ancestors[t - 1] = a
            mean_all = family.mean(t, fm)
            logw[t], log_pred[t], fm = weigh.step(t, x[t], a, mean_all, family.var(t), fm, log_pred[t - 1])
        p, lse = _normalize_at(logw[t], t)
        terms[t] = lse - log_n
    return ParticleSystem(x, ancestors, logw, log_pred, terms, variant), stats


def conditional_filter(
    variant: str,
    retained: RetainedPath,
    theta: Theta,
    dims: ModelDims,
    y,
    N: int,
    rng: np.random.Generator,
    spec: KernelSpec | None = None,
    index_mode: str = "bs",
    **family_kwargs,
) -> tuple[ParticleSystem, MoveStats | None]:
    """Conditional run of a registered filter variant (see :mod:`pmcmc.variants`)."""
    v = get_variant(variant)
    model = LinearGaussianSSM(theta, dims)
    fam = v.family(model, np.atleast_2d(np.asarray(y, dtype=float)), **family_kwargs)
    return run_conditional(fam, N, rng, retained, v.weight_mode, v.name, index_mode, spec, v.mcmc)


def refresh_path(
    system: ParticleSystem, model: LinearGaussianSSM, rng: np.random.Generator, index_mode: str = "bs"
) -> np.ndarray:
    """New index path after a conditional run: full backward pass, or final draw plus ancestry."""
    if index_mode == "bs":
        return backward_sample(system, model, rng)
    return system.trace_indices(system.select_final(rng))


def _fill_around(target, N, pivot, x_pin, a_pin, spec: KernelSpec, rng):
    """Pin slot ``pivot`` and run kernel chains upward and downward from it."""
    d = target.d
    n_up, n_down = N - 1 - pivot, pivot
    a_prop, z = draw_proposals(target, (n_up + n_down) * spec.sweeps, rng)
    cut = n_up * spec.sweeps
    xs_up, as_up, acc_up = run_chain(target, x_pin, a_pin, a_prop[:cut], z[:cut], n_up, spec, rng)
    xs_dn, as_dn, acc_dn = run_chain(target, x_pin, a_pin, a_prop[cut:], z[cut:], n_down, spec, rng)
    x = np.empty((N, d))
    a = np.empty(N, dtype=np.intp)
    x[pivot], a[pivot] = x_pin, a_pin
    x[pivot + 1:], a[pivot + 1:] = xs_up, as_up
    x[:pivot], a[:pivot] = xs_dn[::-1], as_dn[::-1]
    return x, a, acc_up + acc_dn


def backward_sample(system: ParticleSystem, model: LinearGaussianSSM, rng: np.random.Generator, size: int | None = None):
    """Draw ``b_{1:T}``: ``b_T`` from the final weights, then backwards with :func:`index_log_weights`.

    Returns shape ``(T,)``, or ``(size, T)`` when ``size`` is given.
    """
    T, N = system.T, system.N
    if size is None:
        b = np.empty(T, dtype=np.intp)
        b[-1] = system.select_final(rng)
        for t in range(T - 2, -1, -1):
            fm = model.f_mean(system.x[t])
            lw = index_log_weights(system.logw[t], system.log_pred[t], model, fm, system.x[t + 1, b[t + 1]])
            b[t] = categorical(normalize(lw)[0], rng)
        return b
    b = np.empty((size, T), dtype=np.intp)
    b[:, -1] = multinomial_resample(normalize(system.logw[-1])[0], size, rng)
    for t in range(T - 2, -1, -1):
        fm = model.f_mean(system.x[t])
        # row j: weights over i given b_{t+1} = j
        lw = index_log_weights(system.logw[t][None, :], system.log_pred[t][None, :], model, fm[None, :, :], system.x[t + 1][:, None, :])
        lw = lw - lw.max(axis=1, keepdims=True)
        cdf = np.cumsum(np.exp(lw), axis=1)
        rows = cdf[b[:, t + 1]]
        u = rng.random(size) * rows[:, -1]
        b[:, t] = np.minimum((rows <= u[:, None]).sum(axis=1), N - 1)
    return b


def ancestor_probabilities(system: ParticleSystem, t: int, x_t, model: LinearGaussianSSM) -> np.ndarray:
    """Ancestor-sampling law over particles at step ``t-1`` for a particle placed at ``x_t``."""
    fm = model.f_mean(system.x[t - 1])
    lw = index_log_weights(system.logw[t - 1], system.log_pred[t - 1], model, fm, np.asarray(x_t, dtype=float))
    return normalize(lw)[0]


def ancestor_sample(system: ParticleSystem, t: int, x_t, model: LinearGaussianSSM, rng: np.random.Generator) -> int:
    """Ancestor at step ``t-1`` for a particle placed at ``x_t`` (the retained state)."""
    return categorical(ancestor_probabilities(system, t, x_t, model), rng)


# -- lineage-based oracle ---------------------------------------------------------


def lineage(system: ParticleSystem, t: int, i: int) -> np.ndarray:
    """Indices ``i_1..i_t`` of the ancestral line of particle ``i`` at step ``t``."""
    idx = np.empty(t + 1, dtype=np.intp)
    idx[t] = i
    for n in range(t - 1, -1, -1):
        idx[n] = system.ancestors[n, idx[n + 1]]
    return idx


def _log_gamma(family: ProposalFamily, x_path, t: int) -> float:
    """``log p(x_{1:t}, y_{1:t}) + log p~(y_{t+1} | x_t)`` (no predictive term at the final step)."""
    model = family.model
    lp = model.log_joint(x_path, family.y[: t + 1])
    return lp + float(family.log_pred(t, x_path[-1][None, :])[0])


def generic_log_vtilde(system: ParticleSystem, family: ProposalFamily, t: int) -> np.ndarray:
    """``log v~_t^i``: target over the product of per-slot proposal marginals along each lineage."""
    N = system.N
    out = np.empty(N)
    norm = [normalize(system.logw[n])[0] for n in range(t)]
    for i in range(N):
        idx = lineage(system, t, i)
        xp = system.x[np.arange(t + 1), idx]
        lpsi = float(family.log_q(0, xp[0][None, :])[0])
        for n in range(1, t + 1):
            a = idx[n - 1]
            lpsi += math.log(norm[n - 1][a]) + float(family.log_q(n, xp[n][None, :], system.x[n - 1, a][None, :])[0])
        out[i] = _log_gamma(family, xp, t) - lpsi - (t + 1) * math.log(N)
    return out


def generic_index_log_weights(system: ParticleSystem, family: ProposalFamily, t: int, future) -> np.ndarray:
    """``log v~_t^i + log gamma(future | lineage_i)`` for every particle ``i`` at step ``t``.

    ``future`` holds the retained states at steps ``t+1..T-1``.
    """
    T = system.T
    future = np.atleast_2d(np.asarray(future, dtype=float))
    lv = generic_log_vtilde(system, family, t)
    out = np.empty(system.N)
    for i in range(system.N):
        idx = lineage(system, t, i)
        xp = system.x[np.arange(t + 1), idx]
        full = np.concatenate([xp, future])
        out[i] = lv[i] + _log_gamma(family, full, T - 1) - _log_gamma(family, xp, t)
    return out
