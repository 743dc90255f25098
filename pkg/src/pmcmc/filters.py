"""Bootstrap, fully adapted and general auxiliary particle filters.

All three share one driver.  Step ``t`` (0-based) resamples ancestors from the
normalised weights of step ``t-1``, proposes from the family and assigns

    log v_t = log g + (log f - log q) + (log p~(y_{t+1}|x_t) - log p~(y_t|x_{t-1}^a))

with ``log mu`` in place of ``log f`` and no subtracted term at ``t = 0``.  The
bracketing is deliberate: with ``q = f`` and ``p~ = 1`` both brackets are exactly
zero, so the generic filter reproduces the bootstrap filter bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import DataSet, LinearGaussianSSM, ModelDims, Theta
from .proposals import AdaptedFamily, ProposalFamily, TransitionFamily, TunedFamily, gaussian_logpdf, make_family
from .resampling import DegenerateWeightsError, categorical, multinomial_resample, normalize

WEIGHT_MODES = ("generic", "bootstrap", "adapted")


@dataclass
class ParticleSystem:
    """Output of one (conditional or unconditional) filter run.

    ``logw[t]`` holds log v_t (log g for the bootstrap filter), ``log_pred[t]``
    holds log p~(y_{t+1} | x_t^i) and ``ancestors[t-1, i]`` is the 0-based
    ancestor of particle ``i`` at step ``t``.
    """

    x: np.ndarray  # (T, N, d)
    ancestors: np.ndarray  # (T-1, N)
    logw: np.ndarray  # (T, N)
    log_pred: np.ndarray  # (T, N)
    loglik_terms: np.ndarray  # (T,)
    variant: str = "apf"

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def N(self) -> int:
        return self.x.shape[1]

    @property
    def loglik(self) -> float:
        return float(np.sum(self.loglik_terms))

    def trace_indices(self, b_T: int) -> np.ndarray:
        """Follow ancestors back from particle ``b_T`` at the final step."""
        b = np.empty(self.T, dtype=np.intp)
        b[-1] = b_T
        for t in range(self.T - 2, -1, -1):
            b[t] = self.ancestors[t, b[t + 1]]
        return b

    def path(self, b) -> np.ndarray:
        return self.x[np.arange(self.T), np.asarray(b)]

    def select_final(self, rng: np.random.Generator) -> int:
        """Draw b_T with probability proportional to the final weights."""
        p, _ = normalize(self.logw[-1])
        return categorical(p, rng)

    def to_csv(self, path) -> Path:
        """Trace dump: ``t,i,ancestor,logw,x_1..x_d`` with 1-based indices."""
        path = Path(path)
        d = self.x.shape[2]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "i", "ancestor", "logw"] + [f"x_{k + 1}" for k in range(d)])
            for t in range(self.T):
                for i in range(self.N):
                    anc = "" if t == 0 else int(self.ancestors[t - 1, i]) + 1
                    w.writerow([t + 1, i + 1, anc, repr(float(self.logw[t, i]))] + [repr(float(v)) for v in self.x[t, i]])
        return path


class Weighter:
    """Computes log-weights and predictive terms for one filter configuration."""

    def __init__(self, family: ProposalFamily, mode: str = "generic"):
        if mode not in WEIGHT_MODES:
            raise ValueError(f"unknown weight mode {mode!r}")
        self.family = family
        self.model = family.model
        self.y = family.y
        self.mode = mode
        self._log_py1 = self.model.log_py1(self.y[0]) if mode == "adapted" else 0.0

    def initial(self, x):
        """Weights at the first step.  Returns ``(logw, log_pred, fmean)``."""
        model, fam = self.model, self.family
        fm = model.f_mean(x)
        lp = fam.log_pred_from_fmean(0, fm)
        if self.mode == "bootstrap":
            lw = model.log_g(self.y[0], x)
        elif self.mode == "adapted":
            lw = self._log_py1 + lp
        else:
            lq = gaussian_logpdf(x, fam.initial_mean(), fam.initial_var())
            _check_proposal(lq, 0)
            lw = model.log_g(self.y[0], x) + (model.log_mu(x) - lq) + (lp - 0.0)
        return lw, lp, fm

    def step(self, t, x, anc, mean_all, var, fm_prev, lp_prev):
        """Weights at step ``t > 0`` given the proposal moments of the previous cloud."""
        model, fam = self.model, self.family
        fm = model.f_mean(x)
        lp = fam.log_pred_from_fmean(t, fm)
        if self.mode == "bootstrap":
            lw = model.log_g(self.y[t], x)
        elif self.mode == "adapted":
            lw = lp.copy()
        else:
            lq = gaussian_logpdf(x, mean_all[anc], var)
            _check_proposal(lq, t)
            lf = model.log_f_from_mean(x, fm_prev[anc])
            lw = model.log_g(self.y[t], x) + (lf - lq) + (lp - lp_prev[anc])
        return lw, lp, fm


def _check_proposal(lq, t):
    if not np.all(np.isfinite(lq)):
        raise ValueError(f"proposal density vanished at a sampled point (t={t})")


def _normalize_at(logw, t):
    try:
        return normalize(logw)
    except DegenerateWeightsError as exc:
        raise DegenerateWeightsError(str(exc), t=t) from None


def run_filter(family: ProposalFamily, N: int, rng: np.random.Generator, mode: str = "generic", variant: str = "apf") -> ParticleSystem:
    """Shared driver: multinomial resampling at every step."""
    if N < 1:
        raise ValueError("N must be >= 1")
    weigh = Weighter(family, mode)
    y = family.y
    T, d = y.shape
    x = np.empty((T, N, d))
    ancestors = np.empty((max(T - 1, 0), N), dtype=np.intp)
    logw = np.empty((T, N))
    log_pred = np.empty((T, N))
    terms = np.empty(T)
    log_n = math.log(N)

    x[0] = family.initial_mean() + math.sqrt(family.initial_var()) * rng.standard_normal((N, d))
    logw[0], log_pred[0], fm = weigh.initial(x[0])
    p, lse = _normalize_at(logw[0], 0)
    terms[0] = lse - log_n
    for t in range(1, T):
        a = multinomial_resample(p, N, rng)
        z = rng.standard_normal((N, d))
        mean_all = family.mean(t, fm)
        var = family.var(t)
        x[t] = mean_all[a] + math.sqrt(var) * z
        ancestors[t - 1] = a
        logw[t], log_pred[t], fm_new = weigh.step(t, x[t], a, mean_all, var, fm, log_pred[t - 1])
        fm = fm_new
        p, lse = _normalize_at(logw[t], t)
        terms[t] = lse - log_n
    return ParticleSystem(x, ancestors, logw, log_pred, terms, variant)


def _model(theta: Theta, dims: ModelDims, y) -> tuple[LinearGaussianSSM, np.ndarray]:
    y = y.y if isinstance(y, DataSet) else np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape != (dims.T, dims.d):
        raise ValueError(f"observations have shape {y.shape}, expected {(dims.T, dims.d)}")
    return LinearGaussianSSM(theta, dims), y


def bootstrap_pf(theta: Theta, dims: ModelDims, y, N: int, rng: np.random.Generator) -> ParticleSystem:
    model, y = _model(theta, dims, y)
    return run_filter(TransitionFamily(model, y), N, rng, mode="bootstrap", variant="pf")


def faapf(theta: Theta, dims: ModelDims, y, N: int, rng: np.random.Generator) -> ParticleSystem:
    """Fully adapted APF: weights are predictive likelihoods, the final step is unweighted."""
    model, y = _model(theta, dims, y)
    return run_filter(AdaptedFamily(model, y), N, rng, mode="adapted", variant="fa-apf")


def apf(theta: Theta, dims: ModelDims, y, N: int, rng: np.random.Generator, family="tuned", **family_kwargs) -> ParticleSystem:
    """General APF.  ``family`` is a :class:`ProposalFamily` subclass or instance, or its registry name."""
    model, y = _model(theta, dims, y)
    fam = _resolve_family(family, model, y, family_kwargs)
    return run_filter(fam, N, rng, mode="generic", variant="apf")


def _resolve_family(family, model, y, kwargs) -> ProposalFamily:
    if isinstance(family, ProposalFamily):
        return family
    if isinstance(family, type) and issubclass(family, ProposalFamily):
        return family(model, y, **kwargs)
    return make_family(family, model, y, **kwargs)


__all__ = [
    "ParticleSystem",
    "Weighter",
    "run_filter",
    "bootstrap_pf",
    "faapf",
    "apf",
    "TransitionFamily",
    "AdaptedFamily",
    "TunedFamily",
]
