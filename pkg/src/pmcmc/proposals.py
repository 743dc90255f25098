"""Isotropic-Gaussian proposal families for auxiliary particle filters.

A family fixes, for every time step, a Gaussian proposal ``q_t(x_t | x_{t-1})``
with a shared variance and a predictive-likelihood approximation
``log p~(y_{t+1} | x_t)`` (zero at the final step).  Time indices are 0-based:
step ``t`` handles ``y[t]``.
"""

from __future__ import annotations

import math

import numpy as np

from .model import LOG_2PI, LinearGaussianSSM, _sqnorm


def gaussian_logpdf(x, mean, var: float):
    """log N(x; mean, var I) along the last axis."""
    d = np.shape(x)[-1]
    return -0.5 * d * (LOG_2PI + math.log(var)) - 0.5 * _sqnorm(x - mean) / var


class ProposalFamily:
    """Base class: subclasses set the proposal means/variances and ``log_pred``.

    ``fmean`` arguments are the transition means ``A x_{t-1}`` of the whole
    previous cloud, passed in so they are computed once per step.
    """

    name = "apf"
    # whether the first step's target is sampled exactly
    exact_initial = False

    def __init__(self, model: LinearGaussianSSM, y):
        self.model = model
        self.y = np.asarray(y, dtype=float)
        self.T = self.y.shape[0]

    def initial_mean(self) -> np.ndarray:
        raise NotImplementedError

    def initial_var(self) -> float:
        raise NotImplementedError

    def mean(self, t: int, fmean: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def var(self, t: int) -> float:
        raise NotImplementedError

    def log_pred_from_fmean(self, t: int, fmean_t: np.ndarray) -> np.ndarray:
        """log p~(y[t+1] | x_t) for ``t < T-1``; zero at the final step."""
        raise NotImplementedError

    def log_pred(self, t: int, x_t) -> np.ndarray:
        return self.log_pred_from_fmean(t, self.model.f_mean(np.asarray(x_t, dtype=float)))

    def log_q(self, t: int, x, xprev=None):
        """Proposal log-density; ``xprev`` is ignored at ``t == 0``."""
        if t == 0:
            return gaussian_logpdf(x, self.initial_mean(), self.initial_var())
        return gaussian_logpdf(x, self.mean(t, self.model.f_mean(xprev)), self.var(t))


class TransitionFamily(ProposalFamily):
    """``q_t = f`` and ``p~ = 1``: the generic APF then reduces to the bootstrap filter."""

    name = "transition"

    def initial_mean(self):
        return self.model.m0

    def initial_var(self):
        return self.model.c0

    def mean(self, t, fmean):
        return fmean

    def var(self, t):
        return self.model.sigma2

    def log_pred_from_fmean(self, t, fmean_t):
        return np.zeros(fmean_t.shape[:-1])


class AdaptedFamily(ProposalFamily):
    """Locally optimal proposal with the exact predictive likelihood (full adaptation)."""

    name = "adapted"
    exact_initial = True

    def initial_mean(self):
        return self.model.init_opt_mean(self.y[0])

    def initial_var(self):
        return self.model.init_opt_var

    def mean(self, t, fmean):
        return self.model.opt_mean_from_fmean(fmean, self.y[t])

    def var(self, t):
        return self.model.opt_var

    def log_pred_from_fmean(self, t, fmean_t):
        if t >= self.T - 1:
            return np.zeros(fmean_t.shape[:-1])
        return self.model.log_pred_from_fmean(self.y[t + 1], fmean_t)


class TunedFamily(AdaptedFamily):
    """Over-dispersed optimal proposal with a tempered predictive approximation.

    ``q_t = N(m*, inflation * s^2 I)`` and ``p~(y|x) = N(y; A x, pred_inflation (sigma^2 + tau^2) I)``.
    With both factors equal to 1 this is :class:`AdaptedFamily`.
    """

    name = "tuned"
    exact_initial = False

    def __init__(self, model, y, inflation: float = 2.0, pred_inflation: float = 1.5):
        super().__init__(model, y)
        if inflation <= 0 or pred_inflation <= 0:
            raise ValueError("inflation factors must be positive")
        self.inflation = float(inflation)
        self.pred_inflation = float(pred_inflation)
        self._pred_var = pred_inflation * model.pred_var

    def initial_var(self):
        return self.inflation * self.model.init_opt_var

    def var(self, t):
        return self.inflation * self.model.opt_var

    def log_pred_from_fmean(self, t, fmean_t):
        if t >= self.T - 1:
            return np.zeros(fmean_t.shape[:-1])
        return gaussian_logpdf(self.y[t + 1], fmean_t, self._pred_var)


FAMILIES = {"transition": TransitionFamily, "adapted": AdaptedFamily, "tuned": TunedFamily}


def make_family(name: str, model: LinearGaussianSSM, y, **kwargs) -> ProposalFamily:
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown proposal family {name!r}") from None
    return cls(model, y, **kwargs)
