"""Particle filters whose clouds are MH chains rather than i.i.d. draws.

At step ``t`` the particles target the mixture over (state, ancestor)

    rho_t(x, a) = W_a N(x; m_a, s^2 I)

where ``W`` are the normalised weights of step ``t-1`` and ``N(m_a, s^2 I)``
is the proposal of the underlying filter from ancestor ``a``: the transition
density for the MCMC-PF, the locally optimal proposal for the MCMC-FA-APF and
a general proposal family for the MCMC-APF.  At the first step the target is
the initial proposal.  Slot 0 is an exact draw from ``rho_t`` and slots
``1..N-1`` follow by chained MH moves, so each particle is marginally
``rho_t``-distributed while neighbours are correlated.  Weights and the
likelihood estimate are computed exactly as in the corresponding i.i.d. filter.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .filters import ParticleSystem, Weighter, _model, _normalize_at, _resolve_family
from .model import LinearGaussianSSM, ModelDims, Theta
from .proposals import AdaptedFamily, ProposalFamily, TransitionFamily, gaussian_logpdf
from .resampling import categorical, normalize

PROPOSALS = ("rw", "ar", "independence")
_KIND = {"rw": _kernels.RW, "ar": _kernels.AR}


@dataclass(frozen=True)
class KernelSpec:
    """MH kernel used to move particles within a time step.

    ``rw_scale`` is the random-walk variance (default ``1/d``); ``eps`` is the
    autoregressive innovation scale (default ``sqrt(1/d)``).  ``independence``
    proposes directly from the target and always accepts.  Only reversible
    kernels are supported, so the reversal kernel equals the kernel itself.
    """

    proposal: str = "rw"
    sweeps: int = 1
    rw_scale: float | None = None
    eps: float | None = None
    reversible: bool = True

    def __post_init__(self):
        if self.proposal not in PROPOSALS:
            raise ValueError(f"unknown kernel proposal {self.proposal!r}; expected one of {PROPOSALS}")
        if not self.reversible:
            raise ValueError("only reversible MH kernels are supported")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.rw_scale is not None and self.rw_scale <= 0:
            raise ValueError("rw_scale must be positive")
        if self.eps is not None and not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")

    def rw_step(self, d: int) -> float:
        return math.sqrt(self.rw_scale if self.rw_scale is not None else 1.0 / d)

    def ar_eps(self, d: int) -> float:
        return self.eps if self.eps is not None else math.sqrt(1.0 / d)

    def step(self, d: int) -> float:
        return self.rw_step(d) if self.proposal == "rw" else self.ar_eps(d)


@dataclass
class MixtureTarget:
    """Invariant target ``rho(x, a) = p[a] N(x; means[a], var I)``.

    ``ar_means``/``ar_var`` define the centre and scale of the autoregressive
    proposal (the transition density from each component's ancestor).
    """

    p: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    var: float
    ar_means: np.ndarray  # (K, d)
    ar_var: float
    tag: str = "apf"

    def __post_init__(self):
        self.cdf = np.cumsum(self.p)
        with np.errstate(divide="ignore"):
            self.log_p = np.log(self.p)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def draw_indices(self, u) -> np.ndarray:
        idx = np.searchsorted(self.cdf, u * self.cdf[-1], side="right")
        return np.minimum(idx, self.K - 1)

    def logpdf(self, x, a):
        return self.log_p[a] + gaussian_logpdf(x, self.means[a], self.var)

    def sample(self, rng: np.random.Generator):
        a = categorical(self.p, rng) if self.K > 1 else 0
        x = self.means[a] + math.sqrt(self.var) * rng.standard_normal(self.d)
        return x, a


def _target(family: ProposalFamily, t: int, fm_prev, logw_prev, tag: str) -> MixtureTarget:
    model = family.model
    if t == 0:
        m = family.initial_mean()[None, :]
        return MixtureTarget(np.ones(1), m, family.initial_var(), model.m0[None, :], model.c0, tag)
    p, _ = _normalize_at(logw_prev, t)
    return MixtureTarget(p, family.mean(t, fm_prev), family.var(t), fm_prev, model.sigma2, tag)


def rho_bootstrap(theta: Theta, x_prev=None, logw_prev=None, dims: ModelDims | None = None) -> MixtureTarget:
    """``W_a f(x | x_prev^a)`` with ``W`` the normalised previous g-weights; ``mu`` when ``x_prev`` is None."""
    model = _adhoc_model(theta, x_prev, dims)
    fam = TransitionFamily(model, np.zeros((2, model.d)))
    if x_prev is None:
        return _target(fam, 0, None, None, "bootstrap")
    x_prev = np.atleast_2d(x_prev)
    return _target(fam, 1, model.f_mean(x_prev), logw_prev, "bootstrap")


def rho_fa(theta: Theta, x_prev, y_t, dims: ModelDims | None = None) -> MixtureTarget:
    """``g(y_t|x) f(x|x_prev^a) / sum_i p(y_t|x_prev^i)``; ``p(x_1|y_1)`` when ``x_prev`` is None."""
    model = _adhoc_model(theta, x_prev, dims, y_t)
    y = np.stack([np.asarray(y_t, dtype=float)] * 2)
    fam = AdaptedFamily(model, y)
    if x_prev is None:
        return _target(fam, 0, None, None, "fa")
    x_prev = np.atleast_2d(x_prev)
    fm = model.f_mean(x_prev)
    return _target(fam, 1, fm, model.log_pred_from_fmean(y[1], fm), "fa")


def rho_apf(family: ProposalFamily, t: int, x_prev, logw_prev) -> MixtureTarget:
    """``v_{t-1}^a / sum v_{t-1} * q_t(x | x_prev^a)`` for step ``t`` (0-based)."""
    fm = None if t == 0 else family.model.f_mean(np.atleast_2d(x_prev))
    return _target(family, t, fm, logw_prev, "apf")


def _adhoc_model(theta, x_prev, dims, y_t=None) -> LinearGaussianSSM:
    if dims is None:
        ref = x_prev if x_prev is not None else y_t
        d = np.shape(ref)[-1] if ref is not None else 1
        dims = ModelDims(d=d, T=2)
    return LinearGaussianSSM(theta, dims)


def mh_move(target: MixtureTarget, x, a: int, spec: KernelSpec, rng: np.random.Generator):
    """One MH move evaluated with the full ratio (reference implementation).

    Returns ``(x_new, a_new, accepted, log_alpha)``.
    """
    x = np.asarray(x, dtype=float)
    d = target.d
    ap = categorical(target.p, rng) if target.K > 1 else 0
    z = rng.standard_normal(d)
    if spec.proposal == "independence":
        xp = target.means[ap] + math.sqrt(target.var) * z
        log_fwd = gaussian_logpdf(xp, target.means[ap], target.var)
        log_back = gaussian_logpdf(x, target.means[a], target.var)
    elif spec.proposal == "rw":
        step = spec.rw_step(d)
        xp = x + step * z
        log_fwd = gaussian_logpdf(xp, x, step**2)
        log_back = gaussian_logpdf(x, xp, step**2)
    else:
        eps = spec.ar_eps(d)
        rho = math.sqrt(1 - eps**2)
        s_var = eps**2 * target.ar_var
        mu_f, mu_b = target.ar_means[ap], target.ar_means[a]
        xp = mu_f + rho * (x - mu_f) + math.sqrt(s_var) * z
        log_fwd = gaussian_logpdf(xp, mu_f + rho * (x - mu_f), s_var)
        log_back = gaussian_logpdf(x, mu_b + rho * (xp - mu_b), s_var)
    log_alpha = (target.logpdf(xp, ap) + target.log_p[a] + log_back) - (target.logpdf(x, a) + target.log_p[ap] + log_fwd)
    accepted = bool(np.log(rng.random()) < log_alpha)
    if accepted:
        return xp, ap, True, float(log_alpha)
    return x.copy(), a, False, float(log_alpha)


@dataclass
class MoveStats:
    """Per-step MH acceptance counters."""

    accepted: np.ndarray
    proposed: np.ndarray

    @classmethod
    def zeros(cls, T: int) -> "MoveStats":
        return cls(np.zeros(T, dtype=np.int64), np.zeros(T, dtype=np.int64))

    @property
    def rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.proposed > 0, self.accepted / np.maximum(self.proposed, 1), np.nan)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "accepted", "proposed"])
            for t, (acc, prop) in enumerate(zip(self.accepted, self.proposed)):
                w.writerow([t + 1, int(acc), int(prop)])
        return path


def draw_proposals(target: MixtureTarget, n: int, rng: np.random.Generator):
    """Ancestor proposals from ``W`` and standard normals for ``n`` moves."""
    if target.K > 1:
        a = target.draw_indices(rng.random(n))
    else:
        a = np.zeros(n, dtype=np.intp)
    z = rng.standard_normal((n, target.d))
    return a, z


def run_chain(target: MixtureTarget, x0, a0: int, a_prop, z, n_out: int, spec: KernelSpec, rng: np.random.Generator):
    """Apply ``n_out * sweeps`` moves from ``(x0, a0)`` using pre-drawn proposals.

    Returns ``(xs, as, n_accepted)``.  Acceptance uniforms are drawn here,
    except for the independence kernel, which never rejects.
    """
    d = target.d
    if n_out == 0:
        return np.empty((0, d)), np.empty(0, dtype=np.intp), 0
    sweeps = spec.sweeps
    if spec.proposal == "independence":
        xp = target.means[a_prop] + math.sqrt(target.var) * z
        pick = np.arange(sweeps - 1, n_out * sweeps, sweeps)
        return xp[pick], np.asarray(a_prop)[pick], n_out * sweeps
    with np.errstate(divide="ignore"):
        log_u = np.log(rng.random(n_out * sweeps))
    xs, as_, n_acc = _kernels.mh_chain(
        np.ascontiguousarray(x0, dtype=float),
        int(a0),
        np.ascontiguousarray(a_prop, dtype=np.intp),
        np.ascontiguousarray(z),
        log_u,
        np.ascontiguousarray(target.means),
        float(target.var),
        _KIND[spec.proposal],
        spec.step(d),
        np.ascontiguousarray(target.ar_means),
        float(target.ar_var),
        n_out,
        sweeps,
    )
    return xs, as_, int(n_acc)


def fill_cloud(target: MixtureTarget, N: int, spec: KernelSpec, rng: np.random.Generator):
    """Exact draw into slot 0, then an MH chain through slots ``1..N-1``."""
    n_prop = (N - 1) * spec.sweeps
    a, z = draw_proposals(target, 1 + n_prop, rng)
    x = np.empty((N, target.d))
    anc = np.empty(N, dtype=np.intp)
    if spec.proposal == "independence" and spec.sweeps == 1:
        # every slot is an exact draw; vectorised exactly as in the i.i.d. filters
        x[:] = target.means[a] + math.sqrt(target.var) * z
        return x, a, n_prop
    x[0] = target.means[a[0]] + math.sqrt(target.var) * z[0]
    anc[0] = a[0]
    xs, as_, n_acc = run_chain(target, x[0], a[0], a[1:], z[1:], N - 1, spec, rng)
    x[1:], anc[1:] = xs, as_
    return x, anc, n_acc


def run_mcmc_filter(
    family: ProposalFamily, N: int, spec: KernelSpec, rng: np.random.Generator, mode: str = "generic", variant: str = "mcmc-apf"
) -> tuple[ParticleSystem, MoveStats]:
    if N < 1:
        raise ValueError("N must be >= 1")
    weigh = Weighter(family, mode)
    T, d = family.y.shape
    x = np.empty((T, N, d))
    ancestors = np.empty((max(T - 1, 0), N), dtype=np.intp)
    logw = np.empty((T, N))
    log_pred = np.empty((T, N))
    terms = np.empty(T)
    stats = MoveStats.zeros(T)
    log_n = math.log(N)

    target = _target(family, 0, None, None, variant)
    x[0], _, n_acc = fill_cloud(target, N, spec, rng)
    stats.accepted[0], stats.proposed[0] = n_acc, (N - 1) * spec.sweeps
    logw[0], log_pred[0], fm = weigh.initial(x[0])
    _, lse = _normalize_at(logw[0], 0)
    terms[0] = lse - log_n
    for t in range(1, T):
        target = _target(family, t, fm, logw[t - 1], variant)
        x[t], a, n_acc = fill_cloud(target, N, spec, rng)
        ancestors[t - 1] = a
        stats.accepted[t], stats.proposed[t] = n_acc, (N - 1) * spec.sweeps
        logw[t], log_pred[t], fm = weigh.step(t, x[t], a, target.means, target.var, fm, log_pred[t - 1])
        _, lse = _normalize_at(logw[t], t)
        terms[t] = lse - log_n
    return ParticleSystem(x, ancestors, logw, log_pred, terms, variant), stats


def mcmc_pf(theta: Theta, dims: ModelDims, y, N: int, spec: KernelSpec, rng: np.random.Generator):
    model, y = _model(theta, dims, y)
    return run_mcmc_filter(TransitionFamily(model, y), N, spec, rng, mode="bootstrap", variant="mcmc-pf")


def mcmc_faapf(theta: Theta, dims: ModelDims, y, N: int, spec: KernelSpec, rng: np.random.Generator):
    model, y = _model(theta, dims, y)
    return run_mcmc_filter(AdaptedFamily(model, y), N, spec, rng, mode="adapted", variant="mcmc-fa-apf")


def mcmc_apf(theta: Theta, dims: ModelDims, y, N: int, spec: KernelSpec, rng: np.random.Generator, family="tuned", **family_kwargs):
    model, y = _model(theta, dims, y)
    fam = _resolve_family(family, model, y, family_kwargs)
    return run_mcmc_filter(fam, N, spec, rng, mode="generic", variant="mcmc-apf")
