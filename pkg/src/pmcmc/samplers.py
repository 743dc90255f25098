"""Pseudo-marginal MH, particle Gibbs and the exact-likelihood baselines.

Every sampler works on ``theta = (a0, a1, sigma, tau)`` with a Gaussian random
walk of per-coordinate variance ``(100 * 4 * d * T)^{-1}`` unless configured
otherwise.  Chains are deterministic functions of the configuration and seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .conditional import INDEX_MODES, RetainedPath, conditional_filter, generic_log_vtilde, refresh_path
from .diagnostics import ess_from_log
from .ehmm import POOL_KERNELS, ehmm_gibbs_step, ehmm_loglik
from .filters import ParticleSystem
from .mcmc_filters import KernelSpec, MoveStats
from .model import (
    IG_SCALE,
    IG_SHAPE,
    THETA_NAMES,
    LinearGaussianSSM,
    ModelDims,
    NoStationaryDistributionError,
    Theta,
    kalman_loglik,
    log_prior,
    log_prior_array,
    sample_smoothed_path,
)
from .proposals import ProposalFamily
from .resampling import DegenerateWeightsError, make_rng, normalize
from .variants import ALL_ALGORITHMS, EHMM, get_variant

ALGORITHMS = ("pmmh", "pg", "idealized-mh", "idealized-gibbs")
N_THETA = len(THETA_NAMES)
_LOG_PRIOR_CONST = 2 * math.log(0.5) + 2 * (IG_SHAPE * math.log(IG_SCALE) - float(gammaln(IG_SHAPE)))


@dataclass
class SamplerConfig:
    """Settings for one chain.

    ``rw_scale`` is the per-coordinate variance of the theta random walk
    (default ``(100 * 4 * d * T)^{-1}``).  ``theta_moves`` is the number of
    theta updates per Gibbs sweep; 0 keeps theta fixed.  ``state_thin > 0``
    records the whole path every ``state_thin`` iterations.
    """

    algorithm: str = "pmmh"
    variant: str = "pf"
    N: int = 100
    iterations: int = 1000
    burn_in: float = 0.1
    theta_moves: int = 100
    rw_scale: float | None = None
    kernel: KernelSpec = field(default_factory=KernelSpec)
    index_mode: str = "bs"
    ehmm_kernel: str = "independence"
    seed: int = 0
    state_thin: int = 0
    family_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.algorithm in ("pmmh", "pg") and self.variant not in ALL_ALGORITHMS:
            raise ValueError(f"unknown filter variant {self.variant!r}; expected one of {ALL_ALGORITHMS}")
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.theta_moves < 0:
            raise ValueError("theta_moves must be non-negative")
        if self.rw_scale is not None and not self.rw_scale > 0:
            raise ValueError("rw_scale must be positive")
        if self.index_mode not in INDEX_MODES:
            raise ValueError(f"index_mode must be one of {INDEX_MODES}")
        if self.ehmm_kernel not in POOL_KERNELS:
            raise ValueError(f"ehmm_kernel must be one of {POOL_KERNELS}")

    def rw_variance(self, dims: ModelDims) -> float:
        if self.rw_scale is not None:
            return float(self.rw_scale)
        return 1.0 / (100.0 * N_THETA * dims.d * dims.T)

    @property
    def n_burn(self) -> int:
        return int(math.floor(self.burn_in * self.iterations))


@dataclass
class ChainState:
    theta: Theta
    path: np.ndarray  # (T, d)
    loglik: float = math.nan
    iteration: int = 0


# -- parameter moves given a path ---------------------------------------------------


def neighbour_sum(x):
    """``J x`` along the last axis, where ``J`` has ones on the first off-diagonals."""
    out = np.zeros_like(x)
    out[..., 1:] += x[..., :-1]
    out[..., :-1] += x[..., 1:]
    return out


def sufficient_stats(x, y) -> np.ndarray:
    """Statistics that determine the complete-data likelihood as a function of theta."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    cur, prev = x[1:], x[:-1]
    jp = neighbour_sum(prev)
    r = y - x
    return np.array([
        np.sum(cur * cur), np.sum(cur * prev), np.sum(cur * jp),
        np.sum(prev * prev), np.sum(prev * jp), np.sum(jp * jp), np.sum(r * r),
    ])


def stationarity_bound(d: int) -> float:
    """``c`` such that the transition matrix is stable iff ``|a0| + c |a1| < 1``."""
    return 2.0 * math.cos(math.pi / (d + 1))


def complete_log_posterior(theta: Theta, x, y, stationary_only: bool = False) -> float:
    """Unnormalised ``log p(theta) + log p(x, y | theta)`` up to a theta-free constant."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    T, d = x.shape
    bound = stationarity_bound(d) if stationary_only else -1.0
    v = theta.to_array()
    lp = _kernels.log_prior(v, IG_SHAPE, IG_SCALE, _LOG_PRIOR_CONST, bound)
    if lp == -math.inf:
        return lp
    return float(lp + _kernels.complete_loglik(v, sufficient_stats(x, y), T, d))


def theta_moves(
    theta: Theta, x, y, n_moves: int, step: float, rng: np.random.Generator, stationary_only: bool = False
) -> tuple[Theta, int]:
    """``n_moves`` random-walk MH updates leaving ``p(theta | x, y)`` invariant."""
    if n_moves == 0:
        return theta, 0
    x = np.atleast_2d(np.asarray(x, dtype=float))
    T, d = x.shape
    z = rng.standard_normal((n_moves, N_THETA))
    with np.errstate(divide="ignore"):
        log_u = np.log(rng.random(n_moves))
    bound = stationarity_bound(d) if stationary_only else -1.0
    v, n_acc = _kernels.theta_rw_moves(
        theta.to_array(), sufficient_stats(x, y), T, d, z, log_u, step, IG_SHAPE, IG_SCALE, _LOG_PRIOR_CONST, bound
    )
    return Theta.from_array(v), int(n_acc)


# -- likelihood estimates ------------------------------------------------------------


def estimate_loglik(variant: str, theta: Theta, dims: ModelDims, y, config: SamplerConfig, rng: np.random.Generator):
    """Run the chosen estimator.  Returns ``(loglik, draw_path)`` where ``draw_path(rng)`` selects a path.

    Parameters without a stationary pool density (embedded HMM) and fully
    degenerate weights give ``-inf``.
    """
    if variant == EHMM:
        try:
            res = ehmm_loglik(theta, dims, y, config.N, rng, config.ehmm_kernel)
        except (NoStationaryDistributionError, DegenerateWeightsError):
            return -math.inf, None
        return res.loglik, res.sample_path
    v = get_variant(variant)
    model = LinearGaussianSSM(theta, dims)
    try:
        system, _ = v.run(model, y, config.N, rng, config.kernel, **config.family_kwargs)
    except DegenerateWeightsError:
        return -math.inf, None

    def draw_path(r):
        return system.path(system.trace_indices(system.select_final(r)))

    return system.loglik, draw_path


def _propose(theta: Theta, step: float, rng: np.random.Generator) -> np.ndarray:
    return theta.to_array() + step * rng.standard_normal(N_THETA)


def _accept(log_ratio: float, rng: np.random.Generator) -> bool:
    u = rng.random()
    return u == 0.0 or math.log(u) < log_ratio


def pmmh_step(
    state: ChainState,
    dims: ModelDims,
    y,
    config: SamplerConfig,
    rng: np.random.Generator,
    theta_prop: Theta | None = None,
    filter_rng: np.random.Generator | None = None,
) -> tuple[ChainState, bool]:
    """One pseudo-marginal MH update.  Returns ``(new_state, accepted)``.

    Proposals outside the prior support are rejected without running a filter.
    On acceptance a path is drawn from the proposing filter.
    """
    v = theta_prop.to_array() if theta_prop is not None else _propose(state.theta, math.sqrt(config.rw_variance(dims)), rng)
    lp_new = log_prior_array(v)
    nxt = ChainState(state.theta, state.path, state.loglik, state.iteration + 1)
    if lp_new == -math.inf:
        return nxt, False
    theta_new = Theta.from_array(v)
    frng = filter_rng if filter_rng is not None else rng
    ll_new, draw_path = estimate_loglik(config.variant, theta_new, dims, y, config, frng)
    if ll_new == -math.inf:
        return nxt, False
    log_ratio = ll_new + lp_new - state.loglik - log_prior(state.theta)
    if not _accept(log_ratio, rng):
        return nxt, False
    return ChainState(theta_new, draw_path(rng), ll_new, state.iteration + 1), True


@dataclass
class SweepInfo:
    theta_accepted: int
    move_stats: MoveStats | None
    ess: np.ndarray | None  # (T,)


def pg_sweep(
    state: ChainState, dims: ModelDims, y, config: SamplerConfig, rng: np.random.Generator
) -> tuple[ChainState, SweepInfo]:
    """Theta moves given the path, then a conditional filter refresh (BS or AS) of the path."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    is_ehmm = config.variant == EHMM
    step = math.sqrt(config.rw_variance(dims))
    theta, n_acc = theta_moves(state.theta, state.path, y, config.theta_moves, step, rng, stationary_only=is_ehmm and dims.d > 1)
    if is_ehmm:
        path = ehmm_gibbs_step(state.path, theta, dims, y, config.N, rng, config.ehmm_kernel)
        info = SweepInfo(n_acc, None, None)
    else:
        b = rng.integers(0, config.N, size=dims.T)
        system, stats = conditional_filter(
            config.variant, RetainedPath(state.path, b), theta, dims, y, config.N, rng,
            spec=config.kernel, index_mode=config.index_mode, **config.family_kwargs,
        )
        model = LinearGaussianSSM(theta, dims)
        path = system.path(refresh_path(system, model, rng, config.index_mode))
        if stats is None:
            # i.i.d. fills: every free slot is an accepted exact draw
            stats = MoveStats(np.full(dims.T, config.N - 1), np.full(dims.T, config.N - 1))
        info = SweepInfo(n_acc, stats, np.array([ess_from_log(w) for w in system.logw]))
    ll = complete_log_posterior(theta, path, y) - log_prior(theta)
    return ChainState(theta, path, ll, state.iteration + 1), info


def idealized_mh_step(
    state: ChainState, dims: ModelDims, y, config: SamplerConfig, rng: np.random.Generator, theta_prop: Theta | None = None
) -> tuple[ChainState, bool]:
    """MH on theta with the exact Kalman log-likelihood."""
    v = theta_prop.to_array() if theta_prop is not None else _propose(state.theta, math.sqrt(config.rw_variance(dims)), rng)
    lp_new = log_prior_array(v)
    nxt = ChainState(state.theta, state.path, state.loglik, state.iteration + 1)
    if lp_new == -math.inf:
        return nxt, False
    theta_new = Theta.from_array(v)
    ll_new = kalman_loglik(theta_new, dims, y)
    if not _accept(ll_new + lp_new - state.loglik - log_prior(state.theta), rng):
        return nxt, False
    return ChainState(theta_new, state.path, ll_new, state.iteration + 1), True


def idealized_gibbs_sweep(
    state: ChainState, dims: ModelDims, y, config: SamplerConfig, rng: np.random.Generator
) -> tuple[ChainState, SweepInfo]:
    """Theta moves given the path, then an exact path draw from the Kalman smoother."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    theta, n_acc = theta_moves(state.theta, state.path, y, config.theta_moves, math.sqrt(config.rw_variance(dims)), rng)
    path = sample_smoothed_path(theta, dims, y, rng)
    ll = complete_log_posterior(theta, path, y) - log_prior(theta)
    return ChainState(theta, path, ll, state.iteration + 1), SweepInfo(n_acc, None, None)


# -- chain driver --------------------------------------------------------------------


@dataclass
class ChainTrace:
    """Per-iteration output of one chain (initial state excluded).

    ``loglik`` holds the likelihood estimate for MH chains and the complete-data
    log-likelihood for Gibbs chains; ``accepted`` is 0/1 for MH and the number of
    accepted theta moves for Gibbs.
    """

    config: SamplerConfig
    theta: np.ndarray  # (M, 4)
    loglik: np.ndarray  # (M,)
    accepted: np.ndarray  # (M,)
    first_state: np.ndarray  # (M,) x_1 first component
    state_iters: np.ndarray  # (K,)
    states: np.ndarray  # (K, T, d)
    move_accepted: np.ndarray | None = None  # (T,)
    move_proposed: np.ndarray | None = None
    ess_sum: np.ndarray | None = None

    @property
    def n_burn(self) -> int:
        return self.config.n_burn

    def post_burn_in(self) -> np.ndarray:
        return self.theta[self.n_burn:]

    def acceptance_rate(self) -> float:
        acc = self.accepted[self.n_burn:]
        per = 1 if self.config.algorithm in ("pmmh", "idealized-mh") else max(self.config.theta_moves, 1)
        return float(np.mean(acc) / per)

    def move_rates(self) -> np.ndarray | None:
        if self.move_proposed is None:
            return None
        return MoveStats(self.move_accepted, self.move_proposed).rates

    def mean_ess(self) -> np.ndarray | None:
        if self.ess_sum is None:
            return None
        return self.ess_sum / self.theta.shape[0]

    def to_csv(self, path) -> Path:
        """``iter,a0,a1,sigma,tau,loglik,accepted`` with 1-based iterations."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", *THETA_NAMES, "loglik", "accepted"])
            for m in range(self.theta.shape[0]):
                w.writerow([m + 1, *(repr(float(u)) for u in self.theta[m]), repr(float(self.loglik[m])), int(self.accepted[m])])
        return path

    def states_to_csv(self, path) -> Path:
        """``iter,t,dim,x`` (all 1-based) for the thinned state trace."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "t", "dim", "x"])
            for it, xs in zip(self.state_iters, self.states):
                for t in range(xs.shape[0]):
                    for k in range(xs.shape[1]):
                        w.writerow([int(it), t + 1, k + 1, repr(float(xs[t, k]))])
        return path


def initial_state(config: SamplerConfig, dims: ModelDims, y, rng: np.random.Generator, theta0: Theta | None = None) -> ChainState:
    """Start at ``theta0`` (default: the true values) with a path drawn by the chain's own estimator."""
    theta = theta0 or Theta.true_values()
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if config.algorithm.startswith("idealized"):
        ll = kalman_loglik(theta, dims, y)
        return ChainState(theta, sample_smoothed_path(theta, dims, y, rng), ll)
    for _ in range(100):
        ll, draw_path = estimate_loglik(config.variant, theta, dims, y, config, rng)
        if ll > -math.inf:
            path = draw_path(rng)
            if config.algorithm == "pg":
                ll = complete_log_posterior(theta, path, y) - log_prior(theta)
            return ChainState(theta, path, ll)
    raise RuntimeError("could not obtain a finite likelihood estimate at the initial parameters")


def run_chain(
    config: SamplerConfig,
    dims: ModelDims,
    y,
    chain: int = 0,
    theta0: Theta | None = None,
    state0: ChainState | None = None,
) -> ChainTrace:
    """Run ``config.iterations`` updates on stream ``(config.seed, chain)``."""
    if config.algorithm == "pg" and config.N < 2:
        raise ValueError("particle Gibbs needs N >= 2")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rng = make_rng(config.seed, chain)
    state = state0 or initial_state(config, dims, y, rng, theta0)
    M = config.iterations
    thetas = np.empty((M, N_THETA))
    lls = np.empty(M)
    acc = np.zeros(M, dtype=np.int64)
    first = np.empty(M)
    s_iters, s_paths = [], []
    gibbs = config.algorithm in ("pg", "idealized-gibbs")
    move_acc = move_prop = ess_sum = None
    if config.algorithm == "pg" and config.variant != EHMM:
        move_acc, move_prop, ess_sum = np.zeros(dims.T), np.zeros(dims.T), np.zeros(dims.T)
    step_fn = {"pmmh": pmmh_step, "pg": pg_sweep, "idealized-mh": idealized_mh_step, "idealized-gibbs": idealized_gibbs_sweep}[
        config.algorithm
    ]
    for m in range(M):
        state, out = step_fn(state, dims, y, config, rng)
        if gibbs:
            acc[m] = out.theta_accepted
            if out.move_stats is not None and move_acc is not None:
                move_acc += out.move_stats.accepted
                move_prop += out.move_stats.proposed
                ess_sum += out.ess
        else:
            acc[m] = int(out)
        thetas[m] = state.theta.to_array()
        lls[m] = state.loglik
        first[m] = state.path[0, 0]
        if config.state_thin and (m + 1) % config.state_thin == 0:
            s_iters.append(m + 1)
            s_paths.append(state.path.copy())
    states = np.array(s_paths) if s_paths else np.empty((0, dims.T, dims.d))
    return ChainTrace(config, thetas, lls, acc, first, np.array(s_iters, dtype=np.int64), states, move_acc, move_prop, ess_sum)


# -- extended-target identity --------------------------------------------------------


def extended_target_log_ratio(system: ParticleSystem, family: ProposalFamily, b_T: int, log_evidence: float) -> float:
    """``log [pi~(z, b_T) / psi(z)]`` evaluated from densities along the selected lineage.

    The extended target places the lineage of ``b_T`` under the posterior and
    every other variable under its sampling law, so the ratio reduces to the
    posterior over the proposal density of that lineage, divided by ``N^T``.
    """
    return float(generic_log_vtilde(system, family, system.T - 1)[b_T]) - log_evidence


def estimator_log_ratio(system: ParticleSystem, b_T: int, log_evidence: float) -> float:
    """``log [W_T^{b_T} p^(y) / p(y)]``: the same ratio computed from the filter output."""
    p, _ = normalize(system.logw[-1])
    return float(math.log(p[b_T]) + system.loglik - log_evidence)
