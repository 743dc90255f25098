"""Embedded hidden Markov model sampler with independent per-time pools.

Each time step gets a pool of ``N`` states generated by a Markov chain that
leaves the pool density ``rho`` invariant (here the stationary law of the
latent chain).  The pools define a finite-state HMM with transition weights
``f(x_t^j | x_{t-1}^i)`` and emission weights ``g(y_t | x_t^j) / rho(x_t^j)``.
Its forward recursion costs ``O(N^2 T)`` and yields

    p~(y_{1:T}) = N^{-T} sum_{b_{1:T}} mu(x_1^{b_1}) g_1/rho_1 prod_t f g_t/rho_t,

an unbiased estimate of ``p(y_{1:T})``; backward simulation draws index paths
from their exact conditional law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import LOG_2PI, LinearGaussianSSM, ModelDims, Theta, stationary_moments
from .resampling import DegenerateWeightsError, categorical, multinomial_resample

POOL_KERNELS = ("independence", "rw")


@dataclass
class PoolDensity:
    """Gaussian pool density ``N(mean, cov)`` with cached factorisations."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.chol = np.linalg.cholesky(self.cov)
        self.prec = np.linalg.inv(self.cov)
        self.prec = 0.5 * (self.prec + self.prec.T)
        d = self.mean.shape[0]
        self._const = -0.5 * (d * LOG_2PI + 2.0 * np.sum(np.log(np.diag(self.chol))))

    @classmethod
    def stationary(cls, theta: Theta, d: int) -> "PoolDensity":
        m = stationary_moments(theta, d)
        return cls(m.mean, m.cov)

    def logpdf(self, x):
        r = np.asarray(x) - self.mean
        return self._const - 0.5 * np.einsum("...i,ij,...j->...", r, self.prec, r)

    def sample(self, rng, n: int):
        return self.mean + rng.standard_normal((n, self.mean.shape[0])) @ self.chol.T


@dataclass
class Pool:
    x: np.ndarray  # (T, N, d)
    density: PoolDensity
    kernel: str
    accepted: int = 0
    proposed: int = 0

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def N(self) -> int:
        return self.x.shape[1]


def _check_kernel(kernel):
    if kernel not in POOL_KERNELS:
        raise ValueError(f"unknown pool kernel {kernel!r}; expected one of {POOL_KERNELS}")


def _rw_step(d, rw_scale):
    return math.sqrt(rw_scale if rw_scale is not None else 1.0 / d)


def _chain(density: PoolDensity, x0, n: int, kernel: str, rng, rw_scale=None):
    """``n`` further states of the pool chain started at ``x0``.  Returns ``(xs, n_accepted)``."""
    d = density.mean.shape[0]
    if n == 0:
        return np.empty((0, d)), 0
    if kernel == "independence":
        return density.sample(rng, n), n
    z = rng.standard_normal((n, d))
    with np.errstate(divide="ignore"):
        log_u = np.log(rng.random(n))
    xs, n_acc = _kernels.gauss_rw_chain(
        np.ascontiguousarray(x0, dtype=float), z, log_u, density.mean, density.prec, _rw_step(d, rw_scale), n
    )
    return xs, int(n_acc)


def generate_pool(
    theta: Theta, dims: ModelDims, N: int, rng: np.random.Generator, kernel: str = "independence", rw_scale: float | None = None
) -> Pool:
    """First pool state from ``rho``, the rest by the ``rho``-invariant kernel, independently over time."""
    _check_kernel(kernel)
    density = PoolDensity.stationary(theta, dims.d)
    x = np.empty((dims.T, N, dims.d))
    acc = 0
    for t in range(dims.T):
        x[t, 0] = density.sample(rng, 1)[0]
        x[t, 1:], n_acc = _chain(density, x[t, 0], N - 1, kernel, rng, rw_scale)
        acc += n_acc
    return Pool(x, density, kernel, acc, dims.T * (N - 1))


def conditional_generate_pool(
    path, b, theta: Theta, N: int, rng: np.random.Generator, kernel: str = "independence", rw_scale: float | None = None
) -> Pool:
    """Pool with ``x_t^{b_t}`` pinned to ``path[t]``; slots above the pivot are filled upward and below it downward.

    The pool kernels are reversible, so the downward fill uses the kernel itself.
    """
    _check_kernel(kernel)
    path = np.atleast_2d(np.asarray(path, dtype=float))
    T, d = path.shape
    b = np.asarray(b, dtype=np.intp)
    if np.any(b < 0) or np.any(b >= N):
        raise ValueError("pinned indices out of range")
    density = PoolDensity.stationary(theta, d)
    x = np.empty((T, N, d))
    acc = 0
    for t in range(T):
        bt = int(b[t])
        x[t, bt] = path[t]
        up, n_up = _chain(density, path[t], N - 1 - bt, kernel, rng, rw_scale)
        down, n_down = _chain(density, path[t], bt, kernel, rng, rw_scale)
        x[t, bt + 1:] = up
        x[t, :bt] = down[::-1]
        acc += n_up + n_down
    return Pool(x, density, kernel, acc, T * (N - 1))


@dataclass
class HmmFilterCache:
    """Normalised forward messages and per-step log normalisers.

    ``log_alpha[t]`` sums to one in probability space, ``log_norm.sum()`` is
    ``log p~(y_{1:T})`` and ``log_trans[t-1][i, j] = log f(x_t^j | x_{t-1}^i)``.
    """

    log_alpha: np.ndarray  # (T, N)
    log_norm: np.ndarray  # (T,)
    log_trans: list

    @property
    def loglik(self) -> float:
        return float(np.sum(self.log_norm))


def _lse0(m):
    """log-sum-exp over axis 0."""
    mx = m.max(axis=0)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    return safe + np.log(np.exp(m - safe).sum(axis=0))


def _normalise(v, t):
    mx = v.max()
    if not math.isfinite(mx):
        raise DegenerateWeightsError("all-zero emission row", t=t)
    c = mx + math.log(np.exp(v - mx).sum())
    return v - c, c


def hmm_forward(pool: Pool, theta: Theta, y) -> HmmFilterCache:
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T, N, d = pool.x.shape
    model = LinearGaussianSSM(theta, ModelDims(d=d, T=T))
    log_n = math.log(N)
    log_alpha = np.empty((T, N))
    log_norm = np.empty(T)
    trans = []
    x = pool.x
    emis = model.log_g(y[:, None, :], x) - pool.density.logpdf(x)
    log_alpha[0], log_norm[0] = _normalise(model.log_mu(x[0]) + emis[0] - log_n, 0)
    for t in range(1, T):
        fm = model.f_mean(x[t - 1])
        lf = model.log_f_from_mean(x[t][None, :, :], fm[:, None, :])  # (i, j)
        trans.append(lf)
        log_alpha[t], log_norm[t] = _normalise(emis[t] + _lse0(log_alpha[t - 1][:, None] + lf) - log_n, t)
    return HmmFilterCache(log_alpha, log_norm, trans)


def sample_path(cache: HmmFilterCache, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Backward simulation of ``b_{1:T}`` (0-based) from the forward messages.

    Returns shape ``(T,)``, or ``(size, T)`` when ``size`` is given.
    """
    T = cache.log_alpha.shape[0]
    if size is None:
        b = np.empty(T, dtype=np.intp)
        b[-1] = categorical(np.exp(cache.log_alpha[-1]), rng)
        for t in range(T - 2, -1, -1):
            lw = cache.log_alpha[t] + cache.log_trans[t][:, b[t + 1]]
            p = np.exp(lw - lw.max())
            b[t] = categorical(p / p.sum(), rng)
        return b
    N = cache.log_alpha.shape[1]
    b = np.empty((size, T), dtype=np.intp)
    b[:, -1] = multinomial_resample(np.exp(cache.log_alpha[-1]), size, rng)
    for t in range(T - 2, -1, -1):
        # row j: weights over i given b_{t+1} = j
        lw = cache.log_alpha[t][None, :] + cache.log_trans[t].T
        cdf = np.cumsum(np.exp(lw - lw.max(axis=1, keepdims=True)), axis=1)
        rows = cdf[b[:, t + 1]]
        u = rng.random(size) * rows[:, -1]
        b[:, t] = np.minimum((rows <= u[:, None]).sum(axis=1), N - 1)
    return b


def path_log_density(pool: Pool, theta: Theta, y, b) -> float:
    """``log p~(x^{b_{1:T}}, y_{1:T})`` for one index path (used for enumeration checks)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T, _, d = pool.x.shape
    model = LinearGaussianSSM(theta, ModelDims(d=d, T=T))
    xb = pool.x[np.arange(T), np.asarray(b)]
    return model.log_joint(xb, y) - float(np.sum(pool.density.logpdf(xb)))


@dataclass
class EhmmResult:
    loglik: float
    pool: Pool
    cache: HmmFilterCache

    def sample_path(self, rng) -> np.ndarray:
        b = sample_path(self.cache, rng)
        return self.pool.x[np.arange(self.pool.T), b]


def ehmm_loglik(
    theta: Theta, dims: ModelDims, y, N: int, rng: np.random.Generator, kernel: str = "independence", rw_scale: float | None = None
) -> EhmmResult:
    pool = generate_pool(theta, dims, N, rng, kernel, rw_scale)
    cache = hmm_forward(pool, theta, y)
    return EhmmResult(cache.loglik, pool, cache)


def ehmm_gibbs_step(
    path, theta: Theta, dims: ModelDims, y, N: int, rng: np.random.Generator, kernel: str = "independence", rw_scale: float | None = None
) -> np.ndarray:
    """Uniform pivots, conditional pools, then an exact index path from the embedded HMM."""
    path = np.atleast_2d(np.asarray(path, dtype=float))
    b = rng.integers(0, N, size=dims.T)
    pool = conditional_generate_pool(path, b, theta, N, rng, kernel, rw_scale)
    cache = hmm_forward(pool, theta, y)
    b_new = sample_path(cache, rng)
    return pool.x[np.arange(dims.T), b_new]


# -- reversal identity on a finite state space ------------------------------------


def reversal_kernel(log_rho, log_R):
    """``R~[x, x'] = rho(x') R[x', x] / rho(x)`` in log space."""
    log_rho = np.asarray(log_rho, dtype=float)
    return log_rho[None, :] + np.asarray(log_R).T - log_rho[:, None]


def conditional_pool_log_density(states, pivot: int, log_rho, log_R, log_R_rev=None) -> float:
    """Log-density of a discrete pool generated around slot ``pivot``.

    ``rho(s_pivot) * prod_{i > pivot} R(s_i | s_{i-1}) * prod_{i < pivot} R~(s_i | s_{i+1})``.
    For a ``rho``-invariant ``R`` this does not depend on ``pivot``.
    """
    s = np.asarray(states, dtype=np.intp)
    if log_R_rev is None:
        log_R_rev = reversal_kernel(log_rho, log_R)
    lp = float(log_rho[s[pivot]])
    for i in range(pivot + 1, len(s)):
        lp += float(log_R[s[i - 1], s[i]])
    for i in range(pivot - 1, -1, -1):
        lp += float(log_R_rev[s[i + 1], s[i]])
    return lp


def discrete_mh_kernel(log_rho, max_jump: int = 1):
    """Reversible Metropolis kernel on ``{0..S-1}`` with uniform jumps of size ``<= max_jump``.

    Returns the log transition matrix; proposals off the grid are rejected.
    """
    log_rho = np.asarray(log_rho, dtype=float)
    S = len(log_rho)
    R = np.zeros((S, S))
    q = 1.0 / (2 * max_jump)
    for i in range(S):
        for k in range(-max_jump, max_jump + 1):
            j = i + k
            if k == 0 or not 0 <= j < S:
                continue
            R[i, j] = q * min(1.0, math.exp(log_rho[j] - log_rho[i]))
        R[i, i] = 1.0 - R[i].sum()
    with np.errstate(divide="ignore"):
        return np.log(R)


def discretize_stationary(theta: Theta, n_grid: int = 41, width: float = 4.0):
    """Grid over ``+-width`` stationary standard deviations (d=1) with normalised log-masses."""
    sd = math.sqrt(float(stationary_moments(theta, 1).cov[0, 0]))
    grid = np.linspace(-width * sd, width * sd, n_grid)
    lr = -0.5 * (grid / sd) ** 2
    lr -= np.log(np.exp(lr).sum())
    return grid, lr
