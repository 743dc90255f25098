"""The d-dimensional linear-Gaussian state-space model.

    x_1 ~ N(m0, C0),  x_t | x_{t-1} ~ N(A x_{t-1}, sigma^2 I),  y_t | x_t ~ N(x_t, tau^2 I)

with ``A`` symmetric tridiagonal (``a0`` on the diagonal, ``a1`` on both
off-diagonals).  Besides the density evaluators this module holds the
closed-form quantities the samplers rely on (locally optimal proposal,
predictive likelihood, stationary law) and the exact Kalman oracle.

Arrays of states always carry the state dimension last, so ``(N, d)`` clouds
and ``(T, d)`` paths go through the same functions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .resampling import RngStream

LOG_2PI = math.log(2.0 * math.pi)

# inverse-gamma prior on sigma and tau: density ∝ x^{-(shape+1)} exp(-scale/x)
IG_SHAPE = 1.0
IG_SCALE = 0.5

THETA_NAMES = ("a0", "a1", "sigma", "tau")


class NoStationaryDistributionError(ValueError):
    pass


@dataclass(frozen=True)
class Theta:
    a0: float
    a1: float
    sigma: float
    tau: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.tau > 0):
            raise ValueError(f"sigma and tau must be positive, got {self.sigma}, {self.tau}")

    @classmethod
    def true_values(cls) -> "Theta":
        return cls(0.5, 0.2, 1.0, 1.0)

    def to_array(self) -> np.ndarray:
        return np.array([self.a0, self.a1, self.sigma, self.tau])

    @classmethod
    def from_array(cls, v) -> "Theta":
        a0, a1, sigma, tau = (float(u) for u in v)
        return cls(a0, a1, sigma, tau)

    def in_support(self) -> bool:
        return -1 < self.a0 < 1 and -1 < self.a1 < 1


@dataclass(frozen=True)
class ModelDims:
    """State dimension, horizon and the (known) initial law.

    ``C0`` must be a positive multiple of the identity: every proposal used by
    the samplers is an isotropic Gaussian.
    """

    d: int
    T: int
    m0: np.ndarray = field(default=None)
    C0: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.d < 1 or self.T < 1:
            raise ValueError("d and T must be positive")
        m0 = np.zeros(self.d) if self.m0 is None else np.asarray(self.m0, dtype=float)
        C0 = np.eye(self.d) if self.C0 is None else np.asarray(self.C0, dtype=float)
        if m0.shape != (self.d,) or C0.shape != (self.d, self.d):
            raise ValueError("m0/C0 shape mismatch")
        c0 = C0[0, 0]
        if not (c0 > 0 and np.allclose(C0, c0 * np.eye(self.d), rtol=0, atol=1e-14)):
            raise ValueError("C0 must be a positive multiple of the identity")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "C0", C0)

    @property
    def c0(self) -> float:
        return float(self.C0[0, 0])


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10:
            raise ValueError("covariance not symmetric")
        if np.min(np.linalg.eigvalsh(cov)) < -1e-10:
            raise ValueError("covariance not positive semi-definite")


@dataclass
class DataSet:
    """Observations ``y`` (T, d), optionally with the latent states used to simulate them."""

    y: np.ndarray
    x_true: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x_true is not None:
            self.x_true = np.asarray(self.x_true, dtype=float)
            if self.x_true.shape != self.y.shape:
                raise ValueError("x_true and y must have the same shape")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.y.shape[1]

    def to_csv(self, path, manifest: dict | None = None) -> Path:
        """Write ``t,dim,y[,x]`` rows (1-based) plus a JSON sidecar with the seed."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "dim", "y"] + (["x"] if self.x_true is not None else []))
            for t in range(self.T):
                for k in range(self.d):
                    row = [t + 1, k + 1, repr(float(self.y[t, k]))]
                    if self.x_true is not None:
                        row.append(repr(float(self.x_true[t, k])))
                    w.writerow(row)
        meta = {"seed": self.seed, "T": self.T, "d": self.d}
        meta.update(manifest or {})
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "DataSet":
        path = Path(path)
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        T = max(int(r["t"]) for r in rows)
        d = max(int(r["dim"]) for r in rows)
        y = np.empty((T, d))
        has_x = "x" in rows[0]
        x = np.empty((T, d)) if has_x else None
        for r in rows:
            t, k = int(r["t"]) - 1, int(r["dim"]) - 1
            y[t, k] = float(r["y"])
            if has_x:
                x[t, k] = float(r["x"])
        seed = None
        side = path.with_suffix(".json")
        if side.exists():
            seed = json.loads(side.read_text()).get("seed")
        return cls(y=y, x_true=x, seed=seed)


def build_transition_matrix(a0: float, a1: float, d: int) -> np.ndarray:
    if d < 1:
        raise ValueError("d must be >= 1")
    A = a0 * np.eye(d)
    if d > 1:
        off = np.full(d - 1, a1)
        A += np.diag(off, 1) + np.diag(off, -1)
    return A


def _sqnorm(z):
    return np.einsum("...i,...i->...", z, z)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


class LinearGaussianSSM:
    """Log-density evaluators for fixed ``(theta, dims)``.

    Instances are immutable after construction and safe to share between
    threads.
    """

    def __init__(self, theta: Theta, dims: ModelDims):
        self.theta = theta
        self.dims = dims
        d = self.d = dims.d
        self.A = build_transition_matrix(theta.a0, theta.a1, d)
        self.sigma2 = theta.sigma**2
        self.tau2 = theta.tau**2
        self.m0 = dims.m0
        self.c0 = dims.c0
        self._const_mu = -0.5 * d * (LOG_2PI + math.log(self.c0))
        self._const_f = -0.5 * d * (LOG_2PI + math.log(self.sigma2))
        self._const_g = -0.5 * d * (LOG_2PI + math.log(self.tau2))
        # p(x_t | x_{t-1}, y_t) = N(opt_var * (A x_{t-1} / sigma2 + y_t / tau2), opt_var I)
        self.opt_var = self.sigma2 * self.tau2 / (self.sigma2 + self.tau2)
        # p(y_t | x_{t-1}) = N(A x_{t-1}, pred_var I)
        self.pred_var = self.sigma2 + self.tau2
        self._const_pred = -0.5 * d * (LOG_2PI + math.log(self.pred_var))
        self.init_opt_var = self.c0 * self.tau2 / (self.c0 + self.tau2)
        self.init_pred_var = self.c0 + self.tau2
        self._const_init_pred = -0.5 * d * (LOG_2PI + math.log(self.init_pred_var))

    # -- transition / observation -------------------------------------------------
    def f_mean(self, xprev):
        if self.d == 1:
            return xprev * self.theta.a0
        return xprev @ self.A  # A symmetric

    def log_mu(self, x):
        return self._const_mu - 0.5 * _sqnorm(x - self.m0) / self.c0

    def log_f_from_mean(self, x, mean):
        return self._const_f - 0.5 * _sqnorm(x - mean) / self.sigma2

    def log_f(self, x, xprev):
        return self.log_f_from_mean(x, self.f_mean(xprev))

    def log_g(self, y, x):
        return self._const_g - 0.5 * _sqnorm(y - x) / self.tau2

    def log_joint(self, x, y) -> float:
        """log p(x_{1:T}, y_{1:T}) for a single path ``x`` of shape (T, d)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _check_finite(x, y)
        lp = float(self.log_mu(x[0])) + float(np.sum(self.log_g(y, x)))
        if len(x) > 1:
            lp += float(np.sum(self.log_f(x[1:], x[:-1])))
        return lp

    # -- locally optimal proposal ---------------------------------------------------
    def opt_mean_from_fmean(self, fmean, y):
        return self.opt_var * (fmean / self.sigma2 + y / self.tau2)

    def opt_mean(self, xprev, y):
        return self.opt_mean_from_fmean(self.f_mean(xprev), y)

    def log_pred_from_fmean(self, y, fmean):
        """log p(y_t | x_{t-1}) given ``fmean = A x_{t-1}``."""
        return self._const_pred - 0.5 * _sqnorm(y - fmean) / self.pred_var

    def log_pred(self, y, xprev):
        return self.log_pred_from_fmean(y, self.f_mean(xprev))

    def init_opt_mean(self, y1):
        return self.init_opt_var * (self.m0 / self.c0 + y1 / self.tau2)

    def log_py1(self, y1) -> float:
        return float(self._const_init_pred - 0.5 * _sqnorm(y1 - self.m0) / self.init_pred_var)


def log_densities(theta: Theta, dims: ModelDims) -> LinearGaussianSSM:
    return LinearGaussianSSM(theta, dims)


@dataclass(frozen=True)
class OptimalProposal:
    """``p(x_t | x_{t-1}, y_t) = N(mean, var I)`` and ``log p(y_t | x_{t-1})``."""

    mean: np.ndarray
    var: float
    log_pred: float

    def sample(self, rng, size=None):
        shape = self.mean.shape if size is None else (size,) + self.mean.shape
        return self.mean + math.sqrt(self.var) * rng.standard_normal(shape)

    def logpdf(self, x):
        d = self.mean.shape[-1]
        return -0.5 * d * (LOG_2PI + math.log(self.var)) - 0.5 * _sqnorm(x - self.mean) / self.var


def optimal_proposal(theta: Theta, x_prev, y_t, dims: ModelDims | None = None) -> OptimalProposal:
    x_prev = np.asarray(x_prev, dtype=float)
    y_t = np.asarray(y_t, dtype=float)
    model = LinearGaussianSSM(theta, dims or ModelDims(d=x_prev.shape[-1], T=1))
    fm = model.f_mean(x_prev)
    return OptimalProposal(
        mean=model.opt_mean_from_fmean(fm, y_t),
        var=model.opt_var,
        log_pred=float(model.log_pred_from_fmean(y_t, fm)),
    )


def simulate(theta: Theta, dims: ModelDims, seed: int, stream: tuple[int, ...] = ()) -> DataSet:
    rng = RngStream(seed, stream).generator()
    model = LinearGaussianSSM(theta, dims)
    d, T = dims.d, dims.T
    x = np.empty((T, d))
    x[0] = dims.m0 + math.sqrt(dims.c0) * rng.standard_normal(d)
    for t in range(1, T):
        x[t] = model.f_mean(x[t - 1]) + theta.sigma * rng.standard_normal(d)
    y = x + theta.tau * rng.standard_normal((T, d))
    return DataSet(y=y, x_true=x, seed=seed)


# -- Kalman oracle -----------------------------------------------------------------


@dataclass
class KalmanResult:
    loglik: float
    filter_means: np.ndarray  # (T, d)   E[x_t | y_{1:t}]
    filter_covs: np.ndarray  # (T, d, d)
    smoother_means: np.ndarray  # (T, d)   E[x_t | y_{1:T}]
    smoother_covs: np.ndarray
    A: np.ndarray
    Q: np.ndarray

    def sample_paths(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Exact draws from p(x_{1:T} | y_{1:T}) by backward simulation.

        Returns ``(T, d)`` if ``n`` is None else ``(n, T, d)``.
        """
        single = n is None
        n = 1 if single else n
        T, d = self.filter_means.shape
        out = np.empty((n, T, d))
        L = np.linalg.cholesky(_sym(self.filter_covs[-1]))
        out[:, -1] = self.filter_means[-1] + rng.standard_normal((n, d)) @ L.T
        for t in range(T - 2, -1, -1):
            m, P = self.filter_means[t], self.filter_covs[t]
            S = self.A @ P @ self.A.T + self.Q
            J = linalg.solve(S, self.A @ P, assume_a="pos").T  # P A^T S^{-1}
            cov = _sym(P - J @ self.A @ P)
            mean = m + (out[:, t + 1] - m @ self.A.T) @ J.T
            L = np.linalg.cholesky(cov)
            out[:, t] = mean + rng.standard_normal((n, d)) @ L.T
        return out[0] if single else out


def kalman(theta: Theta, dims: ModelDims, y) -> KalmanResult:
    """Kalman filter, log-likelihood and RTS smoother (dense matrices throughout)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T, d = y.shape
    if d != dims.d:
        raise ValueError("observation dimension mismatch")
    A = build_transition_matrix(theta.a0, theta.a1, d)
    Q = theta.sigma**2 * np.eye(d)
    R = theta.tau**2 * np.eye(d)
    fm = np.empty((T, d))
    fc = np.empty((T, d, d))
    pm = np.empty((T, d))
    pc = np.empty((T, d, d))
    m, P = dims.m0.copy(), dims.C0.copy()
    ll = 0.0
    for t in range(T):
        if t > 0:
            m = A @ fm[t - 1]
            P = A @ fc[t - 1] @ A.T + Q
        pm[t], pc[t] = m, P
        S = P + R
        try:
            cS = linalg.cho_factor(S)
        except linalg.LinAlgError as exc:
            raise ValueError(f"innovation covariance not positive definite at t={t}") from exc
        r = y[t] - m
        sol = linalg.cho_solve(cS, r)
        logdet = 2.0 * np.sum(np.log(np.diag(cS[0])))
        ll += -0.5 * (d * LOG_2PI + logdet + r @ sol)
        K = linalg.cho_solve(cS, P).T  # P S^{-1}
        fm[t] = m + K @ r
        fc[t] = _sym(P - K @ P)
    sm = fm.copy()
    sc = fc.copy()
    for t in range(T - 2, -1, -1):
        J = linalg.solve(pc[t + 1], A @ fc[t], assume_a="pos").T
        sm[t] = fm[t] + J @ (sm[t + 1] - pm[t + 1])
        sc[t] = _sym(fc[t] + J @ (sc[t + 1] - pc[t + 1]) @ J.T)
    return KalmanResult(float(ll), fm, fc, sm, sc, A, Q)


def _sym(S):
    return 0.5 * (S + S.T)


def kalman_loglik(theta: Theta, dims: ModelDims, y) -> float:
    """Filter-only log p(y_{1:T}); exploits the scalar case for speed."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if dims.d > 1:
        return kalman(theta, dims, y).loglik
    a, q, r = theta.a0, theta.sigma**2, theta.tau**2
    m, P = float(dims.m0[0]), dims.c0
    ll = 0.0
    for t, yt in enumerate(y[:, 0]):
        if t > 0:
            m, P = a * m, a * a * P + q
        S = P + r
        e = yt - m
        ll -= 0.5 * (LOG_2PI + math.log(S) + e * e / S)
        K = P / S
        m, P = m + K * e, P - K * P
    return ll


def sample_smoothed_path(theta: Theta, dims: ModelDims, y, rng: np.random.Generator) -> np.ndarray:
    """One exact draw from p(x_{1:T} | y_{1:T}); scalar recursions when d=1, else ``kalman().sample_paths``.

    Both branches consume the same normal draws in the same order.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if dims.d > 1:
        return kalman(theta, dims, y).sample_paths(rng)
    a, q, r = theta.a0, theta.sigma**2, theta.tau**2
    T = y.shape[0]
    fm = np.empty(T)
    fv = np.empty(T)
    m, P = float(dims.m0[0]), dims.c0
    for t in range(T):
        if t > 0:
            m, P = a * fm[t - 1], a * a * fv[t - 1] + q
        K = P / (P + r)
        fm[t], fv[t] = m + K * (y[t, 0] - m), P - K * P
    out = np.empty((T, 1))
    out[-1, 0] = fm[-1] + math.sqrt(fv[-1]) * rng.standard_normal((1, 1))[0, 0]
    for t in range(T - 2, -1, -1):
        S = a * a * fv[t] + q
        J = fv[t] * a / S
        out[t, 0] = fm[t] + J * (out[t + 1, 0] - a * fm[t]) + math.sqrt(fv[t] - J * a * fv[t]) * rng.standard_normal((1, 1))[0, 0]
    return out


def stationary_moments(theta: Theta, d: int) -> GaussianMoments:
    """Mean and covariance of the stationary law of the latent chain.

    ``A`` is symmetric, so ``S = A S A^T + sigma^2 I`` has the closed form
    ``sigma^2 V diag(1 / (1 - lambda^2)) V^T``.
    """
    A = build_transition_matrix(theta.a0, theta.a1, d)
    lam, V = np.linalg.eigh(A)
    radius = float(np.max(np.abs(lam)))
    if radius >= 1.0:
        raise NoStationaryDistributionError(f"no stationary distribution (spectral radius {radius:.4g} >= 1)")
    S = (V * (theta.sigma**2 / (1.0 - lam**2))) @ V.T
    return GaussianMoments(np.zeros(d), _sym(S))


def log_prior(theta: Theta) -> float:
    if not theta.in_support():
        return -math.inf
    lp = 2 * math.log(0.5)
    for s in (theta.sigma, theta.tau):
        lp += IG_SHAPE * math.log(IG_SCALE) - gammaln(IG_SHAPE) - (IG_SHAPE + 1) * math.log(s) - IG_SCALE / s
    return float(lp)


def log_prior_array(v) -> float:
    """``log_prior`` on a raw (a0, a1, sigma, tau) vector; -inf for non-positive scales."""
    a0, a1, s, t = v
    if s <= 0 or t <= 0:
        return -math.inf
    return log_prior(Theta(a0, a1, s, t))
