"""Effective sample size, autocorrelation, kernel density estimates and MCMC standard errors."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .resampling import normalize


def ess(weights) -> float:
    """``1 / sum w_i^2`` for normalised weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def ess_from_log(logw) -> float:
    return ess(normalize(logw)[0])


def acf(series, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation ``r_0..r_max_lag`` around the overall mean."""
    v = np.asarray(series, dtype=float)
    M = v.shape[0]
    if M < 2:
        raise ValueError("need at least two values")
    if not 0 <= max_lag < M:
        raise ValueError("max_lag must satisfy 0 <= max_lag < len(series)")
    c = v - v.mean()
    denom = float(np.dot(c, c))
    if denom == 0.0:
        raise ValueError("zero variance")
    n = 1 << (2 * M - 1).bit_length()
    f = np.fft.rfft(c, n)
    r = np.fft.irfft(f * np.conj(f), n)[: max_lag + 1]
    out = r / denom
    out[0] = 1.0
    return out


def mean_acf(runs, max_lag: int) -> np.ndarray:
    """ACF averaged over independent runs."""
    return np.mean([acf(r, max_lag) for r in runs], axis=0)


def silverman_bandwidth(samples) -> float:
    s = np.asarray(samples, dtype=float)
    return 1.06 * float(np.std(s, ddof=1)) * s.shape[0] ** (-0.2)


def kde(samples, grid, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian kernel density estimate evaluated on ``grid``."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.shape[0] < 2:
        raise ValueError("need at least two samples")
    h = silverman_bandwidth(s) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    g = np.asarray(grid, dtype=float)
    out = np.zeros_like(g)
    # chunk over samples to bound memory
    for start in range(0, s.shape[0], 4096):
        u = (g[:, None] - s[None, start:start + 4096]) / h
        out += np.exp(-0.5 * u * u).sum(axis=1)
    return out / (s.shape[0] * h * math.sqrt(2 * math.pi))


def batch_means_se(series, n_batches: int = 50) -> float:
    """Standard error of the mean from non-overlapping batch means."""
    v = np.asarray(series, dtype=float)
    size = v.shape[0] // n_batches
    if size < 1:
        raise ValueError("series shorter than the number of batches")
    means = v[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(n_batches))


def _write(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, (int, np.integer)) else repr(float(r)) for r in row])
    return path


def write_acf(path, values) -> Path:
    return _write(path, ["lag", "acf"], ((k, v) for k, v in enumerate(values)))


def write_kde(path, grid, density) -> Path:
    return _write(path, ["grid", "density"], zip(grid, density))


def write_ess(path, values) -> Path:
    return _write(path, ["t", "ess"], ((t + 1, v) for t, v in enumerate(values)))
