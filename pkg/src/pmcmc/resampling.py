"""Random streams, log-weight arithmetic and multinomial resampling.

All particle indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateWeightsError(ValueError):
    """Raised when every log-weight is -inf (or NaN).

    ``t`` carries the (0-based) time step when raised from inside a filter.
    """

    def __init__(self, message: str = "degenerate weights", t: int | None = None):
        if t is not None:
            message = f"{message} at t={t}"
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class RngStream:
    """A reproducible, splittable random stream.

    Streams with the same ``(seed, key)`` produce identical draws; distinct
    keys give statistically independent streams (``numpy.random.SeedSequence``
    spawn keys).
    """

    seed: int
    key: tuple[int, ...] = ()

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.default_rng(ss)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Shorthand for ``RngStream(seed, stream).generator()``."""
    return RngStream(seed, tuple(stream)).generator()


def normalize(logw) -> tuple[np.ndarray, float]:
    """Return normalised probabilities and the log-sum-exp of ``logw``."""
    logw = np.asarray(logw, dtype=float)
    if logw.size == 0:
        raise DegenerateWeightsError()
    m = logw.max()
    # NaN propagates through max; +inf and all -inf are both unusable
    if not math.isfinite(m):
        raise DegenerateWeightsError()
    p = np.exp(logw - m)
    s = p.sum()
    p /= s
    return p, float(m + math.log(s))


def categorical(p, rng: np.random.Generator) -> int:
    """Draw one index by inverse CDF, scanning indices in ascending order."""
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)


def multinomial_resample(p, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. ancestor indices from ``p``."""
    cdf = np.cumsum(p)
    u = rng.random(n) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)

