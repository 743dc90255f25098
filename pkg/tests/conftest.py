import numpy as np
import pytest

from pmcmc.model import ModelDims, Theta, kalman_loglik, simulate


class Problem:
    """Simulated data set with its exact log-likelihood."""

    def __init__(self, d=1, T=5, seed=11, theta=None):
        self.theta = theta or Theta.true_values()
        self.dims = ModelDims(d=d, T=T)
        self.data = simulate(self.theta, self.dims, seed)
        self.y = self.data.y
        self.loglik = kalman_loglik(self.theta, self.dims, self.y)


@pytest.fixture
def scalar_problem():
    return Problem(d=1, T=5)


@pytest.fixture
def vector_problem():
    return Problem(d=3, T=4, seed=4)


@pytest.fixture
def make_problem():
    return Problem


def ratio_stats(logliks, exact):
    """Mean and standard error of ``exp(loglik - exact)``."""
    r = np.exp(np.asarray(logliks) - exact)
    return r.mean(), r.std(ddof=1) / np.sqrt(len(r))


# -- acceptance report ------------------------------------------------------------

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Call with ``(label, SuiteResult-like)`` to add a PASS/FAIL line to the terminal summary."""

    def record(label, passed, summary, details=()):
        _CRITERIA[label] = (passed, summary, list(details))
        print(f"{label}: {'PASS' if passed else 'FAIL'} {summary}")
        for line in details:
            print(f"    {line}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA):
        passed, summary, details = _CRITERIA[label]
        terminalreporter.write_line(f"{label}: {'PASS' if passed else 'FAIL'} {summary}")
        for line in details:
            terminalreporter.write_line(f"    {line}")
