import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import ratio_stats
from pmcmc.ehmm import (
    PoolDensity,
    conditional_generate_pool,
    conditional_pool_log_density,
    discrete_mh_kernel,
    discretize_stationary,
    ehmm_gibbs_step,
    ehmm_loglik,
    generate_pool,
    hmm_forward,
    path_log_density,
    reversal_kernel,
    sample_path,
)
from pmcmc.model import ModelDims, NoStationaryDistributionError, Theta, kalman, simulate
from pmcmc.resampling import make_rng


def enumerate_paths(pool, theta, y):
    """All N^T index paths with their log-densities."""
    T, N, _ = pool.x.shape
    paths = list(itertools.product(range(N), repeat=T))
    lp = np.array([path_log_density(pool, theta, y, b) for b in paths])
    return paths, lp


class TestForward:
    @pytest.mark.parametrize("d,kernel", [(1, "independence"), (1, "rw"), (2, "rw")])
    def test_matches_enumeration(self, d, kernel):
        theta = Theta.true_values()
        dims = ModelDims(d=d, T=3)
        y = simulate(theta, dims, 2).y
        pool = generate_pool(theta, dims, 3, make_rng(4), kernel)
        _, lp = enumerate_paths(pool, theta, y)
        exact = np.logaddexp.reduce(lp) - dims.T * math.log(3)
        got = hmm_forward(pool, theta, y).loglik
        assert abs(got - exact) < 1e-10 * abs(exact)

    def test_messages_normalised(self):
        theta = Theta.true_values()
        dims = ModelDims(d=2, T=4)
        y = simulate(theta, dims, 0).y
        cache = hmm_forward(generate_pool(theta, dims, 6, make_rng(0)), theta, y)
        np.testing.assert_allclose(np.exp(cache.log_alpha).sum(axis=1), 1.0, rtol=1e-12)

    def test_backward_law_matches_enumeration(self):
        theta = Theta.true_values()
        dims = ModelDims(d=1, T=3)
        y = simulate(theta, dims, 5).y
        pool = generate_pool(theta, dims, 2, make_rng(1))
        paths, lp = enumerate_paths(pool, theta, y)
        exact = np.exp(lp - np.logaddexp.reduce(lp))
        cache = hmm_forward(pool, theta, y)
        rng = make_rng(2)
        n = 100_000
        counts = {}
        for _ in range(n):
            b = tuple(int(v) for v in sample_path(cache, rng))
            counts[b] = counts.get(b, 0) + 1
        emp = np.array([counts.get(b, 0) / n for b in paths])
        assert np.max(np.abs(emp - exact)) < 0.006


class TestPools:
    def test_density_logpdf(self):
        dens = PoolDensity(np.array([0.5, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
        x = np.array([[0.1, 0.2], [1.0, -3.0]])
        np.testing.assert_allclose(dens.logpdf(x), stats.multivariate_normal(dens.mean, dens.cov).logpdf(x), rtol=1e-12)

    def test_non_stationary_rejected(self):
        with pytest.raises(NoStationaryDistributionError):
            generate_pool(Theta(0.5, 0.4, 1.0, 1.0), ModelDims(d=3, T=2), 4, make_rng(0))

    def test_unknown_kernel(self):
        with pytest.raises(ValueError, match="pool kernel"):
            generate_pool(Theta.true_values(), ModelDims(d=1, T=2), 4, make_rng(0), "gibbs")

    @given(st.integers(0, 4), st.sampled_from(["independence", "rw"]), st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_conditional_pool_pins(self, pivot, kernel, seed):
        theta = Theta.true_values()
        path = np.array([[0.3, -0.2], [1.1, 0.0], [-0.4, 0.9]])
        b = np.array([pivot, 0, 4])
        pool = conditional_generate_pool(path, b, theta, 5, make_rng(seed), kernel)
        for t in range(3):
            np.testing.assert_array_equal(pool.x[t, b[t]], path[t])

    def test_rw_pool_moments(self):
        theta = Theta(0.8, 0.0, 1.0, 1.0)
        pool = generate_pool(theta, ModelDims(d=1, T=1), 80_000, make_rng(3), "rw")
        v = pool.x[0, :, 0]
        assert abs(v.mean()) < 0.1
        assert v.var() == pytest.approx(1 / (1 - 0.64), rel=0.1)
        assert 0 < pool.accepted < pool.proposed


class TestUnbiasedness:
    @pytest.mark.parametrize("kernel", ["independence", "rw"])
    def test_ratio_mean(self, kernel, scalar_problem):
        p = scalar_problem
        ll = [ehmm_loglik(p.theta, p.dims, p.y, 10, make_rng(5, r), kernel).loglik for r in range(2000)]
        mean, se = ratio_stats(ll, p.loglik)
        assert abs(mean - 1) < 4 * se


class TestGibbs:
    @pytest.mark.parametrize("kernel", ["independence", "rw"])
    def test_preserves_smoother_moments(self, kernel):
        theta = Theta.true_values()
        dims = ModelDims(d=1, T=3)
        y = simulate(theta, dims, 1).y
        k = kalman(theta, dims, y)
        starts = k.sample_paths(make_rng(0), 3000)
        out = np.array([ehmm_gibbs_step(s, theta, dims, y, 4, make_rng(1, r), kernel)[:, 0] for r, s in enumerate(starts)])
        mean, var = k.smoother_means[:, 0], k.smoother_covs[:, 0, 0]
        se = np.sqrt(var / len(out))
        assert np.all(np.abs(out.mean(axis=0) - mean) < 4 * se)
        se_var = var * math.sqrt(2 / (len(out) - 1))
        assert np.all(np.abs(out.var(axis=0, ddof=1) - var) < 4 * se_var)

    def test_single_state_pool_is_identity(self):
        theta = Theta.true_values()
        dims = ModelDims(d=2, T=3)
        y = simulate(theta, dims, 0).y
        path = simulate(theta, dims, 1).x_true
        np.testing.assert_array_equal(ehmm_gibbs_step(path, theta, dims, y, 1, make_rng(0)), path)


class TestReversal:
    def setup_method(self):
        self.grid, self.log_rho = discretize_stationary(Theta.true_values(), n_grid=21)

    def test_grid_mass(self):
        assert np.exp(self.log_rho).sum() == pytest.approx(1.0)
        assert len(self.grid) == 21

    @pytest.mark.parametrize("jump", [1, 3])
    def test_kernel_is_reversible_and_invariant(self, jump):
        R = np.exp(discrete_mh_kernel(self.log_rho, jump))
        rho = np.exp(self.log_rho)
        np.testing.assert_allclose(R.sum(axis=1), 1.0, rtol=1e-12)
        np.testing.assert_allclose(rho @ R, rho, atol=1e-14)
        np.testing.assert_allclose(rho[:, None] * R, (rho[:, None] * R).T, atol=1e-15)

    @given(st.integers(0, 20), st.lists(st.integers(-2, 2), min_size=1, max_size=7))
    @settings(max_examples=50, deadline=None)
    def test_pivot_invariance_reversible(self, start, jumps):
        states = np.clip(start + np.cumsum([0] + jumps), 0, 20)
        log_R = discrete_mh_kernel(self.log_rho, 2)
        vals = [conditional_pool_log_density(states, k, self.log_rho, log_R, log_R) for k in range(len(states))]
        assert np.all(np.isfinite(vals))
        assert max(vals) - min(vals) < 1e-10

    def test_pivot_invariance_non_reversible_with_true_reversal(self):
        rho = np.exp(self.log_rho)
        R1, R2 = np.exp(discrete_mh_kernel(self.log_rho, 1)), np.exp(discrete_mh_kernel(self.log_rho, 3))
        R = R1 @ R2  # rho-invariant, not reversible
        assert not np.allclose(rho[:, None] * R, (rho[:, None] * R).T)
        with np.errstate(divide="ignore"):
            log_R = np.log(R)
        states = [3, 4, 6, 5, 8, 9]
        vals = [conditional_pool_log_density(states, k, self.log_rho, log_R) for k in range(len(states))]
        assert max(vals) - min(vals) < 1e-10
        naive = [conditional_pool_log_density(states, k, self.log_rho, log_R, log_R) for k in range(len(states))]
        assert max(naive) - min(naive) > 1e-6

    def test_reversal_of_reversible_is_itself(self):
        log_R = discrete_mh_kernel(self.log_rho, 1)
        R, Rt = np.exp(log_R), np.exp(reversal_kernel(self.log_rho, log_R))
        np.testing.assert_allclose(R, Rt, atol=1e-14)
