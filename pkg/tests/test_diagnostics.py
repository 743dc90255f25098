import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from pmcmc.diagnostics import acf, batch_means_se, ess, ess_from_log, kde, mean_acf, write_acf, write_ess, write_kde
from pmcmc.resampling import make_rng


class TestEss:
    def test_uniform(self):
        assert ess(np.full(100, 0.01)) == pytest.approx(100)

    def test_point_mass(self):
        assert ess(np.array([0, 1.0, 0])) == 1

    def test_example(self):
        assert ess(np.array([0.5, 0.25, 0.25])) == pytest.approx(8 / 3)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=50))
    def test_bounds(self, lw):
        e = ess_from_log(np.array(lw))
        assert 1 - 1e-9 <= e <= len(lw) + 1e-9


class TestAcf:
    def test_lag_zero(self):
        assert acf(make_rng(0).normal(size=50), 5)[0] == 1.0

    def test_alternating(self):
        v = np.tile([1.0, -1.0], 500)
        assert acf(v, 1)[1] == pytest.approx(-1.0, abs=2 / len(v))

    def test_white_noise(self):
        assert abs(acf(make_rng(1).normal(size=100_000), 3)[1]) < 0.02

    def test_matches_direct_sum(self):
        v = make_rng(2).normal(size=37)
        c = v - v.mean()
        direct = [np.dot(c[: len(v) - k], c[k:]) / np.dot(c, c) for k in range(10)]
        np.testing.assert_allclose(acf(v, 9), direct, atol=1e-12)

    def test_ar1(self):
        rng = make_rng(3)
        v = np.empty(200_000)
        v[0] = 0
        e = rng.normal(size=len(v))
        for i in range(1, len(v)):
            v[i] = 0.8 * v[i - 1] + e[i]
        np.testing.assert_allclose(acf(v, 3), 0.8 ** np.arange(4), atol=0.02)

    def test_errors(self):
        with pytest.raises(ValueError, match="zero variance"):
            acf(np.ones(10), 2)
        with pytest.raises(ValueError):
            acf(np.arange(5.0), 5)
        with pytest.raises(ValueError):
            acf(np.array([1.0]), 0)

    def test_mean_over_runs(self):
        runs = [make_rng(k).normal(size=200) for k in range(4)]
        np.testing.assert_allclose(mean_acf(runs, 3), np.mean([acf(r, 3) for r in runs], axis=0))


class TestKde:
    def test_constant_samples_with_forced_bandwidth(self):
        grid = np.linspace(-2, 4, 61)
        np.testing.assert_allclose(kde(np.full(5, 1.0), grid, bandwidth=0.5), stats.norm(1.0, 0.5).pdf(grid), rtol=1e-12)

    def test_standard_normal(self):
        s = make_rng(4).normal(size=100_000)
        grid = np.linspace(-4, 4, 201)
        d = kde(s, grid)
        assert np.max(np.abs(d - stats.norm.pdf(grid))) < 0.01
        assert 0.99 <= np.trapezoid(d, grid) <= 1.01

    def test_errors(self):
        with pytest.raises(ValueError):
            kde(np.array([1.0]), np.zeros(3))
        with pytest.raises(ValueError):
            kde(np.ones(4), np.zeros(3))


def test_batch_means_iid():
    v = make_rng(5).normal(size=100_000)
    assert batch_means_se(v) == pytest.approx(1 / np.sqrt(len(v)), rel=0.3)
    with pytest.raises(ValueError):
        batch_means_se(np.ones(10), 50)


def test_writers(tmp_path):
    assert write_acf(tmp_path / "a.csv", [1.0, 0.5]).read_text().splitlines() == ["lag,acf", "0,1.0", "1,0.5"]
    assert write_kde(tmp_path / "k.csv", [0.0], [0.4]).read_text().splitlines() == ["grid,density", "0.0,0.4"]
    assert write_ess(tmp_path / "e.csv", [3.0, 2.5]).read_text().splitlines() == ["t,ess", "1,3.0", "2,2.5"]
