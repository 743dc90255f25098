import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ratio_stats
from pmcmc.diagnostics import batch_means_se
from pmcmc.filters import apf, bootstrap_pf, faapf
from pmcmc.mcmc_filters import (
    KernelSpec,
    MixtureTarget,
    MoveStats,
    draw_proposals,
    fill_cloud,
    mcmc_apf,
    mcmc_faapf,
    mcmc_pf,
    mh_move,
    rho_apf,
    rho_bootstrap,
    rho_fa,
    run_chain,
)
from pmcmc.model import LinearGaussianSSM, ModelDims, Theta, optimal_proposal, simulate
from pmcmc.proposals import TunedFamily
from pmcmc.resampling import make_rng, normalize

PAIRS = {
    "pf": (bootstrap_pf, mcmc_pf),
    "fa-apf": (faapf, mcmc_faapf),
    "apf": (apf, mcmc_apf),
}


def random_target(seed, K=4, d=2):
    rng = make_rng(seed, 99)
    p = rng.dirichlet(np.ones(K))
    means = rng.normal(0, 2, (K, d))
    return MixtureTarget(p, means, 0.7, means + rng.normal(0, 0.5, (K, d)), 1.3)


def mixture_moments(target):
    mean = target.p @ target.means
    second = target.p @ (target.means**2) + target.var
    return mean, second - mean**2


class TestKernelSpec:
    def test_defaults(self):
        s = KernelSpec()
        assert s.rw_step(4) == pytest.approx(0.5)
        assert s.ar_eps(4) == pytest.approx(0.5)

    @pytest.mark.parametrize(
        "kw", [dict(proposal="hmc"), dict(sweeps=0), dict(rw_scale=-1.0), dict(eps=0.0), dict(eps=1.5), dict(reversible=False)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            KernelSpec(**kw)


class TestReferenceAgreement:
    @given(st.integers(0, 10_000), st.sampled_from(["rw", "ar"]), st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_compiled_move_matches_full_ratio(self, seed, proposal, d):
        target = random_target(seed, d=d)
        spec = KernelSpec(proposal, rw_scale=0.8 if proposal == "rw" else None, eps=0.6 if proposal == "ar" else None)
        x, a = target.means[1] + 0.3, 1
        for k in range(20):
            r1, r2 = make_rng(seed, k), make_rng(seed, k)
            xr, ar_, acc, _ = mh_move(target, x, a, spec, r1)
            a_prop, z = draw_proposals(target, 1, r2)
            xs, as_, n_acc = run_chain(target, x, a, a_prop, z, 1, spec, r2)
            np.testing.assert_allclose(xs[0], xr, rtol=1e-12, atol=1e-12)
            assert as_[0] == ar_ and n_acc == int(acc)
            x, a = xr, ar_

    def test_independence_always_accepts(self):
        target = random_target(3)
        x, a = target.means[0], 0
        for k in range(50):
            x, a, acc, log_alpha = mh_move(target, x, a, KernelSpec("independence"), make_rng(1, k))
            assert acc and log_alpha == pytest.approx(0.0, abs=1e-10)


class TestInvariance:
    @pytest.mark.parametrize("proposal", ["rw", "ar", "independence"])
    @pytest.mark.parametrize("sweeps", [1, 3])
    def test_cloud_moments(self, proposal, sweeps):
        target = random_target(7, K=3, d=1)
        x, a, _ = fill_cloud(target, 60_000, KernelSpec(proposal, sweeps=sweeps), make_rng(5))
        mean, var = mixture_moments(target)
        se = batch_means_se(x[:, 0])
        assert abs(x[:, 0].mean() - mean[0]) < 4 * se
        se2 = batch_means_se((x[:, 0] - mean[0]) ** 2)
        assert abs(np.mean((x[:, 0] - mean[0]) ** 2) - var[0]) < 4 * se2
        counts = np.bincount(a, minlength=3) / len(a)
        assert np.all(np.abs(counts - target.p) < 0.03)

    def test_acceptance_counts(self):
        target = random_target(1)
        _, _, n_ind = fill_cloud(target, 100, KernelSpec("independence"), make_rng(0))
        _, _, n_rw = fill_cloud(target, 100, KernelSpec("rw"), make_rng(0))
        assert n_ind == 99
        assert 0 < n_rw < 99


class TestTargets:
    def test_bootstrap_target_components(self):
        theta = Theta.true_values()
        x_prev = np.array([[0.0, 1.0], [2.0, -1.0]])
        logw = np.log([0.25, 0.75])
        t = rho_bootstrap(theta, x_prev, logw)
        model = LinearGaussianSSM(theta, ModelDims(d=2, T=2))
        np.testing.assert_allclose(t.p, [0.25, 0.75])
        np.testing.assert_allclose(t.means, model.f_mean(x_prev))
        assert t.var == pytest.approx(theta.sigma**2)

    def test_initial_targets(self):
        theta = Theta.true_values()
        t = rho_bootstrap(theta, dims=ModelDims(d=2, T=2))
        assert t.K == 1 and t.var == pytest.approx(1.0)
        f = rho_fa(theta, None, np.array([0.3, -0.2]))
        assert f.K == 1 and f.var < 1.0

    def test_fully_adapted_target(self):
        theta = Theta(0.6, 0.1, 0.8, 1.2)
        x_prev = np.array([[0.5, 0.0], [-1.0, 2.0], [0.2, 0.2]])
        y_t = np.array([1.0, -0.5])
        t = rho_fa(theta, x_prev, y_t)
        model = LinearGaussianSSM(theta, ModelDims(d=2, T=2))
        w, _ = normalize(model.log_pred(y_t, x_prev))
        np.testing.assert_allclose(t.p, w, rtol=1e-12)
        for i in range(3):
            op = optimal_proposal(theta, x_prev[i], y_t)
            np.testing.assert_allclose(t.means[i], op.mean, rtol=1e-12)

    def test_general_target(self):
        theta = Theta.true_values()
        dims = ModelDims(d=1, T=3)
        y = simulate(theta, dims, 0).y
        fam = TunedFamily(LinearGaussianSSM(theta, dims), y)
        x_prev = np.array([[0.1], [0.4]])
        t = rho_apf(fam, 1, x_prev, np.log([0.5, 0.5]))
        np.testing.assert_allclose(t.means, fam.mean(1, fam.model.f_mean(x_prev)))
        assert t.var == pytest.approx(fam.var(1))


class TestFilters:
    @pytest.mark.parametrize("name", PAIRS)
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=15, deadline=None)
    def test_independence_reduces_to_iid(self, name, seed):
        theta = Theta.true_values()
        dims = ModelDims(d=2, T=4)
        y = simulate(theta, dims, seed).y
        iid, mc = PAIRS[name]
        a = iid(theta, dims, y, 9, make_rng(seed))
        b, stats = mc(theta, dims, y, 9, KernelSpec("independence"), make_rng(seed))
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.ancestors, b.ancestors)
        np.testing.assert_array_equal(a.logw, b.logw)
        assert a.loglik == b.loglik
        np.testing.assert_array_equal(stats.rates, 1.0)

    @pytest.mark.parametrize("name", PAIRS)
    @pytest.mark.parametrize("proposal", ["rw", "ar"])
    def test_unbiased(self, name, proposal, scalar_problem):
        p = scalar_problem
        mc = PAIRS[name][1]
        spec = KernelSpec(proposal)
        ll = [mc(p.theta, p.dims, p.y, 20, spec, make_rng(31, r))[0].loglik for r in range(1500)]
        mean, se = ratio_stats(ll, p.loglik)
        assert abs(mean - 1) < 4 * se

    def test_move_stats(self, tmp_path, scalar_problem):
        p = scalar_problem
        _, stats = mcmc_faapf(p.theta, p.dims, p.y, 10, KernelSpec("rw", sweeps=2), make_rng(0))
        np.testing.assert_array_equal(stats.proposed, 18)
        assert np.all((stats.rates >= 0) & (stats.rates <= 1))
        lines = stats.to_csv(tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "t,accepted,proposed" and len(lines) == 6

    def test_move_stats_empty(self):
        assert np.isnan(MoveStats.zeros(2).rates).all()

    def test_mcmc_fully_adapted_beats_bootstrap_at_higher_dimension(self, make_problem):
        p = make_problem(d=5, T=10, seed=8)
        a = [mcmc_pf(p.theta, p.dims, p.y, 50, KernelSpec(), make_rng(1, r))[0].loglik for r in range(150)]
        b = [mcmc_faapf(p.theta, p.dims, p.y, 50, KernelSpec(), make_rng(2, r))[0].loglik for r in range(150)]
        assert np.var(b) < np.var(a)

    def test_single_particle(self, scalar_problem):
        p = scalar_problem
        s, stats = mcmc_pf(p.theta, p.dims, p.y, 1, KernelSpec(), make_rng(0))
        assert s.N == 1 and np.all(stats.proposed == 0)
        assert math.isfinite(s.loglik)
