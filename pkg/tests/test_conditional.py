import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pmcmc.conditional import (
    RetainedPath,
    ancestor_sample,
    backward_sample,
    conditional_filter,
    generic_index_log_weights,
    index_log_weights,
    lineage,
    refresh_path,
)
from pmcmc.mcmc_filters import KernelSpec
from pmcmc.model import LinearGaussianSSM, ModelDims, Theta, kalman, simulate
from pmcmc.resampling import make_rng, normalize
from pmcmc.variants import VARIANTS, get_variant

THETA = Theta.true_values()
SPEC = KernelSpec("rw")


def unconditional(name, dims, y, N, rng):
    v = get_variant(name)
    model = LinearGaussianSSM(THETA, dims)
    system, _ = v.run(model, y, N, rng, SPEC)
    return system, v.family(model, y), model


def specialised_bs_weights(system, model, t, x_next):
    fm = model.f_mean(system.x[t])
    return normalize(index_log_weights(system.logw[t], system.log_pred[t], model, fm, x_next))[0]


def enumerate_backward_law(system, family):
    """Exact law of b_{1:T} from the lineage-based generic weights."""
    T, N = system.T, system.N
    wT = normalize(system.logw[-1])[0]
    law = {}
    for b in itertools.product(range(N), repeat=T):
        pr = wT[b[-1]]
        for t in range(T - 2, -1, -1):
            future = system.x[np.arange(t + 1, T), list(b[t + 1:])]
            pr *= normalize(generic_index_log_weights(system, family, t, future))[0][b[t]]
        law[b] = pr
    return law


class TestPinning:
    @pytest.mark.parametrize("name", VARIANTS)
    @pytest.mark.parametrize("mode", ["bs", "as"])
    def test_retained_states_bitwise(self, name, mode):
        dims = ModelDims(d=2, T=4)
        y = simulate(THETA, dims, 0).y
        path = simulate(THETA, dims, 1).x_true
        b = np.array([0, 4, 2, 3])
        system, _ = conditional_filter(name, RetainedPath(path, b), THETA, dims, y, 5, make_rng(3), spec=SPEC, index_mode=mode)
        for t in range(4):
            np.testing.assert_array_equal(system.x[t, b[t]], path[t])
        if mode == "bs":
            np.testing.assert_array_equal(system.trace_indices(b[-1]), b)

    @pytest.mark.parametrize("name", VARIANTS)
    @pytest.mark.parametrize("mode", ["bs", "as"])
    def test_single_particle_is_identity(self, name, mode):
        dims = ModelDims(d=1, T=3)
        y = simulate(THETA, dims, 0).y
        path = np.array([[0.2], [-1.0], [0.5]])
        system, _ = conditional_filter(name, RetainedPath(path, np.zeros(3, int)), THETA, dims, y, 1, make_rng(0), spec=SPEC, index_mode=mode)
        b = refresh_path(system, LinearGaussianSSM(THETA, dims), make_rng(1), mode)
        np.testing.assert_array_equal(system.path(b), path)

    def test_bad_inputs(self):
        dims = ModelDims(d=1, T=3)
        y = simulate(THETA, dims, 0).y
        path = np.zeros((3, 1))
        with pytest.raises(ValueError, match="out of range"):
            conditional_filter("pf", RetainedPath(path, np.array([0, 5, 0])), THETA, dims, y, 5, make_rng(0))
        with pytest.raises(ValueError, match="index_mode"):
            conditional_filter("pf", RetainedPath(path, np.zeros(3, int)), THETA, dims, y, 5, make_rng(0), index_mode="x")
        with pytest.raises(ValueError, match="one index per time step"):
            RetainedPath(path, np.zeros(2, int))
        with pytest.raises(ValueError, match="unknown filter variant"):
            conditional_filter("nope", RetainedPath(path, np.zeros(3, int)), THETA, dims, y, 5, make_rng(0))


class TestIndexWeights:
    @pytest.mark.parametrize("name", VARIANTS)
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=8, deadline=None)
    def test_specialised_equals_generic(self, name, seed):
        dims = ModelDims(d=2, T=4)
        y = simulate(THETA, dims, seed).y
        system, fam, model = unconditional(name, dims, y, 3, make_rng(seed))
        future_path = simulate(THETA, dims, seed + 1).x_true
        for t in range(dims.T - 1):
            gen = normalize(generic_index_log_weights(system, fam, t, future_path[t + 1:]))[0]
            spec = specialised_bs_weights(system, model, t, future_path[t + 1])
            np.testing.assert_allclose(spec, gen, rtol=0, atol=1e-10)

    def test_bootstrap_weights_are_g_times_f(self):
        dims = ModelDims(d=1, T=3)
        y = simulate(THETA, dims, 2).y
        system, _, model = unconditional("pf", dims, y, 4, make_rng(0))
        x_next = np.array([0.3])
        lw = np.log(normalize(system.logw[1])[0]) + model.log_f(x_next, system.x[1])
        np.testing.assert_allclose(specialised_bs_weights(system, model, 1, x_next), normalize(lw)[0], atol=1e-14)

    def test_fully_adapted_weights_are_f(self):
        dims = ModelDims(d=1, T=3)
        y = simulate(THETA, dims, 2).y
        system, _, model = unconditional("fa-apf", dims, y, 4, make_rng(0))
        x_next = np.array([0.3])
        expected = normalize(model.log_f(x_next, system.x[0]))[0]
        np.testing.assert_allclose(specialised_bs_weights(system, model, 0, x_next), expected, atol=1e-14)

    def test_lineage(self):
        dims = ModelDims(d=1, T=4)
        y = simulate(THETA, dims, 2).y
        system, _, _ = unconditional("pf", dims, y, 5, make_rng(0))
        np.testing.assert_array_equal(lineage(system, 3, 2), system.trace_indices(2))


class TestLaws:
    @pytest.mark.parametrize("name", ["pf", "apf", "mcmc-fa-apf"])
    def test_backward_law_matches_enumeration(self, name):
        dims = ModelDims(d=1, T=3)
        y = simulate(THETA, dims, 4).y
        system, fam, model = unconditional(name, dims, y, 2, make_rng(8))
        exact = enumerate_backward_law(system, fam)
        n = 100_000
        draws = backward_sample(system, model, make_rng(9), size=n)
        keys, counts = np.unique(draws, axis=0, return_counts=True)
        emp = {tuple(int(v) for v in k): c / n for k, c in zip(keys, counts)}
        err = max(abs(emp.get(b, 0.0) - p) for b, p in exact.items())
        assert err < 0.006

    def test_scalar_and_vectorised_backward_agree_in_law(self):
        dims = ModelDims(d=1, T=3)
        y = simulate(THETA, dims, 4).y
        system, _, model = unconditional("pf", dims, y, 3, make_rng(1))
        rng = make_rng(2)
        a = np.array([backward_sample(system, model, rng) for _ in range(20_000)])
        b = backward_sample(system, model, make_rng(3), size=20_000)
        for t in range(3):
            pa = np.bincount(a[:, t], minlength=3) / len(a)
            pb = np.bincount(b[:, t], minlength=3) / len(b)
            assert np.max(np.abs(pa - pb)) < 0.02

    @pytest.mark.parametrize("name", ["pf", "fa-apf", "apf"])
    def test_ancestor_law(self, name):
        dims = ModelDims(d=1, T=3)
        y = simulate(THETA, dims, 6).y
        system, fam, model = unconditional(name, dims, y, 3, make_rng(4))
        future = np.array([[0.4], [-0.3]])
        exact = normalize(generic_index_log_weights(system, fam, 0, future))[0]
        rng = make_rng(5)
        n = 50_000
        draws = np.array([ancestor_sample(system, 1, future[0], model, rng) for _ in range(n)])
        emp = np.bincount(draws, minlength=3) / n
        assert np.max(np.abs(emp - exact)) < 0.01


class TestExtendedTarget:
    @pytest.mark.parametrize("name", VARIANTS)
    @pytest.mark.parametrize("mode", ["bs", "as"])
    def test_smoother_moments_preserved(self, name, mode):
        dims = ModelDims(d=1, T=3)
        y = simulate(THETA, dims, 1).y
        k = kalman(THETA, dims, y)
        model = LinearGaussianSSM(THETA, dims)
        reps = 1500
        starts = k.sample_paths(make_rng(0), reps)
        out = np.empty((reps, 3))
        for r in range(reps):
            rng = make_rng(7, r)
            b = rng.integers(0, 5, size=3)
            system, _ = conditional_filter(name, RetainedPath(starts[r], b), THETA, dims, y, 5, rng, spec=SPEC, index_mode=mode)
            out[r] = system.path(refresh_path(system, model, rng, mode))[:, 0]
        mean, var = k.smoother_means[:, 0], k.smoother_covs[:, 0, 0]
        assert np.all(np.abs(out.mean(axis=0) - mean) < 4 * np.sqrt(var / reps))
        assert np.all(np.abs(out.var(axis=0, ddof=1) - var) < 4 * var * math.sqrt(2 / (reps - 1)))

    @pytest.mark.parametrize("name", VARIANTS)
    def test_conditional_output_law_is_reweighted_unconditional(self, name):
        """With an exact posterior path and uniform pivots the conditional output has law
        psi(z) p^(z) / p(y), psi being the unconditional filter law."""
        dims = ModelDims(d=1, T=2)
        y = simulate(THETA, dims, 3).y
        k = kalman(THETA, dims, y)
        reps = 4000
        ref, wts, cond = np.empty(reps), np.empty(reps), np.empty(reps)
        starts = k.sample_paths(make_rng(10), reps)
        for r in range(reps):
            system, _, _ = unconditional(name, dims, y, 2, make_rng(11, r))
            ref[r], wts[r] = system.loglik, math.exp(system.loglik - k.loglik)
            rng = make_rng(12, r)
            out, _ = conditional_filter(name, RetainedPath(starts[r], rng.integers(0, 2, size=2)), THETA, dims, y, 2, rng, spec=SPEC)
            cond[r] = out.loglik
        for c in np.quantile(cond, [0.1, 0.3, 0.5, 0.7, 0.9]):
            a = (cond <= c).astype(float)
            b = (ref <= c) * wts
            se = math.sqrt(a.var() / reps + b.var() / reps)
            assert abs(a.mean() - b.mean()) < 4 * se
