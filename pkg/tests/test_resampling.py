import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmcmc.resampling import DegenerateWeightsError, RngStream, categorical, make_rng, multinomial_resample, normalize

log_weights = st.lists(st.floats(-700, 700), min_size=1, max_size=40).map(np.array)


class TestNormalize:
    @given(log_weights)
    def test_sums_to_one_and_lse(self, lw):
        p, lse = normalize(lw)
        assert p.sum() == pytest.approx(1.0, rel=1e-12)
        m = lw.max()
        assert lse == pytest.approx(m + math.log(np.exp(lw - m).sum()), rel=1e-12, abs=1e-12)

    @given(log_weights, st.floats(-1e3, 1e3))
    def test_shift_invariant(self, lw, c):
        np.testing.assert_allclose(normalize(lw)[0], normalize(lw + c)[0], rtol=1e-9, atol=1e-300)

    def test_huge_logs(self):
        p, lse = normalize(np.array([1000.0, 1000.0]))
        np.testing.assert_allclose(p, [0.5, 0.5])
        assert lse == pytest.approx(1000 + math.log(2))

    def test_some_minus_inf(self):
        p, _ = normalize(np.array([-np.inf, 0.0, -np.inf]))
        np.testing.assert_array_equal(p, [0, 1, 0])

    @pytest.mark.parametrize("lw", [[-np.inf, -np.inf], [np.nan, 0.0], [np.inf, 0.0], []])
    def test_degenerate(self, lw):
        with pytest.raises(DegenerateWeightsError):
            normalize(np.array(lw, dtype=float))

    def test_time_in_message(self):
        err = DegenerateWeightsError(t=3)
        assert "t=3" in str(err) and err.t == 3


class TestSampling:
    def test_categorical_point_mass(self):
        rng = make_rng(0)
        assert all(categorical(np.array([0, 0, 1.0, 0]), rng) == 2 for _ in range(100))

    def test_multinomial_never_picks_zero_weight(self):
        a = multinomial_resample(np.array([0.5, 0, 0.5]), 10_000, make_rng(1))
        assert not np.any(a == 1)
        assert a.min() >= 0 and a.max() <= 2

    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_multinomial_frequencies(self, w, seed):
        p = np.array(w) / np.sum(w)
        n = 40_000
        counts = np.bincount(multinomial_resample(p, n, make_rng(seed)), minlength=len(p))
        se = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(counts / n - p) < 5 * se)

    def test_categorical_matches_multinomial_draw(self):
        p = np.array([0.2, 0.3, 0.5])
        a = [categorical(p, make_rng(7)) for _ in range(3)]
        b = multinomial_resample(p, 1, make_rng(7))
        assert a[0] == b[0]


class TestStreams:
    def test_reproducible(self):
        assert make_rng(5, 1, 2).random() == make_rng(5, 1, 2).random()

    def test_distinct_keys_differ(self):
        draws = {make_rng(5, k).random() for k in range(20)}
        assert len(draws) == 20

    def test_child_matches_direct(self):
        assert RngStream(3).child(4).child(9).generator().random() == make_rng(3, 4, 9).random()
