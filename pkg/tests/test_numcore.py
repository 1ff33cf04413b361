import math

import numpy as np
import pytest

from gradreg.errors import InvalidParameterError
from gradreg.numcore import (
    INF,
    canonical_p,
    dual_exponent,
    gaussian_cdf,
    gaussian_sample,
    histogram_counts,
    lp_norm,
    make_rng,
    substream,
)

P_GRID = [1.0, 1.5, 2.0, 3.0, INF]


class TestLpNorm:
    def test_examples(self):
        assert lp_norm([3, 4], 2) == pytest.approx(5.0)
        assert lp_norm([1, -1, 1], 1) == pytest.approx(3.0)
        assert lp_norm([2, -7], INF) == pytest.approx(7.0)

    def test_zero_vector(self):
        for p in P_GRID:
            assert lp_norm(np.zeros(4), p) == 0.0

    def test_rejects_p_below_one(self):
        with pytest.raises(InvalidParameterError):
            lp_norm([1.0, 2.0], 0.5)

    def test_rows(self):
        norms = lp_norm(np.array([[3.0, 4.0], [6.0, 8.0]]), 2)
        np.testing.assert_allclose(norms, [5.0, 10.0])

    def test_large_exponent_does_not_overflow(self):
        assert lp_norm([1e200, 1e200], 3.0) == pytest.approx(1e200 * 2 ** (1 / 3))

    @pytest.mark.parametrize("p", P_GRID)
    def test_triangle_and_homogeneity(self, p):
        rng = np.random.default_rng(11)
        for _ in range(50):
            u, v = rng.normal(size=(2, 6))
            c = rng.normal()
            assert lp_norm(u + v, p) <= lp_norm(u, p) + lp_norm(v, p) + 1e-12
            assert lp_norm(c * u, p) == pytest.approx(abs(c) * lp_norm(u, p), rel=1e-12)

    @pytest.mark.parametrize("p", P_GRID)
    def test_holder(self, p):
        rng = np.random.default_rng(12)
        for _ in range(50):
            u, v = rng.normal(size=(2, 5))
            assert abs(u @ v) <= lp_norm(u, p) * lp_norm(v, dual_exponent(p)) + 1e-12


class TestDualExponent:
    def test_examples(self):
        assert dual_exponent(2.0) == 2.0
        assert dual_exponent(INF) == 1.0
        assert dual_exponent(1.0) == INF
        assert dual_exponent(3.0) == pytest.approx(1.5)

    @pytest.mark.parametrize("p", [1.0, 1.25, 2.0, 3.0, 7.5, INF])
    def test_involution(self, p):
        assert dual_exponent(dual_exponent(p)) == pytest.approx(p)

    @pytest.mark.parametrize("p", [1.25, 2.0, 3.0, 7.5])
    def test_conjugate(self, p):
        assert 1 / p + 1 / dual_exponent(p) == pytest.approx(1.0)

    def test_rejects_p_below_one(self):
        with pytest.raises(InvalidParameterError):
            dual_exponent(0.99)


class TestCanonicalP:
    def test_snaps_near_one(self):
        assert canonical_p(1.0 + 1e-10) == 1.0

    def test_snaps_large_to_inf(self):
        assert canonical_p(1e7) == INF

    def test_keeps_interior(self):
        assert canonical_p(1.5) == 1.5

    def test_rejects_nan(self):
        with pytest.raises(InvalidParameterError):
            canonical_p(math.nan)


class TestGaussianCdf:
    def test_examples(self):
        assert gaussian_cdf(0.0) == pytest.approx(0.5)
        assert gaussian_cdf(-1.514) == pytest.approx(0.0650, abs=1e-4)
        assert gaussian_cdf(INF) == 1.0
        assert gaussian_cdf(-INF) == 0.0

    def test_symmetry_and_monotone(self):
        z = np.linspace(-8, 8, 801)
        phi = gaussian_cdf(z)
        np.testing.assert_allclose(phi + gaussian_cdf(-z), 1.0, atol=2e-7)
        assert np.all(np.diff(phi) >= 0)


class TestGaussianSample:
    def test_degenerate(self):
        np.testing.assert_array_equal(gaussian_sample(make_rng(0), 1.5, 0.0, 3), [1.5, 1.5, 1.5])

    def test_mean(self):
        draws = gaussian_sample(make_rng(1), 0.0, 1.0, 100_000)
        assert abs(draws.mean()) < 4 / math.sqrt(100_000)

    def test_deterministic(self):
        a = gaussian_sample(make_rng(7), 0.0, 2.0, 10)
        b = gaussian_sample(make_rng(7), 0.0, 2.0, 10)
        np.testing.assert_array_equal(a, b)

    def test_negative_sigma(self):
        with pytest.raises(InvalidParameterError):
            gaussian_sample(make_rng(0), 0.0, -1.0, 3)


class TestSubstream:
    def test_same_keys_same_stream(self):
        np.testing.assert_array_equal(substream(5, 3).normal(size=4), substream(5, 3).normal(size=4))

    def test_different_keys_differ(self):
        assert not np.array_equal(substream(5, 3).normal(size=4), substream(5, 4).normal(size=4))


class TestHistogramCounts:
    def test_two_bins(self):
        np.testing.assert_array_equal(histogram_counts([0.05, 0.15], 0.1), [1, 1])

    def test_edge_value_lands_in_upper_bin(self):
        np.testing.assert_array_equal(histogram_counts([0.3], 0.1), [0, 0, 0, 1])

    def test_empty(self):
        assert histogram_counts([], 0.1).size == 0

    def test_counts_sum(self):
        values = np.abs(np.random.default_rng(3).normal(size=500))
        assert histogram_counts(values, 0.05).sum() == 500

    def test_rejects_bad_width(self):
        with pytest.raises(InvalidParameterError):
            histogram_counts([0.1], 0.0)
