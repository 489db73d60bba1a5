import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xfer.dtm import exact_h_score
from xfer.errors import DataError, InsufficientTrialsError, ZeroVarianceError
from xfer.exponent import (
    LocalPair,
    information_vector,
    mismatched_exponent,
    normalize_feature,
    perturbation_vector,
    simulate_error_rate,
)

SIZES = [250, 1000, 1500, 2000]


@pytest.fixture
def pair(fixtures):
    d = json.loads((fixtures / "local_pair.json").read_text())
    return LocalPair(d["p0"], d["p1"], d["p2"], d["eps"])


def random_pair(rng, n=5, eps=0.05):
    p0 = rng.dirichlet(np.ones(n)) * 0.5 + 0.5 / n
    s = np.sqrt(p0)
    phis = []
    for _ in range(2):
        v = rng.standard_normal(n)
        v -= (v @ s) * s
        phis.append(v / np.linalg.norm(v) * rng.uniform(0.3, 1.0))
    return LocalPair.from_directions(p0, phis[0], phis[1], eps)


def optimal_direction(pair):
    d = perturbation_vector(pair.p1, pair.p0, pair.eps) - perturbation_vector(pair.p2, pair.p0, pair.eps)
    return d / np.sqrt(pair.p0)


class TestLocalPair:
    def test_outside_neighborhood(self):
        with pytest.raises(DataError, match="outside"):
            LocalPair([0.5, 0.5], [0.9, 0.1], [0.5, 0.5], eps=0.05)

    def test_not_normalized(self):
        with pytest.raises(DataError):
            LocalPair([0.5, 0.5], [0.6, 0.5], [0.5, 0.5])

    def test_large_eps_warns(self):
        with pytest.warns(UserWarning, match="o\\(eps"):
            LocalPair([0.5, 0.5], [0.6, 0.4], [0.5, 0.5], eps=0.3)

    def test_zero_reference_rejected(self):
        with pytest.raises(DataError):
            LocalPair([1.0, 0.0], [1.0, 0.0], [1.0, 0.0])

    def test_from_directions_requires_orthogonality(self):
        with pytest.raises(DataError):
            LocalPair.from_directions([0.5, 0.5], [1.0, 0.0], [0.0, 0.0])

    def test_around_mixture(self):
        p = LocalPair.around_mixture([0.52, 0.48], [0.48, 0.52])
        np.testing.assert_allclose(p.p0, [0.5, 0.5])
        assert p.eps == pytest.approx(0.04)


class TestPerturbationVector:
    def test_zero(self):
        np.testing.assert_array_equal(perturbation_vector([0.3, 0.7], [0.3, 0.7], 0.05), [0, 0])

    def test_unit_binary(self):
        delta = 0.01
        phi = perturbation_vector([0.5 + delta, 0.5 - delta], [0.5, 0.5], 2 * delta)
        np.testing.assert_allclose(phi, [1 / np.sqrt(2), -1 / np.sqrt(2)])

    def test_linear(self):
        a = perturbation_vector([0.52, 0.48], [0.5, 0.5], 0.05)
        b = perturbation_vector([0.51, 0.49], [0.5, 0.5], 0.05)
        np.testing.assert_allclose(b, a / 2)

    def test_zero_reference(self):
        with pytest.raises(DataError):
            perturbation_vector([0.5, 0.5], [1.0, 0.0], 0.05)

    def test_norm_within_neighborhood(self, rng):
        for _ in range(20):
            p = random_pair(rng)
            for pi in (p.p1, p.p2):
                assert np.linalg.norm(perturbation_vector(pi, p.p0, p.eps)) <= 1 + 1e-9


class TestInformationVector:
    def test_binary(self):
        np.testing.assert_allclose(information_vector([1.0, -1.0], [0.5, 0.5]),
                                   [1 / np.sqrt(2), -1 / np.sqrt(2)])

    def test_constant(self):
        with pytest.raises(ZeroVarianceError):
            information_vector([2.0, 2.0, 2.0], [0.2, 0.3, 0.5])

    def test_scale_invariant(self, rng):
        p0 = rng.dirichlet(np.ones(4))
        f = rng.standard_normal(4)
        np.testing.assert_allclose(information_vector(7 * f, p0), information_vector(f, p0))

    def test_unit_norm_and_recorded(self, rng):
        p0 = rng.dirichlet(np.ones(5))
        f = rng.standard_normal(5)
        assert abs(np.linalg.norm(information_vector(f, p0)) - 1) < 1e-10
        g, changed = normalize_feature(f, p0)
        assert changed
        assert normalize_feature(g, p0)[1] is False


class TestMismatchedExponent:
    def test_parallel_is_optimal(self, pair):
        r = mismatched_exponent(optimal_direction(pair), pair)
        assert r.predicted == pytest.approx(r.optimal, rel=1e-12)
        assert r.ratio == pytest.approx(1.0)

    def test_orthogonal_is_zero(self, pair):
        d = optimal_direction(pair)
        xi_d = np.sqrt(pair.p0) * (d - pair.p0 @ d)
        rng = np.random.default_rng(0)
        v = rng.standard_normal(len(d))
        s = np.sqrt(pair.p0)
        for u in (s, xi_d / np.linalg.norm(xi_d)):
            v -= (v @ u) * u
        f = v / s
        assert mismatched_exponent(f, pair).predicted == pytest.approx(0.0, abs=1e-18)

    def test_complete_family(self, rng):
        for _ in range(10):
            p = random_pair(rng)
            n = len(p.p0)
            r = mismatched_exponent(rng.standard_normal((n, n - 1)), p)
            assert abs(r.predicted - r.optimal) <= 1e-10 * max(r.optimal, 1e-300) + 1e-18
            assert r.k == n - 1

    def test_optimal_formula(self, pair):
        d = optimal_direction(pair) * np.sqrt(pair.p0)
        r = mismatched_exponent(np.ones(len(d)) + np.arange(len(d)), pair)
        assert r.optimal == pytest.approx(pair.eps ** 2 / 8 * d @ d)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
    def test_bounded_and_monotone_in_directions(self, seed, k):
        rng = np.random.default_rng(seed)
        p = random_pair(rng)
        f = rng.standard_normal((len(p.p0), k + 1))
        small = mismatched_exponent(f[:, :k], p)
        big = mismatched_exponent(f, p)
        assert 0 <= small.predicted <= small.optimal * (1 + 1e-9)
        assert big.predicted >= small.predicted - 1e-15

    def test_proportional_to_hscore(self, pair, rng):
        joint = pair.binary_joint()
        ratios = []
        for _ in range(20):
            f = rng.standard_normal(len(pair.p0))
            ratios.append(mismatched_exponent(f, pair).predicted / exact_h_score(joint, f))
        ratios = np.array(ratios)
        assert np.ptp(ratios) / ratios.mean() < 1e-6

    def test_report_ratio_nan_for_equal_hypotheses(self):
        p = LocalPair([0.2, 0.8], [0.2, 0.8], [0.2, 0.8], eps=0.05)
        assert np.isnan(mismatched_exponent([1.0, 0.0], p).ratio)


class TestSimulation:
    def test_equal_hypotheses(self):
        q = np.array([0.2, 0.3, 0.5])
        r = simulate_error_rate(np.array([1.0, 2.0, 3.0]), q, q, SIZES, trials=100000)
        assert abs(r.slope) < 0.01
        np.testing.assert_allclose(r.error_rates, 0.5)

    def test_optimal_direction_slope(self, pair):
        r = simulate_error_rate(optimal_direction(pair), pair.p1, pair.p2, SIZES, trials=100000)
        predicted = mismatched_exponent(optimal_direction(pair), pair).optimal
        assert abs(r.slope / predicted - 1) < 0.25
        assert r.fit_sizes == SIZES[1:]

    def test_slope_ratio_tracks_hscore_ratio(self, pair, rng):
        joint = pair.binary_joint()
        s = np.sqrt(pair.p0)
        d = optimal_direction(pair)
        xi = s * (d - pair.p0 @ d)
        xi /= np.linalg.norm(xi)
        v = rng.standard_normal(len(d))
        for u in (s, xi):
            v -= (v @ u) * u
        v /= np.linalg.norm(v)
        # two features at different angles to the optimal direction
        f1 = (0.9 * xi + np.sqrt(1 - 0.81) * v) / s
        f2 = (0.7 * xi + np.sqrt(1 - 0.49) * v) / s
        h1, h2 = exact_h_score(joint, f1), exact_h_score(joint, f2)
        r1 = simulate_error_rate(f1, pair.p1, pair.p2, SIZES, trials=100000, seed=1)
        r2 = simulate_error_rate(f2, pair.p1, pair.p2, SIZES, trials=100000, seed=2)
        assert abs((r1.slope / r2.slope) / (h1 / h2) - 1) < 0.2

    def test_deterministic(self, pair):
        f = optimal_direction(pair)
        a = simulate_error_rate(f, pair.p1, pair.p2, [50, 100, 200], trials=2000, seed=7)
        b = simulate_error_rate(f, pair.p1, pair.p2, [50, 100, 200], trials=2000, seed=7)
        assert a.error_rates == b.error_rates

    def test_chunking_does_not_change_result(self, pair):
        f = optimal_direction(pair)
        a = simulate_error_rate(f, pair.p1, pair.p2, [50, 100, 200], trials=3000, seed=7)
        b = simulate_error_rate(f, pair.p1, pair.p2, [50, 100, 200], trials=3000, seed=7, chunk=3000)
        assert a.error_rates == b.error_rates

    def test_all_dropped(self):
        p1, p2 = np.array([0.9, 0.1]), np.array([0.1, 0.9])
        with pytest.raises(InsufficientTrialsError):
            simulate_error_rate(np.array([0.0, 1.0]), p1, p2, [500, 1000, 2000], trials=100)

    @pytest.mark.parametrize("sizes", [[10, 20], [10, 10, 20], [0, 5, 10]])
    def test_bad_sizes(self, sizes):
        q = np.array([0.5, 0.5])
        with pytest.raises(ValueError):
            simulate_error_rate([1.0, 0.0], q, q, sizes, trials=10)

    def test_zero_trials(self):
        q = np.array([0.5, 0.5])
        with pytest.raises(ValueError):
            simulate_error_rate([1.0, 0.0], q, q, [1, 2, 3], trials=0)

    def test_dropped_sizes_reported(self):
        p1, p2 = np.array([0.7, 0.3]), np.array([0.3, 0.7])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            r = simulate_error_rate(np.array([1.0, 0.0]), p1, p2, [5, 10, 20, 200], trials=2000)
        assert 200 in r.dropped
        assert 200 not in r.fit_sizes
