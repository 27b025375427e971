"""Deterministic partitions, the error coefficient Λ and budget selection."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid
from scipy.stats import norm

from epsgpp.sampling import (
    SQRT_2_OVER_PI,
    build_partition,
    eta,
    feasible_n_capped,
    feasible_tau_n,
    kappa,
    lambda_coefficient,
    min_lambda,
)

# Φ(-3), Φ(-1) - Φ(-3), Φ(1) - Φ(-1) at 30 digits (mpmath).
W_TAIL = 0.0013498980316300946
W_SIDE = 0.15730535589982697
W_CENTRE = 0.6826894921370859
KAPPA_3 = 0.0007643086340954472
ETA_5_3 = 0.9973002039367398
LAMBDA_5_3 = 0.9980645125708353
# Closed-form τ and ceiled n for λ / (σ(ℓ1 + L)) = 0.1.
TAU_AT_TENTH = 2.3536953587536615
N_AT_TENTH = 50


class TestBuildPartition:
    def test_reference_example(self):
        p = build_partition(0.0, 1.0, 5, 3.0)
        np.testing.assert_array_equal(p.samples, [-3.0, -2.0, 0.0, 2.0, 3.0])
        np.testing.assert_allclose(p.weights, [W_TAIL, W_SIDE, W_CENTRE, W_SIDE, W_TAIL], rtol=1e-13)
        assert abs(p.weights.sum() - 1.0) < 1e-12

    def test_location_scale(self):
        p = build_partition(2.0, 0.5, 5, 3.0)
        np.testing.assert_allclose(p.samples, [0.5, 1.0, 2.0, 3.0, 3.5], atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 7])
    def test_tau_zero_collapses(self, n):
        p = build_partition(1.3, 2.0, n, 0.0)
        assert list(p.samples) == [1.3]
        assert list(p.weights) == [1.0]

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_partition(0.0, 1.0, 2, 1.0)
        with pytest.raises(ValueError):
            build_partition(0.0, 0.0, 5, 1.0)
        with pytest.raises(ValueError):
            build_partition(0.0, 1.0, 5, -1.0)


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(3, 400),
    tau=st.floats(1e-3, 9.0),
    mean=st.floats(-100, 100),
    sigma=st.floats(1e-3, 50),
)
def test_partition_invariants(n, tau, mean, sigma):
    p = build_partition(mean, sigma, n, tau)
    assert len(p) == n
    assert abs(p.weights.sum() - 1.0) < 1e-12
    assert np.all(p.weights >= 0)
    assert np.all(np.diff(p.samples) >= 0)
    np.testing.assert_allclose(p.samples - mean, -(p.samples - mean)[::-1], atol=1e-12 * (1 + abs(mean)))
    np.testing.assert_array_equal(p.weights, p.weights[::-1])


class TestLambda:
    def test_tau_zero(self):
        assert abs(lambda_coefficient(2, 0.0) - math.sqrt(2 / math.pi)) < 1e-12
        assert lambda_coefficient(9, 0.0) == lambda_coefficient(2, 0.0)

    def test_reference_values(self):
        assert kappa(3.0) == pytest.approx(KAPPA_3, rel=1e-12)
        assert eta(5, 3.0) == pytest.approx(ETA_5_3, rel=1e-13)
        assert lambda_coefficient(5, 3.0) == pytest.approx(LAMBDA_5_3, rel=1e-13)

    def test_kappa_continuous_at_zero(self):
        assert kappa(0.0) == SQRT_2_OVER_PI

    def test_undefined_pair_rejected(self):
        with pytest.raises(ValueError):
            lambda_coefficient(2, 0.5)

    def test_decreasing_in_n_and_limit(self):
        for tau in (0.5, 2.0, 4.0):
            vals = [lambda_coefficient(n, tau) for n in range(3, 200)]
            assert all(b < a for a, b in zip(vals, vals[1:]))
            assert lambda_coefficient(10**9, tau) == pytest.approx(kappa(tau), abs=1e-8)


@pytest.mark.parametrize("fn,lip", [
    (np.abs, 1.0),
    (lambda z: np.sin(3 * z), 3.0),
    (lambda z: np.maximum(z - 0.4, 0.0), 1.0),
    (lambda z: np.minimum(np.abs(z - 1.0), 0.5) * 2, 2.0),
])
@pytest.mark.parametrize("n,tau", [(1, 0.0), (3, 1.0), (5, 3.0), (12, 2.0), (50, 2.35)])
def test_quadrature_error_bound(fn, lip, n, tau):
    mean, sigma = 0.2, 1.3
    y = np.linspace(mean - 10 * sigma, mean + 10 * sigma, 100_001)
    exact = trapezoid(fn(y) * norm.pdf(y, mean, sigma), y)
    p = build_partition(mean, sigma, n, tau)
    approx = float(p.weights @ fn(p.samples))
    assert abs(approx - exact) <= lambda_coefficient(n, tau) * sigma * lip + 1e-9


class TestFeasibleTauN:
    def test_reference_ratio(self):
        c = feasible_tau_n(0.1, 1.0, 1.0)
        assert c.tau == pytest.approx(TAU_AT_TENTH, rel=1e-12)
        assert c.n == N_AT_TENTH
        assert lambda_coefficient(c.n, c.tau) <= 0.1

    def test_zero_lipschitz(self):
        c = feasible_tau_n(0.5, 1.0, 0.0)
        assert (c.tau, c.n) == (0.0, 1)

    def test_generous_lambda(self):
        c = feasible_tau_n(10.0, 1.0, 1.0)
        assert (c.tau, c.n) == (0.0, 2)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            feasible_tau_n(0.0, 1.0, 1.0)

    def test_many_triples(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            lam, sigma, l = 10 ** rng.uniform(-4, 1, size=3)
            c = feasible_tau_n(lam, sigma, l)
            assert lambda_coefficient(c.n, c.tau) * sigma * l <= lam
            if c.tau > 0:
                assert c.n > 2


class TestCapped:
    def test_generous(self):
        c = feasible_n_capped(1.0, 1.0, 1.0, 10)
        assert (c.tau, c.n) == (0.0, 2)

    def test_infeasible(self):
        assert feasible_n_capped(0.01, 1.0, 1.0, 2) is None
        assert feasible_n_capped(1e-4, 1.0, 1.0, 20) is None

    def test_returned_choices_verified(self):
        rng = np.random.default_rng(6)
        found = 0
        for _ in range(200):
            lam, sigma, l = 10 ** rng.uniform(-2, 0.5, size=3)
            c = feasible_n_capped(lam, sigma, l, 40)
            if c is not None:
                found += 1
                assert lambda_coefficient(c.n, c.tau) * sigma * l <= lam
                assert c.n < 40
        assert found > 50

    def test_smallest_n(self):
        lam = 0.2
        c = feasible_n_capped(lam, 1.0, 1.0, 100)
        assert min_lambda(c.n - 1)[1] > lam

    def test_capped_never_larger_than_analytic(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            lam, sigma, l = 10 ** rng.uniform(-2, 0.5, size=3)
            a = feasible_tau_n(lam, sigma, l)
            c = feasible_n_capped(lam, sigma, l, a.n + 1)
            assert c is not None and c.n <= max(a.n, 2)
