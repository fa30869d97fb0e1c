import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group, wasserstein_distance

from mgbench.errors import ParameterError
from mgbench.metrics import gaussian_w2, random_directions, sliced_wasserstein


def test_identical_sets_give_zero():
    X = np.random.default_rng(0).standard_normal((50, 4))
    assert sliced_wasserstein(X, X.copy(), 100, np.random.default_rng(1)) == 0.0


def test_one_dimensional_case_is_sorted_rms():
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal(300), 2 + rng.standard_normal(300)
    ref = math.sqrt(np.mean((np.sort(x) - np.sort(y)) ** 2))
    assert sliced_wasserstein(x, y, 7, rng) == pytest.approx(ref, rel=1e-12)
    # order 1 with mean aggregation is scipy's 1-D distance
    assert sliced_wasserstein(x, y, 3, rng, order=1, aggregate="mean") == pytest.approx(wasserstein_distance(x, y))


def test_unequal_counts_use_quantile_transport():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal(40), rng.standard_normal(70)
    assert sliced_wasserstein(x, y, 1, rng, order=1) == pytest.approx(wasserstein_distance(x, y), rel=1e-10)
    # duplicating every sample leaves the empirical measure unchanged
    assert sliced_wasserstein(x, np.repeat(x, 3), 1, rng) == pytest.approx(0.0, abs=1e-12)


def test_shifted_gaussians():
    rng = np.random.default_rng(4)
    d = 10
    m = rng.standard_normal(d)
    X = rng.standard_normal((4000, d))
    Y = rng.standard_normal((4000, d)) + m
    # each slice sees a shift theta.m; E[(theta.m)^2] = |m|^2 / d
    est = sliced_wasserstein(X, Y, 4000, rng)
    assert est == pytest.approx(np.linalg.norm(m) / math.sqrt(d), rel=0.08)


def test_symmetry_under_shared_directions():
    rng = np.random.default_rng(5)
    X, Y = rng.standard_normal((80, 3)), rng.standard_normal((80, 3)) * 2
    theta = random_directions(3, 200, rng)
    assert sliced_wasserstein(X, Y, directions=theta) == pytest.approx(sliced_wasserstein(Y, X, directions=theta))


def test_rotation_invariance_in_expectation():
    rng = np.random.default_rng(6)
    X, Y = rng.standard_normal((500, 5)), rng.standard_normal((500, 5)) + 1.0
    Q = ortho_group.rvs(5, random_state=7)
    a = [sliced_wasserstein(X, Y, 500, np.random.default_rng(s)) for s in range(20)]
    b = [sliced_wasserstein(X @ Q.T, Y @ Q.T, 500, np.random.default_rng(100 + s)) for s in range(20)]
    spread = np.std(a + b) / math.sqrt(20)
    assert abs(np.mean(a) - np.mean(b)) < 4 * spread + 1e-12


def test_sliced_wasserstein_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ParameterError):
        sliced_wasserstein(np.zeros((0, 2)), np.zeros((3, 2)), 10, rng)
    with pytest.raises(ParameterError):
        sliced_wasserstein(np.zeros((3, 2)), np.zeros((3, 3)), 10, rng)
    with pytest.raises(ParameterError):
        sliced_wasserstein(np.full((3, 2), np.nan), np.zeros((3, 2)), 10, rng)


def test_gaussian_w2_closed_forms():
    rng = np.random.default_rng(8)
    B = rng.standard_normal((4, 4))
    S = B @ B.T + np.eye(4)
    m1, m2 = rng.standard_normal(4), rng.standard_normal(4)
    assert gaussian_w2(m1, S, m1, S) == pytest.approx(0.0, abs=1e-6)
    assert gaussian_w2(m1, S, m2, S) == pytest.approx(np.linalg.norm(m1 - m2), rel=1e-6)
    lam, mu = rng.uniform(0.1, 3, 4), rng.uniform(0.1, 3, 4)
    ref = math.sqrt(np.sum((m1 - m2) ** 2) + np.sum((np.sqrt(lam) - np.sqrt(mu)) ** 2))
    assert gaussian_w2(m1, np.diag(lam), m2, np.diag(mu)) == pytest.approx(ref, rel=1e-10)


def test_gaussian_w2_rejects_asymmetric():
    with pytest.raises(ParameterError):
        gaussian_w2(np.zeros(2), np.array([[1.0, 0.3], [0.0, 1.0]]), np.zeros(2), np.eye(2))


def _rand_gauss(rng, d):
    B = rng.standard_normal((d, d))
    return rng.standard_normal(d), B @ B.T * rng.uniform(0.1, 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_gaussian_w2_triangle_inequality(seed, d):
    rng = np.random.default_rng(seed)
    g1, g2, g3 = (_rand_gauss(rng, d) for _ in range(3))
    a = gaussian_w2(*g1, *g3)
    b = gaussian_w2(*g1, *g2) + gaussian_w2(*g2, *g3)
    assert a <= b + 1e-8
    assert gaussian_w2(*g1, *g2) == pytest.approx(gaussian_w2(*g2, *g1), rel=1e-6, abs=1e-8)
