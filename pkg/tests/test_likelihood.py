import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mgbench.errors import ParameterError
from mgbench.likelihood import LinearGaussianLikelihood, MagnitudeLikelihood, make_likelihood


def _fd_grad(f, x, h=1e-6):
    return np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.size)])


def test_linear_loglik_matches_scipy():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 4))
    lik = LinearGaussianLikelihood(A, rng.standard_normal(3), 0.7)
    x = rng.standard_normal((5, 4))
    ref = [multivariate_normal(A @ xi, 0.49 * np.eye(3)).logpdf(lik.y) for xi in x]
    assert np.allclose(lik.loglik(x), ref, atol=1e-10)
    assert lik.dim == 4 and lik.dim_y == 3


@pytest.mark.parametrize("kind", ["linear", "magnitude"])
def test_grad_loglik_finite_differences(kind):
    rng = np.random.default_rng(1)
    lik = make_likelihood(kind, rng.standard_normal((2, 5)), rng.standard_normal(2), 0.4)
    for _ in range(5):
        x = rng.standard_normal(5)
        fd = _fd_grad(lik.loglik, x)
        assert np.linalg.norm(lik.grad_loglik(x) - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


def test_magnitude_forward():
    lik = MagnitudeLikelihood(np.array([[1.0, -2.0]]), np.array([1.0]), 0.1)
    assert lik.forward(np.array([1.0, 1.0]))[0] == pytest.approx(1.0)
    assert lik.kind == "magnitude"
    assert lik.loglik(np.array([3.0, 1.0])) == pytest.approx(-0.5 * math.log(2 * math.pi * 0.01))


def test_validation():
    with pytest.raises(ParameterError):
        LinearGaussianLikelihood(np.eye(2), np.zeros(3), 1.0)
    with pytest.raises(ParameterError):
        LinearGaussianLikelihood(np.eye(2), np.zeros(2), 0.0)
    with pytest.raises(ParameterError):
        make_likelihood("cubic", np.eye(2), np.zeros(2), 1.0)
    lik = LinearGaussianLikelihood(np.eye(2), np.zeros(2), 1.0)
    with pytest.raises(ParameterError):
        lik.loglik(np.zeros(3))
