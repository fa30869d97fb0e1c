import math

import numpy as np
import pytest

from mgbench.errors import NumericError, ParameterError
from mgbench.likelihood import LinearGaussianLikelihood
from mgbench.priors import ExactDenoiser, GaussianMixturePrior, GaussianPrior
from mgbench.schedule import build_schedule
from mgbench.variational import (
    AdamState,
    GradSpec,
    VariationalParams,
    adam_step,
    guidance_grad,
    guidance_loss,
    kl_iso,
    total_grad,
    total_loss,
    warmstart_grad,
    warmstart_loss,
)

SCHED = build_schedule(n=300)


def _problem(rng, d=4):
    w = rng.uniform(0.2, 1, 3)
    prior = GaussianMixturePrior(w / w.sum(), 2 * rng.standard_normal((3, d)), rng.uniform(0.6, 1.2, 3))
    lik = LinearGaussianLikelihood(rng.standard_normal((2, d)), rng.standard_normal(2), 0.8)
    return ExactDenoiser(prior, SCHED), lik


def _fd(f, p: VariationalParams, h=1e-6):
    d = p.mu.size
    gm = [(f(VariationalParams(p.mu + h * e, p.rho)) - f(VariationalParams(p.mu - h * e, p.rho))) / (2 * h) for e in np.eye(d)]
    gr = [(f(VariationalParams(p.mu, p.rho + h * e)) - f(VariationalParams(p.mu, p.rho - h * e))) / (2 * h) for e in np.eye(d)]
    return np.array(gm), np.array(gr)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b))


def test_kl_matches_general_gaussian_formula():
    rng = np.random.default_rng(0)
    p = VariationalParams(rng.standard_normal(3), 0.3 * rng.standard_normal(3))
    mean, var = rng.standard_normal(3), 0.7
    S1 = np.diag(np.exp(2 * p.rho))
    S2 = var * np.eye(3)
    diff = mean - p.mu
    ref = 0.5 * (np.trace(np.linalg.solve(S2, S1)) + diff @ np.linalg.solve(S2, diff) - 3
                 + math.log(np.linalg.det(S2) / np.linalg.det(S1)))
    assert kl_iso(p, mean, var)[0] == pytest.approx(ref, rel=1e-12)
    assert kl_iso(VariationalParams(mean, np.full(3, 0.5 * math.log(var))), mean, var)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ParameterError):
        kl_iso(p, mean, 0.0)


def test_kl_gradient():
    rng = np.random.default_rng(1)
    p = VariationalParams(rng.standard_normal(4), 0.2 * rng.standard_normal(4))
    mean = rng.standard_normal(4)
    g = kl_iso(p, mean, 0.4)[1]
    gm, gr = _fd(lambda q: kl_iso(q, mean, 0.4)[0], p)
    assert _rel(g.mu, gm) < 1e-7 and _rel(g.rho, gr) < 1e-7


@pytest.mark.parametrize("ell", [1, 30, 200])
def test_guidance_and_total_gradients(ell):
    rng = np.random.default_rng(ell)
    den, lik = _problem(rng)
    p = VariationalParams(rng.standard_normal(4), -0.5 + 0.2 * rng.standard_normal(4))
    z = rng.standard_normal(4)
    g = guidance_grad(p, z, ell, den, lik)
    gm, gr = _fd(lambda q: guidance_loss(q, z, ell, den, lik), p)
    assert _rel(g.mu, gm) < 1e-6 and _rel(g.rho, gr) < 1e-6
    mean = rng.standard_normal(4)
    t = total_grad(p, z, ell, mean, 0.3, den, lik)
    tm, tr = _fd(lambda q: total_loss(q, z, ell, mean, 0.3, den, lik), p)
    assert _rel(t.mu, tm) < 1e-6 and _rel(t.rho, tr) < 1e-6


def test_monte_carlo_axis_is_averaged():
    rng = np.random.default_rng(2)
    den, lik = _problem(rng)
    p = VariationalParams(rng.standard_normal(4), np.full(4, -1.0))
    z = rng.standard_normal((3, 4))
    g = guidance_grad(p, z, 10, den, lik)
    parts = [guidance_grad(p, zi, 10, den, lik) for zi in z]
    assert np.allclose(g.mu, np.mean([q.mu for q in parts], axis=0))
    assert np.allclose(g.rho, np.mean([q.rho for q in parts], axis=0))
    assert guidance_loss(p, z, 10, den, lik) == pytest.approx(np.mean([guidance_loss(p, zi, 10, den, lik) for zi in z]))


def test_batched_params_are_independent():
    rng = np.random.default_rng(3)
    den, lik = _problem(rng)
    p = VariationalParams(rng.standard_normal((5, 4)), np.full((5, 4), -0.7))
    z = rng.standard_normal((5, 4))
    g = total_grad(p, z, 12, np.zeros((5, 4)), 0.2, den, lik)
    one = total_grad(VariationalParams(p.mu[2], p.rho[2]), z[2], 12, np.zeros(4), 0.2, den, lik)
    assert np.allclose(g.mu[2], one.mu) and np.allclose(g.rho[2], one.rho)


@pytest.mark.parametrize("ell", [2, 15, 250])
def test_warmstart_gradient(ell):
    rng = np.random.default_rng(100 + ell)
    den, lik = _problem(rng)
    p = VariationalParams(rng.standard_normal(4), -1.0 + 0.2 * rng.standard_normal(4))
    z = rng.standard_normal(4)
    x_ell = rng.standard_normal(4)
    g = warmstart_grad(p, z, ell, x_ell, den, lik, SCHED)
    gm, gr = _fd(lambda q: warmstart_loss(q, z, ell, x_ell, den, lik, SCHED), p)
    assert _rel(g.mu, gm) < 1e-6 and _rel(g.rho, gr) < 1e-6


def test_warmstart_requires_ell_above_one():
    rng = np.random.default_rng(4)
    den, lik = _problem(rng)
    p = VariationalParams(np.zeros(4), np.zeros(4))
    with pytest.raises(ParameterError):
        warmstart_grad(p, np.zeros(4), 1, np.zeros(4), den, lik, SCHED)


def test_strict_mode_raises_on_non_finite():
    prior = GaussianPrior(np.zeros(2), np.eye(2))
    den = ExactDenoiser(prior, SCHED)
    lik = LinearGaussianLikelihood(np.eye(2), np.zeros(2), 1.0)
    p = VariationalParams(np.array([np.inf, 0.0]), np.zeros(2))
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericError):
            guidance_grad(p, np.zeros(2), 5, den, lik, strict=True)
        assert not guidance_grad(p, np.zeros(2), 5, den, lik).is_finite()


def _reference_adam(grads, x0, lr, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = x0.copy(), np.zeros_like(x0), np.zeros_like(x0)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return x


def test_adam_matches_reference():
    rng = np.random.default_rng(5)
    p = VariationalParams(rng.standard_normal(3), rng.standard_normal(3))
    grads = [GradSpec(rng.standard_normal(3), rng.standard_normal(3)) for _ in range(6)]
    state = AdamState.init(p, lr=0.05)
    q = p
    for g in grads:
        state, q = adam_step(state, g, q)
    assert state.step == 6
    assert np.allclose(q.mu, _reference_adam([g.mu for g in grads], p.mu, 0.05))
    assert np.allclose(q.rho, _reference_adam([g.rho for g in grads], p.rho, 0.05))


def test_adam_minimises_kl():
    p = VariationalParams(np.array([3.0, -2.0]), np.array([1.0, -2.0]))
    mean, var = np.array([0.5, 0.5]), 0.25
    state = AdamState.init(p, lr=0.05)
    for _ in range(2000):
        state, p = adam_step(state, kl_iso(p, mean, var)[1], p)
    assert np.allclose(p.mu, mean, atol=1e-3)
    assert np.allclose(p.std, math.sqrt(var), atol=1e-3)
