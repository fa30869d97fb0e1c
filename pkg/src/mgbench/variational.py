"""Diagonal Gaussian variational family, its losses and their gradients.

Parameters are a mean ``mu`` and log standard deviations ``rho``; both may
carry leading batch axes (one independent variational problem per chain).
A draw ``z`` with one extra leading axis is treated as ``n_mc`` Monte Carlo
samples and the estimate is averaged over that axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError, ParameterError
from .schedule import NoiseSchedule

__all__ = [
    "VariationalParams",
    "GradSpec",
    "AdamState",
    "kl_iso",
    "guidance_loss",
    "guidance_grad",
    "total_loss",
    "total_grad",
    "adam_step",
    "warmstart_loss",
    "warmstart_grad",
]


@dataclass(frozen=True)
class VariationalParams:
    mu: np.ndarray
    rho: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.rho)

    def draw(self, z) -> np.ndarray:
        return self.mu + np.exp(self.rho) * z


@dataclass(frozen=True)
class GradSpec:
    mu: np.ndarray
    rho: np.ndarray

    def __add__(self, other: "GradSpec") -> "GradSpec":
        return GradSpec(self.mu + other.mu, self.rho + other.rho)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.rho)))


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray  # stacked first moments for (mu, rho)
    v: np.ndarray  # stacked second moments
    step: int = 0
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: VariationalParams, lr: float = 0.1, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        shape = (2,) + np.shape(params.mu)
        return cls(np.zeros(shape), np.zeros(shape), 0, lr, beta1, beta2, eps)


def _mc_mean(a: np.ndarray, params: VariationalParams) -> np.ndarray:
    if a.ndim == np.ndim(params.mu) + 1:
        return a.mean(axis=0)
    return a


def _strict_check(strict: bool, *arrays) -> None:
    if strict and not all(np.all(np.isfinite(a)) for a in arrays):
        raise NumericError("non-finite value in gradient computation")


def kl_iso(params: VariationalParams, mean, var: float):
    """``KL(N(mu, diag e^{2 rho}) || N(mean, var I))`` and its gradient."""
    if not var > 0:
        raise ParameterError(f"reference variance must be positive, got {var}")
    diff = params.mu - mean
    e2 = np.exp(2.0 * params.rho)
    value = np.sum(-params.rho + 0.5 * math.log(var) + (e2 + diff**2) / (2.0 * var) - 0.5, axis=-1)
    return value, GradSpec(diff / var, -1.0 + e2 / var)


def _pullback(denoiser, ell: int, x, cotangent):
    """``J^T cotangent(m(x))`` for the denoiser ``m`` at index ``ell``, fused when supported."""
    fused = getattr(denoiser, "value_and_vjp", None)
    if fused is not None:
        return fused(ell, x, cotangent)[1]
    return denoiser.vjp(ell, x, cotangent(denoiser.value(ell, x)))


def guidance_loss(params: VariationalParams, z, ell: int, denoiser, lik) -> np.ndarray:
    """Single-draw estimate of ``-log p(y | m_{0|ell}(mu + e^rho z))``."""
    x = params.draw(z)
    return _mc_mean(-lik.loglik(denoiser.value(ell, x))[..., None], params)[..., 0]


def guidance_grad(params: VariationalParams, z, ell: int, denoiser, lik, strict: bool = False) -> GradSpec:
    """Reparameterised gradient of :func:`guidance_loss` w.r.t. ``(mu, rho)``."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != np.shape(params.mu)[-1]:
        raise ParameterError("z and params differ in dimension")
    scale = np.exp(params.rho)
    x = params.mu + scale * z
    h = _pullback(denoiser, ell, x, lik.grad_loglik)
    grad = GradSpec(_mc_mean(-h, params), _mc_mean(-h * scale * z, params))
    _strict_check(strict, grad.mu, grad.rho)
    return grad


def total_loss(params: VariationalParams, z, ell: int, mean, var: float, denoiser, lik) -> np.ndarray:
    return guidance_loss(params, z, ell, denoiser, lik) + kl_iso(params, mean, var)[0]


def total_grad(params: VariationalParams, z, ell: int, mean, var: float, denoiser, lik,
               strict: bool = False) -> GradSpec:
    """Gradient of the midpoint loss: guidance term plus KL to the DDPM transition ``N(mean, var I)``."""
    return guidance_grad(params, z, ell, denoiser, lik, strict=strict) + kl_iso(params, mean, var)[1]


def adam_step(state: AdamState, grad: GradSpec, params: VariationalParams) -> tuple[AdamState, VariationalParams]:
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    m = state.m * b1
    m[0] += (1.0 - b1) * grad.mu
    m[1] += (1.0 - b1) * grad.rho
    v = state.v * b2
    v[0] += (1.0 - b2) * np.square(grad.mu)
    v[1] += (1.0 - b2) * np.square(grad.rho)
    # bias corrections folded into the step size and epsilon (algebraically identical)
    corr = math.sqrt(1.0 - b2**t)
    denom = np.sqrt(v)
    denom += state.eps * corr
    upd = np.divide(m, denom, out=denom)
    upd *= state.lr * corr / (1.0 - b1**t)
    new = VariationalParams(params.mu - upd[0], params.rho - upd[1])
    return replace(state, m=m, v=v, step=t), new


def _warmstart_ratio(sched: NoiseSchedule, ell: int) -> tuple[float, float]:
    if ell <= 1:
        raise ParameterError(f"warm start needs ell_k > 1, got {ell}")
    r = sched.alpha(ell) / sched.alpha(1)
    return r, 1.0 - r


def warmstart_loss(params: VariationalParams, z, ell: int, x_ell, denoiser, lik, sched: NoiseSchedule) -> np.ndarray:
    """Proxy of ``KL(lambda || pi_{1|ell}(. | x_ell))`` with exact score of ``q_1``."""
    r, c = _warmstart_ratio(sched, ell)
    trans = np.sum(-params.rho, axis=-1) + (
        np.sum((x_ell - math.sqrt(r) * params.mu) ** 2, axis=-1) + r * np.sum(np.exp(2.0 * params.rho), axis=-1)
    ) / (2.0 * c)
    x1 = params.draw(z)
    rep = -(lik.loglik(x1) + denoiser.log_marginal(1, x1))
    return trans + _mc_mean(rep[..., None], params)[..., 0]


def warmstart_grad(params: VariationalParams, z, ell: int, x_ell, denoiser, lik, sched: NoiseSchedule,
                   strict: bool = False) -> GradSpec:
    """Gradient of :func:`warmstart_loss` for the auxiliary Gaussian at index 1."""
    r, c = _warmstart_ratio(sched, ell)
    z = np.asarray(z, dtype=float)
    scale = np.exp(params.rho)
    g_mu = -math.sqrt(r) * (x_ell - math.sqrt(r) * params.mu) / c
    g_rho = -1.0 + r * scale**2 / c
    x1 = params.mu + scale * z
    s = lik.grad_loglik(x1) + denoiser.score(1, x1)
    grad = GradSpec(g_mu - _mc_mean(s, params), g_rho - _mc_mean(s * scale * z, params))
    _strict_check(strict, grad.mu, grad.rho)
    return grad
