"""Posterior samplers over a denoiser and a likelihood.

All samplers run ``count`` independent chains vectorised along the first axis
and draw every random number from the single generator they are given, so a
fixed generator state gives bit-identical output.

Denoiser contract: ``value(k, x)``, ``vjp(k, x, u)``; the warm-start variant
additionally needs ``score(k, x)`` (see :class:`mgbench.priors.ExactDenoiser`).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .likelihood import LinearGaussianLikelihood, MagnitudeLikelihood
from .schedule import MidpointPlan, NoiseSchedule, bridge_params, bridge_sample
from .variational import (
    AdamState,
    VariationalParams,
    adam_step,
    total_grad,
    warmstart_grad,
)

__all__ = [
    "GradStepRule",
    "MgpsConfig",
    "DpsConfig",
    "PgdmConfig",
    "ChainResult",
    "mgps_sample",
    "warm_start_step",
    "dps_sample",
    "pgdm_sample",
]


@dataclass(frozen=True)
class GradStepRule:
    """Gradient steps per denoising step.

    ``high`` steps for the last ``tail`` indices (``k >= n - tail``) and
    whenever ``k % period == 0``; ``base`` steps otherwise.
    """

    base: int = 2
    high: int = 20
    tail: int = 5
    period: int = 10

    def __post_init__(self):
        if self.base < 1 or self.high < 1 or self.period < 1 or self.tail < 0:
            raise ParameterError(f"invalid gradient-step rule {self}")

    @classmethod
    def uniform(cls, m: int) -> "GradStepRule":
        return cls(base=m, high=m, tail=0, period=1)

    def count(self, k: int, n: int) -> int:
        if k >= n - self.tail or k % self.period == 0:
            return self.high
        return self.base


@dataclass(frozen=True)
class MgpsConfig:
    plan: MidpointPlan
    grad_steps: GradStepRule = field(default_factory=GradStepRule)
    lr: float = 0.1
    warm_start: int | None = None
    n_mc: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError("learning rate must be positive")
        if self.n_mc < 1:
            raise ParameterError("n_mc must be >= 1")
        if self.warm_start is not None and not 1 <= self.warm_start <= self.plan.n:
            raise ParameterError(f"warm-start threshold must lie in [1, {self.plan.n}]")


@dataclass(frozen=True)
class DpsConfig:
    zeta: float = 1.0
    eps: float = 1e-12

    def __post_init__(self):
        if not self.zeta >= 0:
            raise ParameterError(f"zeta must be nonnegative, got {self.zeta}")


@dataclass(frozen=True)
class PgdmConfig:
    """``guidance="gaussian"`` uses ``(sigma_y^2 I + v_{k+1} A A^T)^{-1}``; ``"pinv"`` uses ``(A A^T)^+``."""

    weight: str = "sqrt_prod"
    guidance: str = "gaussian"

    def __post_init__(self):
        if self.weight not in ("sqrt_prod", "sqrt_alpha"):
            raise ParameterError(f"unknown PGDM weight rule {self.weight!r}")
        if self.guidance not in ("gaussian", "pinv"):
            raise ParameterError(f"unknown PGDM guidance {self.guidance!r}")


@dataclass
class ChainResult:
    """Final states of a batch of chains.

    ``diverged[i]`` is True iff chain ``i`` produced a non-finite value; its
    row of ``x0`` is then NaN.
    """

    x0: np.ndarray
    diverged: np.ndarray
    wall_time: float
    trace: list[tuple[int, np.ndarray]] | None = None

    @property
    def n_diverged(self) -> int:
        return int(self.diverged.sum())


class _Chains:
    """Bookkeeping shared by the samplers: divergence mask, timing, trace."""

    def __init__(self, x: np.ndarray, trace: bool):
        self.start = time.perf_counter()
        self.diverged = np.zeros(x.shape[0], dtype=bool)
        self.trace = [] if trace else None

    def update(self, k: int, *arrays: np.ndarray) -> bool:
        for a in arrays:
            bad = ~np.all(np.isfinite(a.reshape(a.shape[0], -1)), axis=1)
            self.diverged |= bad
        if self.trace is not None:
            self.trace.append((k, arrays[0].copy()))
        return bool(self.diverged.all())

    def result(self, x0: np.ndarray) -> ChainResult:
        self.update(0, x0)
        x0 = x0.copy()
        x0[self.diverged] = np.nan
        return ChainResult(x0, self.diverged.copy(), time.perf_counter() - self.start, self.trace)


def _init_noise(denoiser, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise ParameterError("count must be >= 1")
    return rng.standard_normal((count, denoiser.dim))


def _draw_z(rng: np.random.Generator, n_mc: int, shape) -> np.ndarray:
    return rng.standard_normal(shape if n_mc == 1 else (n_mc,) + shape)


def _optimize(params, steps, grad_fn, lr, n_mc, rng):
    state = AdamState.init(params, lr=lr)
    for _ in range(steps):
        z = _draw_z(rng, n_mc, params.mu.shape)
        state, params = adam_step(state, grad_fn(params, z), params)
    return params


def warm_start_step(k: int, ell: int, x_ell_hat: np.ndarray, x_kplus1: np.ndarray, steps: int, denoiser, lik,
                    sched: NoiseSchedule, rng: np.random.Generator, lr: float = 0.1, n_mc: int = 1):
    """Refine through an auxiliary Gaussian at index 1, then bridge back to ``k``.

    Returns ``(x_k, x1_hat)``.
    """
    init = bridge_params(sched, 0, 1, ell)
    mu = init.mean(denoiser.value(ell, x_ell_hat), x_ell_hat)
    params = VariationalParams(mu, np.full_like(mu, 0.5 * math.log(init.var)))
    params = _optimize(
        params, steps,
        lambda p, z: warmstart_grad(p, z, ell, x_ell_hat, denoiser, lik, sched),
        lr, n_mc, rng,
    )
    x1_hat = params.draw(rng.standard_normal(mu.shape))
    x_k = bridge_sample(bridge_params(sched, 1, k, k + 1), x1_hat, x_kplus1, rng)
    return x_k, x1_hat


def mgps_sample(denoiser, lik, sched: NoiseSchedule, cfg: MgpsConfig, rng: np.random.Generator,
                count: int = 1, trace: bool = False) -> ChainResult:
    """Midpoint-guidance posterior sampling, with the optional warm start for ``k >= cfg.warm_start``."""
    n = sched.n
    plan = cfg.plan
    if plan.n != n:
        raise ParameterError(f"plan has {plan.n} steps, schedule has {n}")
    with np.errstate(all="ignore"):
        x = _init_noise(denoiser, count, rng)
        chains = _Chains(x, trace)
        x0_hat = denoiser.value(n, x)
        for k in range(n - 1, 0, -1):
            ell = plan[k]
            ddpm = bridge_params(sched, 0, ell, k + 1)
            # initialise from the previous midpoint's denoised estimate
            mu = ddpm.mean(x0_hat, x)
            params = VariationalParams(mu, np.full_like(mu, 0.5 * math.log(ddpm.var)))
            target = ddpm.mean(denoiser.value(k + 1, x), x)
            params = _optimize(
                params, cfg.grad_steps.count(k, n),
                lambda p, z: total_grad(p, z, ell, target, ddpm.var, denoiser, lik),
                cfg.lr, cfg.n_mc, rng,
            )
            x_ell = params.draw(rng.standard_normal(mu.shape))
            if cfg.warm_start is not None and k >= cfg.warm_start and ell > 1:
                x, x0_hat = warm_start_step(k, ell, x_ell, x, cfg.grad_steps.count(k, n), denoiser, lik, sched,
                                            rng, lr=cfg.lr, n_mc=cfg.n_mc)
            else:
                x = bridge_sample(bridge_params(sched, ell, k, k + 1), x_ell, x, rng)
                x0_hat = denoiser.value(ell, x_ell)
            if chains.update(k, x, x0_hat):
                break
        return chains.result(denoiser.value(1, x))


def _ddpm_step(denoiser, sched: NoiseSchedule, k: int, x: np.ndarray, rng):
    """Unconditional transition ``p_{k|k+1}``; returns the draw and ``m_{0|k+1}(x)``."""
    x0 = denoiser.value(k + 1, x)
    return bridge_sample(bridge_params(sched, 0, k, k + 1), x0, x, rng), x0


def dps_sample(denoiser, lik, sched: NoiseSchedule, cfg: DpsConfig, rng: np.random.Generator,
               count: int = 1, trace: bool = False) -> ChainResult:
    """DDPM step followed by ``-zeta * grad_x ||y - F(m_{0|k+1}(x))||``."""
    s2 = lik.sigma_y**2
    with np.errstate(all="ignore"):
        x = _init_noise(denoiser, count, rng)
        chains = _Chains(x, trace)
        for k in range(sched.n - 1, 0, -1):
            x_tilde, x0 = _ddpm_step(denoiser, sched, k, x, rng)
            r = lik.residual(x0)
            norm = np.sqrt(np.sum(r * r, axis=-1, keepdims=True) + cfg.eps)
            # grad of ||r|| w.r.t. x0 is -sigma^2 grad log p(y|x0) / ||r||
            g0 = -s2 * lik.grad_loglik(x0) / norm
            x = x_tilde - cfg.zeta * denoiser.vjp(k + 1, x, g0)
            if chains.update(k, x):
                break
        return chains.result(denoiser.value(1, x))


def pgdm_sample(denoiser, lik: LinearGaussianLikelihood, sched: NoiseSchedule, cfg: PgdmConfig,
                rng: np.random.Generator, count: int = 1, trace: bool = False) -> ChainResult:
    """DDPM step plus the Gaussian-integrated guidance with ``v_{0|k} = v_k``."""
    if not isinstance(lik, LinearGaussianLikelihood) or isinstance(lik, MagnitudeLikelihood):
        raise ParameterError("PGDM needs a linear-Gaussian likelihood")
    A = lik.A
    AAt = A @ A.T
    eye = np.eye(lik.dim_y)
    AAt_pinv = np.linalg.pinv(AAt, hermitian=True)
    with np.errstate(all="ignore"):
        x = _init_noise(denoiser, count, rng)
        chains = _Chains(x, trace)
        for k in range(sched.n - 1, 0, -1):
            x_tilde, x0 = _ddpm_step(denoiser, sched, k, x, rng)
            if cfg.guidance == "pinv":
                prec_res = lik.residual(x0) @ AAt_pinv
            else:
                cov = lik.sigma_y**2 * eye + sched.var(k + 1) * AAt
                prec_res = np.linalg.solve(cov, lik.residual(x0).T).T
            g = denoiser.vjp(k + 1, x, prec_res @ A)
            if cfg.weight == "sqrt_prod":
                w = math.sqrt(sched.alpha(k) * sched.alpha(k + 1))
            else:
                w = math.sqrt(sched.alpha(k + 1))
            x = x_tilde + w * g
            if chains.update(k, x):
                break
        return chains.result(denoiser.value(1, x))
