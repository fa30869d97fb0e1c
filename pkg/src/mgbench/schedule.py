"""Discrete DDPM time grid, forward/bridge coefficients and midpoint plans.

Indices ``k`` always refer to the coarse grid ``0..n``; ``alphas[k]`` is the
cumulative signal level at fine step ``t_grid[k]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError

__all__ = [
    "NoiseSchedule",
    "BridgeParams",
    "MidpointPlan",
    "build_schedule",
    "forward_coeffs",
    "bridge_params",
    "bridge_sample",
    "midpoint_plan",
    "plan_from_sequence",
    "half_plan",
    "piecewise_plan",
]


@dataclass(frozen=True)
class NoiseSchedule:
    alphas: np.ndarray
    t_grid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float)
        if alphas.ndim != 1 or alphas.size < 2:
            raise ParameterError("alphas must be a 1-D sequence of length n + 1 >= 2")
        if alphas[0] != 1.0:
            raise ParameterError(f"alpha_0 must equal 1, got {alphas[0]!r}")
        if np.any(alphas <= 0) or np.any(np.diff(alphas) >= 0):
            raise ParameterError("alphas must be positive and strictly decreasing")
        if alphas[-1] > 1e-3:
            raise ParameterError(f"alpha_n = {alphas[-1]:.3g} exceeds 1e-3; the chain would not start from N(0, I)")
        t_grid = np.arange(alphas.size) if self.t_grid is None else np.asarray(self.t_grid, dtype=int)
        if t_grid.shape != alphas.shape:
            raise ParameterError("t_grid and alphas must have the same length")
        alphas.setflags(write=False)
        t_grid.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "t_grid", t_grid)

    @property
    def n(self) -> int:
        return self.alphas.size - 1

    @property
    def v(self) -> np.ndarray:
        return 1.0 - self.alphas

    def alpha(self, k: int) -> float:
        return float(self.alphas[k])

    def var(self, k: int) -> float:
        return float(1.0 - self.alphas[k])

    def check_index(self, *ks: int) -> None:
        for k in ks:
            if not 0 <= k <= self.n:
                raise IndexError(f"diffusion index {k} outside [0, {self.n}]")


def build_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02, n: int = 300) -> NoiseSchedule:
    """Linear-beta DDPM schedule on ``T`` fine steps, evenly subsampled to ``n`` steps.

    ``alpha_bar_t = prod_{s <= t} (1 - beta_s)`` with ``alpha_bar_0 = 1``; the
    coarse grid is ``t_k = round(k T / n)``.
    """
    if not (0 < beta_min <= beta_max < 1):
        raise ParameterError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    if not (1 <= n <= T):
        raise ParameterError(f"need 1 <= n <= T, got n={n}, T={T}")
    betas = np.linspace(beta_min, beta_max, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    t_grid = np.round(np.linspace(0, T, n + 1)).astype(int)
    return NoiseSchedule(alphas=alpha_bar[t_grid], t_grid=t_grid)


def forward_coeffs(s: NoiseSchedule, j: int, k: int) -> tuple[float, float]:
    """Scale and variance of ``q_{k|j}(x_k | x_j) = N(scale x_j, var I)``."""
    s.check_index(j, k)
    if j > k:
        raise IndexError(f"forward transition needs j <= k, got j={j}, k={k}")
    ratio = s.alphas[k] / s.alphas[j]
    return math.sqrt(ratio), float(1.0 - ratio)


@dataclass(frozen=True)
class BridgeParams:
    """Gaussian bridge ``N(w_lo x_lo + w_hi x_hi, var I)``."""

    w_lo: float
    w_hi: float
    var: float

    def mean(self, x_lo, x_hi):
        return self.w_lo * np.asarray(x_lo) + self.w_hi * np.asarray(x_hi)


def bridge_params(s: NoiseSchedule, j: int, ell: int, k: int) -> BridgeParams:
    """Law of ``x_ell`` given ``(x_j, x_k)`` under the forward process."""
    s.check_index(j, ell, k)
    if not (j <= ell <= k and j < k):
        raise IndexError(f"bridge needs j <= ell <= k and j < k, got ({j}, {ell}, {k})")
    if ell == j:
        return BridgeParams(1.0, 0.0, 0.0)
    if ell == k:
        return BridgeParams(0.0, 1.0, 0.0)
    a_j, a_l, a_k = s.alphas[j], s.alphas[ell], s.alphas[k]
    den = 1.0 - a_k / a_j
    w_lo = math.sqrt(a_l / a_j) * (1.0 - a_k / a_l) / den
    w_hi = math.sqrt(a_k / a_l) * (1.0 - a_l / a_j) / den
    var = (1.0 - a_l / a_j) * (1.0 - a_k / a_l) / den
    return BridgeParams(float(w_lo), float(w_hi), float(max(var, 0.0)))


def bridge_sample(p: BridgeParams, x_lo, x_hi, rng: np.random.Generator) -> np.ndarray:
    x_lo = np.asarray(x_lo, dtype=float)
    x_hi = np.asarray(x_hi, dtype=float)
    if x_lo.shape != x_hi.shape:
        raise ParameterError(f"bridge endpoints differ in shape: {x_lo.shape} vs {x_hi.shape}")
    out = p.mean(x_lo, x_hi)
    if p.var > 0:
        out = out + math.sqrt(p.var) * rng.standard_normal(out.shape)
    return out


@dataclass(frozen=True)
class MidpointPlan:
    """Midpoint indices; ``ell[k]`` for ``k = 1..n`` (``ell[0]`` is unused and 0)."""

    ell: np.ndarray
    eta: float | None = None
    tag: str = "custom"

    def __post_init__(self):
        ell = np.asarray(self.ell, dtype=int)
        n = ell.size - 1
        if n < 1:
            raise ParameterError("a plan needs at least one step")
        if ell[n] != n:
            raise ParameterError(f"plan must end with ell_n = n = {n}, got {ell[n]}")
        if n >= 2 and ell[1] != 1:
            raise ParameterError(f"plan must start with ell_1 = 1, got {ell[1]}")
        ks = np.arange(1, n)
        if np.any(ell[1:n] < 1) or np.any(ell[1:n] > ks):
            bad = int(ks[(ell[1:n] < 1) | (ell[1:n] > ks)][0])
            raise ParameterError(f"plan violates 1 <= ell_k <= k at k={bad} (ell_k={ell[bad]})")
        ell = ell.copy()
        ell[0] = 0
        ell.setflags(write=False)
        object.__setattr__(self, "ell", ell)

    @property
    def n(self) -> int:
        return self.ell.size - 1

    def __getitem__(self, k: int) -> int:
        return int(self.ell[k])


def midpoint_plan(n: int, eta: float) -> MidpointPlan:
    """``ell_k = clamp(floor(eta k), 1, k)`` for ``k < n`` and ``ell_n = n``."""
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}")
    k = np.arange(n + 1)
    # the 1e-9 guards floor() against products like 0.29 * 100 = 28.999...
    ell = np.clip(np.floor(eta * k + 1e-9).astype(int), 1, np.maximum(k, 1))
    ell[n] = n
    return MidpointPlan(ell=ell, eta=float(eta), tag=f"{eta:g}")


def plan_from_sequence(ell: Sequence[int], tag: str = "custom") -> MidpointPlan:
    """Plan from an explicit ``(ell_1, ..., ell_n)`` sequence."""
    return MidpointPlan(ell=np.concatenate([[0], np.asarray(ell, dtype=int)]), tag=tag)


def half_plan(n: int) -> MidpointPlan:
    """``ell_k = floor(k / 2)`` clamped to ``ell_1 = 1``."""
    k = np.arange(n + 1)
    ell = np.maximum(k // 2, 1)
    ell[n] = n
    return MidpointPlan(ell=ell, tag="half")


def piecewise_plan(n: int) -> MidpointPlan:
    """``floor(k/2)`` for ``k >= floor(n/2)``, identity below (DPS-like late steps)."""
    k = np.arange(n + 1)
    ell = np.where(k >= n // 2, np.maximum(k // 2, 1), np.maximum(k, 1))
    ell[n] = n
    return MidpointPlan(ell=ell, tag="piecewise")
