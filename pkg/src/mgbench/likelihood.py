"""Gaussian observation models ``y = F(x) + sigma_y eps``.

``F`` is either linear (``A x``) or the elementwise magnitude ``|A x|``, a
small phase-retrieval-like nonlinearity. Methods broadcast over leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

__all__ = ["LinearGaussianLikelihood", "MagnitudeLikelihood", "make_likelihood"]


@dataclass(frozen=True)
class LinearGaussianLikelihood:
    A: np.ndarray
    y: np.ndarray
    sigma_y: float

    kind = "linear"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if y.shape != (A.shape[0],):
            raise ParameterError(f"y has shape {y.shape} but A has {A.shape[0]} rows")
        if not self.sigma_y > 0:
            raise ParameterError(f"sigma_y must be positive, got {self.sigma_y}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma_y", float(self.sigma_y))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def dim_y(self) -> int:
        return self.A.shape[0]

    def forward(self, x) -> np.ndarray:
        return np.asarray(x) @ self.A.T

    def residual(self, x) -> np.ndarray:
        return self.y - self.forward(x)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ParameterError(f"x has trailing dimension {x.shape[-1]}, expected {self.dim}")
        return x

    def loglik(self, x) -> np.ndarray:
        r = self.residual(self._check(x))
        s2 = self.sigma_y**2
        return -0.5 * np.sum(r * r, axis=-1) / s2 - 0.5 * self.dim_y * math.log(2.0 * math.pi * s2)

    def grad_loglik(self, x) -> np.ndarray:
        return self.residual(self._check(x)) @ self.A / self.sigma_y**2


@dataclass(frozen=True)
class MagnitudeLikelihood(LinearGaussianLikelihood):
    """``y = |A x| + sigma_y eps``; the gradient uses ``sign(0) = 0``."""

    kind = "magnitude"

    def forward(self, x) -> np.ndarray:
        return np.abs(np.asarray(x) @ self.A.T)

    def grad_loglik(self, x) -> np.ndarray:
        ax = self._check(x) @ self.A.T
        return (np.sign(ax) * (self.y - np.abs(ax))) @ self.A / self.sigma_y**2


def make_likelihood(kind: str, A, y, sigma_y: float) -> LinearGaussianLikelihood:
    if kind == "linear":
        return LinearGaussianLikelihood(A, y, sigma_y)
    if kind == "magnitude":
        return MagnitudeLikelihood(A, y, sigma_y)
    raise ParameterError(f"unknown likelihood kind {kind!r} (expected 'linear' or 'magnitude')")
