"""Closed-form priors with exact denoisers.

Both priors expose the same surface, evaluated at a diffusion index ``k`` of a
:class:`~mgbench.schedule.NoiseSchedule`:

* ``log_marginal`` -- ``log q_k(x)``
* ``score``        -- ``grad log q_k(x)``
* ``denoise``      -- ``m_{0|k}(x) = E[X_0 | X_k = x]``
* ``denoise_vjp``  -- ``u^T dm_{0|k}/dx``

Every function broadcasts over leading axes of ``x`` (shape ``(..., d)``).
:class:`ExactDenoiser` binds a prior to a schedule and is what samplers use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import NumericError, ParameterError
from .schedule import NoiseSchedule

__all__ = [
    "GaussianPrior",
    "GaussianMixturePrior",
    "GaussianMixturePosterior",
    "ExactDenoiser",
    "gm_exact_posterior",
    "gauss_exact_posterior",
    "grid_means",
]

_LOG2PI = math.log(2.0 * math.pi)


def _as_matrix(A, d: int) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != d:
        raise ParameterError(f"A has {A.shape[1]} columns, prior dimension is {d}")
    return A


@dataclass(frozen=True)
class GaussianPrior:
    """``N(mean, cov)`` with ``cov`` symmetric positive definite."""

    mean: np.ndarray
    cov: np.ndarray
    _evals: np.ndarray = field(init=False, repr=False, compare=False)
    _evecs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.size
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ParameterError(f"mean of length {d} needs a {d}x{d} covariance, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-10 * max(1.0, np.abs(cov).max())):
            raise ParameterError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        evals, evecs = np.linalg.eigh(cov)
        if evals[0] <= 0:
            raise ParameterError(f"covariance is not positive definite (min eigenvalue {evals[0]:.3g})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_evals", evals)
        object.__setattr__(self, "_evecs", evecs)

    @property
    def dim(self) -> int:
        return self.mean.size

    def _rotate(self, x, diag) -> np.ndarray:
        # U diag(.) U^T x, row-vector convention
        return ((np.asarray(x) @ self._evecs) * diag) @ self._evecs.T

    def _gains(self, alpha: float) -> tuple[np.ndarray, np.ndarray]:
        """Eigen-gains of the denoiser's linear part and of its offset."""
        lam = self._evals
        den = alpha * lam + (1.0 - alpha)
        return math.sqrt(alpha) * lam / den, (1.0 - alpha) / den

    def denoiser_affine(self, sched: NoiseSchedule, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``(L, o)`` with ``m_{0|k}(x) = L x + o``; ``L = (sqrt(a_k)/v_k) Sigma_{0|k}``."""
        sched.check_index(k)
        gain, off = self._gains(sched.alpha(k))
        U = self._evecs
        return (U * gain) @ U.T, (U * off) @ (U.T @ self.mean)

    def denoise(self, sched: NoiseSchedule, k: int, x) -> np.ndarray:
        sched.check_index(k)
        gain, off = self._gains(sched.alpha(k))
        return self._rotate(x, gain) + self._rotate(self.mean, off)

    def denoise_vjp(self, sched: NoiseSchedule, k: int, x, u) -> np.ndarray:
        sched.check_index(k)
        gain, _ = self._gains(sched.alpha(k))
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(self._rotate(u, gain), np.broadcast_shapes(np.shape(x), u.shape)).copy()

    def denoise_and_vjp(self, sched: NoiseSchedule, k: int, x, cotangent) -> tuple[np.ndarray, np.ndarray]:
        val = self.denoise(sched, k, x)
        return val, self.denoise_vjp(sched, k, x, cotangent(val))

    def marginal(self, sched: NoiseSchedule, k: int) -> tuple[np.ndarray, np.ndarray]:
        a = sched.alpha(k)
        return math.sqrt(a) * self.mean, a * self.cov + (1.0 - a) * np.eye(self.dim)

    def score(self, sched: NoiseSchedule, k: int, x) -> np.ndarray:
        sched.check_index(k)
        a = sched.alpha(k)
        return -self._rotate(np.asarray(x) - math.sqrt(a) * self.mean, 1.0 / (a * self._evals + 1.0 - a))

    def log_marginal(self, sched: NoiseSchedule, k: int, x) -> np.ndarray:
        sched.check_index(k)
        a = sched.alpha(k)
        var = a * self._evals + 1.0 - a
        r = (np.asarray(x) - math.sqrt(a) * self.mean) @ self._evecs
        return -0.5 * (np.sum(r * r / var, axis=-1) + np.sum(np.log(var)) + self.dim * _LOG2PI)

    def log_pdf(self, x) -> np.ndarray:
        r = (np.asarray(x) - self.mean) @ self._evecs
        return -0.5 * (np.sum(r * r / self._evals, axis=-1) + np.sum(np.log(self._evals)) + self.dim * _LOG2PI)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count < 1:
            raise ParameterError("count must be >= 1")
        z = rng.standard_normal((count, self.dim))
        return self.mean + (z * np.sqrt(self._evals)) @ self._evecs.T

    def posterior(self, A, y, sigma_y: float) -> "GaussianPrior":
        """Exact posterior ``N(m_y, Sigma_y)`` under ``y = A x + sigma_y eps``."""
        if sigma_y <= 0:
            raise ParameterError("sigma_y must be positive")
        A = _as_matrix(A, self.dim)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        U, lam = self._evecs, self._evals
        prec = (U / lam) @ U.T + A.T @ A / sigma_y**2
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ (A.T @ y / sigma_y**2 + (U / lam) @ (U.T @ self.mean))
        return GaussianPrior(mean, cov)


def grid_means(d: int, spacing: float = 8.0, half_width: int = 2) -> np.ndarray:
    """Means ``(s i, s j, s i, s j, ...)`` for ``(i, j)`` on the integer square."""
    rng_ = np.arange(-half_width, half_width + 1)
    ii, jj = np.meshgrid(rng_, rng_, indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    means = np.empty((ii.size, d))
    means[:, 0::2] = spacing * ii[:, None]
    means[:, 1::2] = spacing * jj[:, None]
    return means


@dataclass(frozen=True)
class GaussianMixturePrior:
    """Isotropic mixture ``sum_i w_i N(m_i, sigma_i^2 I)``."""

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        sig = np.broadcast_to(np.asarray(self.sigmas, dtype=float), w.shape).copy()
        if means.shape[0] != w.size:
            raise ParameterError(f"{w.size} weights but {means.shape[0]} means")
        if np.any(w < 0) or abs(w.sum() - 1.0) >= 1e-10:
            raise ParameterError(f"weights must be nonnegative and sum to 1 (sum={w.sum()!r})")
        if np.any(sig <= 0):
            raise ParameterError("component standard deviations must be positive")
        for name, val in (("weights", w), ("means", means), ("sigmas", sig)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_logw", np.log(w))
        object.__setattr__(self, "_sq_norms", np.sum(means**2, axis=1))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def _terms(self, alpha: float, x):
        """Per-component log-terms, variances ``s_i^2`` and the projections ``x . m_i``."""
        x = np.asarray(x, dtype=float)
        s2 = alpha * self.sigmas**2 + (1.0 - alpha)
        xm = x @ self.means.T
        sq = np.sum(x * x, axis=-1)[..., None] - 2.0 * math.sqrt(alpha) * xm + alpha * self._sq_norms
        sq = np.maximum(sq, 0.0)
        logt = self._logw - 0.5 * (sq / s2 + self.dim * (np.log(s2) + _LOG2PI))
        return logt, s2, xm

    def log_marginal(self, sched: NoiseSchedule, k: int, x) -> np.ndarray:
        sched.check_index(k)
        logt, _, _ = self._terms(sched.alpha(k), x)
        return logsumexp(logt, axis=-1)

    def responsibilities(self, sched: NoiseSchedule, k: int, x) -> np.ndarray:
        sched.check_index(k)
        logt, _, _ = self._terms(sched.alpha(k), x)
        return softmax(logt, axis=-1)

    def component_means(self, sched: NoiseSchedule, k: int, x) -> np.ndarray:
        """Per-component ``E[X_0 | X_k = x, component i]``, shape ``(..., C, d)``."""
        a = sched.alpha(k)
        s2 = a * self.sigmas**2 + (1.0 - a)
        x = np.asarray(x, dtype=float)
        c = (math.sqrt(a) * self.sigmas**2 / s2)[:, None]
        return c * x[..., None, :] + ((1.0 - a) / s2)[:, None] * self.means

    def score(self, sched: NoiseSchedule, k: int, x) -> np.ndarray:
        sched.check_index(k)
        a = sched.alpha(k)
        x = np.asarray(x, dtype=float)
        logt, s2, _ = self._terms(a, x)
        rs = softmax(logt, axis=-1) / s2
        return -x * rs.sum(-1, keepdims=True) + math.sqrt(a) * rs @ self.means

    def _resp(self, a: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        logt, s2, _ = self._terms(a, x)
        return softmax(logt, axis=-1), s2

    def _denoise_from(self, a: float, x, r, s2) -> np.ndarray:
        c = math.sqrt(a) * (r @ (self.sigmas**2 / s2))[..., None]
        return c * x + (1.0 - a) * (r / s2) @ self.means

    def _vjp_from(self, a: float, x, u, r, s2) -> np.ndarray:
        v = 1.0 - a
        if v == 0.0:
            return np.broadcast_to(u, np.broadcast_shapes(x.shape, u.shape)).copy()
        sa = math.sqrt(a)
        q = r / s2
        tot = q.sum(-1, keepdims=True)
        # g_i . u = -(x . u - sqrt(a) m_i . u) / s_i^2, with g_i the component scores
        gu = -(np.sum(x * u, axis=-1)[..., None] - sa * (u @ self.means.T)) / s2
        gbar_u = np.sum(r * gu, axis=-1, keepdims=True)
        # Hess u = -tot u + sum_i r_i (g_i . u) g_i - gbar (gbar . u), expanded in x and the means
        rb = q * gu
        hu = -u * tot - x * (rb.sum(-1, keepdims=True) - tot * gbar_u) + sa * ((rb - q * gbar_u) @ self.means)
        return (u + v * hu) / sa

    def denoise(self, sched: NoiseSchedule, k: int, x) -> np.ndarray:
        """Responsibility-weighted average of the per-component posterior means."""
        sched.check_index(k)
        a = sched.alpha(k)
        x = np.asarray(x, dtype=float)
        r, s2 = self._resp(a, x)
        return self._denoise_from(a, x, r, s2)

    def denoise_vjp(self, sched: NoiseSchedule, k: int, x, u) -> np.ndarray:
        """``J^T u`` with ``J = (I + v_k Hess log q_k) / sqrt(alpha_k)``.

        The Hessian is ``-sum_i r_i / s_i^2 I + Cov_r(g_i)`` where ``g_i`` are
        the component scores; J is symmetric.
        """
        sched.check_index(k)
        a = sched.alpha(k)
        x = np.asarray(x, dtype=float)
        r, s2 = self._resp(a, x)
        return self._vjp_from(a, x, np.asarray(u, dtype=float), r, s2)

    def denoise_and_vjp(self, sched: NoiseSchedule, k: int, x, cotangent) -> tuple[np.ndarray, np.ndarray]:
        """``(m(x), J^T cotangent(m(x)))`` sharing one responsibilities pass."""
        sched.check_index(k)
        a = sched.alpha(k)
        x = np.asarray(x, dtype=float)
        r, s2 = self._resp(a, x)
        val = self._denoise_from(a, x, r, s2)
        return val, self._vjp_from(a, x, np.asarray(cotangent(val), dtype=float), r, s2)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count < 1:
            raise ParameterError("count must be >= 1")
        comp = rng.choice(self.n_components, size=count, p=self.weights)
        z = rng.standard_normal((count, self.dim))
        return self.means[comp] + self.sigmas[comp, None] * z

    def posterior(self, A, y, sigma_y: float) -> "GaussianMixturePosterior":
        """Exact posterior mixture under ``y = A x + sigma_y eps``."""
        if sigma_y <= 0:
            raise ParameterError("sigma_y must be positive")
        d = self.dim
        A = _as_matrix(A, d)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape != (A.shape[0],):
            raise ParameterError(f"y has shape {y.shape}, expected ({A.shape[0]},)")
        s2y = sigma_y**2
        # shared eigenbases: A^T A = V diag(e) V^T, A A^T = W diag(f) W^T
        e, V = np.linalg.eigh(A.T @ A)
        f, W = np.linalg.eigh(A @ A.T)
        e, f = np.maximum(e, 0.0), np.maximum(f, 0.0)
        var2 = self.sigmas**2
        # per-component eigenvalues of Sigma_bar_i
        cov_eig = 1.0 / (1.0 / var2[:, None] + e[None, :] / s2y)
        rhs = (A.T @ y)[None, :] / s2y + self.means / var2[:, None]
        means = np.einsum("ij,cj->ci", V, cov_eig * (rhs @ V))
        # log N(y; A m_i, s2y I + sigma_i^2 A A^T)
        pred_eig = s2y + var2[:, None] * f[None, :]
        res = (y[None, :] - self.means @ A.T) @ W
        loglik = -0.5 * (np.sum(res**2 / pred_eig, axis=1) + np.sum(np.log(pred_eig), axis=1) + y.size * _LOG2PI)
        logw = self._logw + loglik
        norm = logsumexp(logw)
        if not np.isfinite(norm):
            raise NumericError("posterior mixture weights underflowed to zero")
        covs = np.einsum("ij,cj,kj->cik", V, cov_eig, V)
        return GaussianMixturePosterior(
            weights=np.exp(logw - norm), means=means, covs=covs, _basis=V, _cov_eig=cov_eig
        )


@dataclass(frozen=True)
class GaussianMixturePosterior:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    _basis: np.ndarray | None = field(default=None, repr=False, compare=False)
    _cov_eig: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-12 * w.size or np.any(w < 0):
            raise ParameterError("posterior weights must be normalized")
        if self._basis is None:
            evals, evecs = np.linalg.eigh(np.asarray(self.covs))
            if np.any(evals <= 0):
                raise ParameterError("posterior covariances must be SPD")
            object.__setattr__(self, "_basis", evecs)
            object.__setattr__(self, "_cov_eig", evals)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def cov(self) -> np.ndarray:
        mu = self.mean()
        dev = self.means - mu
        return np.einsum("c,cij->ij", self.weights, self.covs) + (dev.T * self.weights) @ dev

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count < 1:
            raise ParameterError("count must be >= 1")
        comp = rng.choice(self.weights.size, size=count, p=self.weights)
        z = rng.standard_normal((count, self.dim))
        scale = np.sqrt(self._cov_eig)
        scale = scale[comp] if scale.ndim == 2 else scale
        basis = self._basis
        if basis.ndim == 2:
            return self.means[comp] + (z * scale) @ basis.T
        return self.means[comp] + np.einsum("nij,nj->ni", basis[comp], z * scale)


def gm_exact_posterior(prior: GaussianMixturePrior, A, y, sigma_y: float) -> GaussianMixturePosterior:
    return prior.posterior(A, y, sigma_y)


def gauss_exact_posterior(prior: GaussianPrior, A, y, sigma_y: float) -> GaussianPrior:
    return prior.posterior(A, y, sigma_y)


class ExactDenoiser:
    """Denoiser contract backed by a closed-form prior on a fixed schedule."""

    def __init__(self, prior: GaussianPrior | GaussianMixturePrior, sched: NoiseSchedule):
        self.prior = prior
        self.sched = sched

    @property
    def dim(self) -> int:
        return self.prior.dim

    def value(self, k: int, x) -> np.ndarray:
        return self.prior.denoise(self.sched, k, x)

    def vjp(self, k: int, x, u) -> np.ndarray:
        return self.prior.denoise_vjp(self.sched, k, x, u)

    def value_and_vjp(self, k: int, x, cotangent) -> tuple[np.ndarray, np.ndarray]:
        return self.prior.denoise_and_vjp(self.sched, k, x, cotangent)

    def score(self, k: int, x) -> np.ndarray:
        return self.prior.score(self.sched, k, x)

    def log_marginal(self, k: int, x) -> np.ndarray:
        return self.prior.log_marginal(self.sched, k, x)
