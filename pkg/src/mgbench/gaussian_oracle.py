"""Closed-form moments of the midpoint surrogate for Gaussian priors.

With a Gaussian prior and a linear-Gaussian likelihood every surrogate
transition is affine-Gaussian, so the law of the final sample is Gaussian and
its moments follow from a backward recursion. Internally everything runs in
the prior covariance eigenbasis, where all denoiser Jacobians are diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericError, ParameterError
from .likelihood import LinearGaussianLikelihood, MagnitudeLikelihood
from .metrics import gaussian_w2
from .priors import GaussianPrior
from .schedule import MidpointPlan, NoiseSchedule, bridge_params, midpoint_plan

__all__ = [
    "OracleIntermediates",
    "AffineTransition",
    "SurrogateMoments",
    "Landscape",
    "oracle_intermediates",
    "surrogate_transition",
    "run_moment_recursion",
    "w2_landscape",
    "sample_random_instance",
    "posterior_backward_transition",
    "bridge_marginalized_transition",
]

TERMINAL_MODES = ("delta", "noisy")


@dataclass(frozen=True)
class OracleIntermediates:
    """Pieces of the Gaussian midpoint law ``N(M_tilde x_{k+1} + c_tilde, Gamma)`` at ``ell``."""

    A_hat: np.ndarray
    b: np.ndarray
    H: np.ndarray
    h: np.ndarray
    Gamma: np.ndarray
    M_tilde: np.ndarray
    c_tilde: np.ndarray


@dataclass(frozen=True)
class AffineTransition:
    """``x_k | x_{k+1} ~ N(M x_{k+1} + c, S)``."""

    M: np.ndarray
    c: np.ndarray
    S: np.ndarray

    def apply(self, mu: np.ndarray, Sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.M @ mu + self.c, self.M @ Sigma @ self.M.T + self.S


@dataclass(frozen=True)
class SurrogateMoments:
    mu: np.ndarray
    Sigma: np.ndarray


@dataclass(frozen=True)
class Landscape:
    etas: np.ndarray
    w2: np.ndarray

    @property
    def eta_star(self) -> float:
        return float(self.etas[int(np.argmin(self.w2))])

    @property
    def points(self) -> list[tuple[float, float]]:
        return [(float(e), float(w)) for e, w in zip(self.etas, self.w2)]


def _check_linear(lik) -> None:
    if not isinstance(lik, LinearGaussianLikelihood) or isinstance(lik, MagnitudeLikelihood):
        raise ParameterError("the Gaussian oracle needs a linear-Gaussian likelihood")


class _Rotated:
    """Problem in the prior eigenbasis, caching per-midpoint eigendecompositions."""

    def __init__(self, prior: GaussianPrior, lik: LinearGaussianLikelihood, sched: NoiseSchedule):
        _check_linear(lik)
        if lik.dim != prior.dim:
            raise ParameterError(f"likelihood acts on dimension {lik.dim}, prior has {prior.dim}")
        self.U = prior._evecs
        self.lam = prior._evals
        self.m = self.U.T @ prior.mean
        self.A = lik.A @ self.U
        self.y = lik.y
        self.s2 = lik.sigma_y**2
        self.sched = sched
        self.AtA = self.A.T @ self.A / self.s2
        self.Aty = self.A.T @ self.y / self.s2
        self._eig: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def gains(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal of ``L_k`` and the offset ``o_k``."""
        a = self.sched.alpha(k)
        den = a * self.lam + (1.0 - a)
        return math.sqrt(a) * self.lam / den, (1.0 - a) / den * self.m

    def _likelihood_eig(self, ell: int):
        # eigendecomposition of D A^T A D / s2 with D = L_ell, shared by all k with this midpoint
        if ell not in self._eig:
            g, _ = self.gains(ell)
            w, Q = np.linalg.eigh(g[:, None] * self.AtA * g[None, :])
            self._eig[ell] = (np.clip(w, 0.0, None), Q)
        return self._eig[ell]

    def intermediates(self, k: int, ell: int, full: bool = True):
        g_l, o_l = self.gains(ell)
        g_k, o_k = self.gains(k + 1)
        bb = bridge_params(self.sched, 0, ell, k + 1)
        if not bb.var > 0:
            raise NumericError(f"degenerate midpoint bridge at k={k}, ell={ell}")
        w, Q = self._likelihood_eig(ell)
        gam_eig = 1.0 / (1.0 / bb.var + w)
        Gamma = (Q * gam_eig) @ Q.T
        Hd = bb.w_lo * g_k + bb.w_hi
        h = bb.w_lo * o_k
        b = self.A @ o_l
        # A_hat^T (y - b) / s2 with A_hat = A diag(g_l)
        rhs = g_l * (self.Aty - self.A.T @ b / self.s2) + h / bb.var
        M_t = Gamma * (Hd / bb.var)[None, :]
        c_t = Gamma @ rhs
        if not full:
            return Gamma, M_t, c_t
        return OracleIntermediates(self.A * g_l, b, np.diag(Hd), h, Gamma, M_t, c_t)

    def transition(self, k: int, ell: int) -> AffineTransition:
        Gamma, M_t, c_t = self.intermediates(k, ell, full=False)
        br = bridge_params(self.sched, ell, k, k + 1)
        d = M_t.shape[0]
        M = br.w_lo * M_t + br.w_hi * np.eye(d)
        S = br.w_lo**2 * Gamma + br.var * np.eye(d)
        return AffineTransition(M, br.w_lo * c_t, 0.5 * (S + S.T))

    def to_original(self, t: AffineTransition) -> AffineTransition:
        U = self.U
        return AffineTransition(U @ t.M @ U.T, U @ t.c, U @ t.S @ U.T)


def _check_k(plan: MidpointPlan, sched: NoiseSchedule, k: int) -> None:
    if plan.n != sched.n:
        raise ParameterError(f"plan has {plan.n} steps, schedule has {sched.n}")
    if not 1 <= k <= sched.n - 1:
        raise ParameterError(f"k must lie in [1, {sched.n - 1}], got {k}")


def oracle_intermediates(k: int, plan: MidpointPlan, prior: GaussianPrior, lik: LinearGaussianLikelihood,
                         sched: NoiseSchedule) -> OracleIntermediates:
    """Intermediates in the original coordinates."""
    _check_k(plan, sched, k)
    rot = _Rotated(prior, lik, sched)
    it = rot.intermediates(k, plan[k])
    U = rot.U
    return OracleIntermediates(
        A_hat=it.A_hat @ U.T, b=it.b, H=U @ it.H @ U.T, h=U @ it.h,
        Gamma=U @ it.Gamma @ U.T, M_tilde=U @ it.M_tilde @ U.T, c_tilde=U @ it.c_tilde,
    )


def surrogate_transition(k: int, plan: MidpointPlan, prior: GaussianPrior, lik: LinearGaussianLikelihood,
                         sched: NoiseSchedule) -> AffineTransition:
    """Exact law of the surrogate step ``x_{k+1} -> x_k`` for midpoint ``plan[k]``."""
    _check_k(plan, sched, k)
    rot = _Rotated(prior, lik, sched)
    return rot.to_original(rot.transition(k, plan[k]))


def _recursion(rot: _Rotated, plan: MidpointPlan, terminal: str) -> tuple[np.ndarray, np.ndarray]:
    if terminal not in TERMINAL_MODES:
        raise ParameterError(f"terminal must be one of {TERMINAL_MODES}, got {terminal!r}")
    n = rot.sched.n
    d = rot.lam.size
    mu, Sig = np.zeros(d), np.eye(d)
    for k in range(n - 1, 0, -1):
        mu, Sig = rot.transition(k, plan[k]).apply(mu, Sig)
        Sig = 0.5 * (Sig + Sig.T)
    g1, o1 = rot.gains(1)
    mu = g1 * mu + o1
    Sig = g1[:, None] * Sig * g1[None, :]
    if terminal == "noisy":
        a = rot.sched.alpha(1)
        Sig = Sig + np.diag(rot.lam * (1.0 - a) / (a * rot.lam + 1.0 - a))
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(Sig))):
        raise NumericError("moment recursion produced non-finite values")
    return mu, Sig


def run_moment_recursion(plan: MidpointPlan, prior: GaussianPrior, lik: LinearGaussianLikelihood,
                         sched: NoiseSchedule, terminal: str = "delta") -> SurrogateMoments:
    """Mean and covariance of the surrogate's output ``X_0``.

    ``terminal="delta"`` maps ``X_1`` through the denoiser; ``"noisy"`` also adds
    the exact prior variance of ``X_0`` given ``X_1``.
    """
    if plan.n != sched.n:
        raise ParameterError(f"plan has {plan.n} steps, schedule has {sched.n}")
    rot = _Rotated(prior, lik, sched)
    mu, Sig = _recursion(rot, plan, terminal)
    U = rot.U
    Sigma = U @ Sig @ U.T
    return SurrogateMoments(U @ mu, 0.5 * (Sigma + Sigma.T))


def w2_landscape(prior: GaussianPrior, lik: LinearGaussianLikelihood, sched: NoiseSchedule,
                 etas: Sequence[float], terminal: str = "delta") -> Landscape:
    """W2 between the exact posterior and the surrogate output for each ``eta``."""
    etas = np.asarray(etas, dtype=float)
    if etas.size == 0:
        raise ParameterError("eta grid is empty")
    rot = _Rotated(prior, lik, sched)
    post = prior.posterior(lik.A, lik.y, lik.sigma_y)
    # W2 is rotation invariant, so compare in the eigenbasis
    pm, pS = rot.U.T @ post.mean, rot.U.T @ post.cov @ rot.U
    pS = 0.5 * (pS + pS.T)
    w2 = np.empty(etas.size)
    for i, eta in enumerate(etas):
        mu, Sig = _recursion(rot, midpoint_plan(sched.n, float(eta)), terminal)
        w2[i] = gaussian_w2(pm, pS, mu, Sig)
    return Landscape(etas, w2)


def sample_random_instance(d: int, rng: np.random.Generator, return_factor: bool = False):
    """Random Gaussian prior and linear likelihood.

    ``Sigma = lbar2 I + G G^T`` with ``G`` standard normal with unit-norm
    columns and ``lbar2`` the mean squared singular value of ``G``; ``d_y`` is
    uniform on ``[ceil(d/10), d]``, ``A`` standard normal, ``sigma_y`` uniform
    on ``[0.1, 0.5]``, ``m`` standard normal and ``y = A x* + sigma_y eps`` with
    ``x*`` drawn from the prior. Returns ``(prior, lik)`` or, with
    ``return_factor``, ``(prior, lik, G)``.
    """
    if d < 10:
        raise ParameterError(f"random instances need d >= 10, got {d}")
    G = rng.standard_normal((d, d))
    G /= np.linalg.norm(G, axis=0, keepdims=True)
    lbar2 = float(np.mean(np.linalg.svd(G, compute_uv=False) ** 2))
    prior = GaussianPrior(rng.standard_normal(d), lbar2 * np.eye(d) + G @ G.T)
    d_y = int(rng.integers(math.ceil(d / 10), d + 1))
    A = rng.standard_normal((d_y, d))
    sigma_y = float(rng.uniform(0.1, 0.5))
    x_star = prior.sample(1, rng)[0]
    y = A @ x_star + sigma_y * rng.standard_normal(d_y)
    lik = LinearGaussianLikelihood(A, y, sigma_y)
    return (prior, lik, G) if return_factor else (prior, lik)


def _forward_marginal(post: GaussianPrior, sched: NoiseSchedule, j: int) -> tuple[np.ndarray, np.ndarray]:
    if j == 0:
        return post.mean, post.cov
    return post.marginal(sched, j)


def posterior_backward_transition(post: GaussianPrior, sched: NoiseSchedule, j: int, k: int) -> AffineTransition:
    """Law of ``X_j | X_k`` when the forward process starts from ``post``."""
    sched.check_index(j, k)
    if not j < k:
        raise ParameterError(f"need j < k, got ({j}, {k})")
    mu_j, C_j = _forward_marginal(post, sched, j)
    r = sched.alpha(k) / sched.alpha(j)
    s, tau = math.sqrt(r), 1.0 - r
    d = mu_j.size
    gain = np.linalg.solve(s * s * C_j + tau * np.eye(d), s * C_j).T
    S = C_j - s * gain @ C_j
    return AffineTransition(gain, mu_j - s * gain @ mu_j, 0.5 * (S + S.T))


def bridge_marginalized_transition(post: GaussianPrior, sched: NoiseSchedule, ell: int, k: int) -> AffineTransition:
    """``x_{k+1} -> x_k`` obtained by drawing ``x_ell`` from the true backward law, then bridging."""
    if not 0 <= ell <= k:
        raise ParameterError(f"need 0 <= ell <= k, got ell={ell}, k={k}")
    br = bridge_params(sched, ell, k, k + 1)
    if ell == k:
        return posterior_backward_transition(post, sched, k, k + 1)
    t = posterior_backward_transition(post, sched, ell, k + 1)
    d = t.c.size
    return AffineTransition(br.w_lo * t.M + br.w_hi * np.eye(d), br.w_lo * t.c, br.w_lo**2 * t.S + br.var * np.eye(d))
