"""Sliced Wasserstein between sample sets and exact W2 between Gaussians."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

__all__ = ["random_directions", "sliced_wasserstein", "gaussian_w2", "sqrtm_psd"]


def random_directions(d: int, n_slices: int, rng: np.random.Generator) -> np.ndarray:
    """``n_slices`` uniform unit vectors in ``R^d`` as rows."""
    if n_slices < 1:
        raise ParameterError("n_slices must be >= 1")
    theta = rng.standard_normal((n_slices, d))
    return theta / np.linalg.norm(theta, axis=1, keepdims=True)


def _as_samples(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError(f"{name} must be a non-empty (N, d) array")
    if not np.all(np.isfinite(X)):
        raise ParameterError(f"{name} contains non-finite rows; drop diverged chains first")
    return X


def _quantiles(proj: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Empirical quantile function per column, at levels strictly inside (0, 1)."""
    srt = np.sort(proj, axis=0)
    idx = np.minimum(np.floor(levels * srt.shape[0]).astype(int), srt.shape[0] - 1)
    return srt[idx]


def sliced_wasserstein(X, Y, n_slices: int = 2000, rng: np.random.Generator | None = None, *,
                       order: float = 2.0, aggregate: str = "rms", directions: np.ndarray | None = None) -> float:
    """Monte Carlo sliced Wasserstein distance of order ``order``.

    ``aggregate="rms"`` returns ``(mean_s W_p(s)^p)^{1/p}``; ``"mean"`` returns the
    plain average of the per-slice distances. Unequal sample counts use exact
    1-D transport between the two empirical quantile functions.
    """
    X = _as_samples(X, "X")
    Y = _as_samples(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ParameterError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if order < 1:
        raise ParameterError("order must be >= 1")
    if aggregate not in ("rms", "mean"):
        raise ParameterError(f"unknown aggregate {aggregate!r}")
    if directions is None:
        if rng is None:
            raise ParameterError("need either rng or directions")
        directions = random_directions(X.shape[1], n_slices, rng)
    px, py = X @ directions.T, Y @ directions.T
    if X.shape[0] == Y.shape[0]:
        diff = np.abs(np.sort(px, axis=0) - np.sort(py, axis=0))
        cost = np.mean(diff**order, axis=0)
    else:
        # merge the two step functions' breakpoints; exact for empirical measures
        levels = np.union1d(np.arange(1, X.shape[0] + 1) / X.shape[0], np.arange(1, Y.shape[0] + 1) / Y.shape[0])
        edges = np.concatenate([[0.0], levels])
        widths = np.diff(edges)
        # the quantile functions are constant on each interval; probe its midpoint
        mid = 0.5 * (edges[:-1] + edges[1:])
        diff = np.abs(_quantiles(px, mid) - _quantiles(py, mid))
        cost = widths @ diff**order
    if aggregate == "rms":
        return float(np.mean(cost) ** (1.0 / order))
    return float(np.mean(cost ** (1.0 / order)))


def _check_cov(S, name: str) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1]:
        raise ParameterError(f"{name} must be square")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ParameterError(f"{name} is not symmetric")
    return 0.5 * (S + S.T)


def sqrtm_psd(S: np.ndarray) -> np.ndarray:
    """Symmetric square root, clamping round-off negative eigenvalues to 0."""
    w, U = np.linalg.eigh(S)
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def gaussian_w2(m1, S1, m2, S2) -> float:
    """``W2(N(m1, S1), N(m2, S2))`` by the Bures formula."""
    S1 = _check_cov(S1, "S1")
    S2 = _check_cov(S2, "S2")
    m1, m2 = np.atleast_1d(np.asarray(m1, dtype=float)), np.atleast_1d(np.asarray(m2, dtype=float))
    if not m1.shape == m2.shape == S1.shape[:1] == S2.shape[:1]:
        raise ParameterError("mean/covariance dimensions disagree")
    r1 = sqrtm_psd(S1)
    cross = np.linalg.eigvalsh(0.5 * ((r1 @ S2 @ r1) + (r1 @ S2 @ r1).T))
    bures = np.trace(S1) + np.trace(S2) - 2.0 * np.sum(np.sqrt(np.clip(cross, 0.0, None)))
    return float(np.sqrt(max(np.sum((m1 - m2) ** 2) + bures, 0.0)))
