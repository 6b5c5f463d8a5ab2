"""Regularized gradient Gram matrices and elliptical bonuses."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

log = logging.getLogger(__name__)

_MAX_JITTER_ATTEMPTS = 3


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """``M = sum_k w_k g_k g_k^T + ridge * I`` with its lower Cholesky factor."""

    matrix: np.ndarray
    chol: np.ndarray
    ridge: float
    count: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def scaled(self, c: float) -> "GramMatrix":
        """The Gram matrix ``c * M`` (ridge scales too)."""
        if c <= 0:
            raise ValueError("scale must be positive")
        return GramMatrix(c * self.matrix, np.sqrt(c) * self.chol, c * self.ridge, self.count)


def from_matrix(matrix, ridge: float, count: int = 0) -> GramMatrix:
    """Wrap an explicit symmetric positive definite matrix."""
    M = np.array(matrix, dtype=float, copy=True)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("Gram matrix must be square")
    if not np.all(np.isfinite(M)):
        raise ValueError("Gram matrix has non-finite entries")
    M = 0.5 * (M + M.T)
    chol = _cholesky_with_jitter(M, ridge)
    M.setflags(write=False)
    chol.setflags(write=False)
    return GramMatrix(M, chol, float(ridge), int(count))


def _cholesky_with_jitter(M, ridge):
    jitter = 0.0
    step = max(ridge, 1e-12)
    for attempt in range(_MAX_JITTER_ATTEMPTS + 1):
        try:
            return np.linalg.cholesky(M + jitter * np.eye(M.shape[0]))
        except np.linalg.LinAlgError:
            if attempt == _MAX_JITTER_ATTEMPTS:
                raise
            step *= 10.0
            jitter = step
            log.warning("Cholesky failed; retrying with jitter %.3g", jitter)


def accumulate(grads, weights=None, ridge: float = 1.0) -> GramMatrix:
    """Build ``sum_k w_k g_k g_k^T + ridge * I`` from rows of ``grads``."""
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    G = np.atleast_2d(np.asarray(grads, dtype=float))
    K, d = G.shape
    if weights is None:
        w = np.ones(K)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (K,):
            raise ValueError("weights must match the number of gradients")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
    bad = np.flatnonzero(~np.all(np.isfinite(G), axis=1))
    if bad.size:
        raise ValueError(f"non-finite gradient at sample {bad[0]}")
    M = (G * w[:, None]).T @ G + ridge * np.eye(d)
    return from_matrix(M, ridge, K)


def empty(dim: int, ridge: float) -> GramMatrix:
    return accumulate(np.zeros((0, dim)), ridge=ridge)


def solve(gram: GramMatrix, b) -> np.ndarray:
    """Solve ``M x = b`` by forward/back substitution through the Cholesky factor."""
    b = np.asarray(b, dtype=float)
    y = solve_triangular(gram.chol, b, lower=True)
    return solve_triangular(gram.chol.T, y, lower=False)


def quad_form(gram: GramMatrix, g) -> np.ndarray:
    """``g^T M^{-1} g`` for one vector or each row of a matrix."""
    g = np.asarray(g, dtype=float)
    z = solve_triangular(gram.chol, np.atleast_2d(g).T, lower=True)
    q = np.sum(z * z, axis=0)
    return q if g.ndim > 1 else q[0]


def bonus(gram: GramMatrix, g, beta: float):
    """``beta * sqrt(g^T M^{-1} g)`` (vectorized over rows of ``g``)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return beta * np.sqrt(quad_form(gram, g))


def min_eigenvalue(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-9 * scale:
        raise ValueError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
