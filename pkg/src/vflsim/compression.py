"""PCA feature compression for the encrypted gradient path.

Each party projects its local features onto the top-k principal
directions of its own (uncentered) data matrix.  Training then runs in
the k-dimensional space, cutting encrypted multiplications per round
from m*n to m*k, and the decrypted k-dimensional gradient is mapped
back to full dimension before the parameter update.

PCA is uncentered on purpose: subtracting column means would shift
every party's forward scores by a constant and change the protocol,
so the principal directions are those of X^T X as-is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CompressionPlan:
    """Projection matrix W (k x n, orthonormal rows) plus bookkeeping."""

    W: np.ndarray
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def ratio(self) -> float:
        return self.k / self.n


def ratio_to_k(ratio: float, n: int) -> int:
    """Target dimension for a compression ratio (at least one direction)."""
    if not 0 < ratio <= 1:
        raise ValueError(f"compression ratio must be in (0, 1], got {ratio}")
    return max(1, min(n, round(ratio * n)))


def fit_pca(X: np.ndarray, k: int) -> CompressionPlan:
    """Top-k principal directions of the raw (uncentered) data matrix.

    Rows of W are right singular vectors of X with non-increasing
    explained variance.  Each row's sign is fixed so its
    largest-magnitude entry is positive, making the output independent
    of the eigensolver's sign convention; equal singular values keep
    the solver's index order.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d matrix")
    m, n = X.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"k must be in [1, {min(m, n)}], got {k}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X must be finite")
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    W = vt[:k].copy()
    for row in W:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return CompressionPlan(W=W, explained_variance=s[:k] ** 2)


def compress_params(plan: CompressionPlan, theta: np.ndarray) -> np.ndarray:
    """theta_c = theta W^T (length k)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (plan.n,):
        raise ValueError(f"theta must have length {plan.n}, got {theta.shape}")
    return theta @ plan.W.T


def compress_data(plan: CompressionPlan, X: np.ndarray) -> np.ndarray:
    """Z = X W^T, one compressed row W x_i per sample."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != plan.n:
        raise ValueError(f"X must have {plan.n} columns, got {X.shape}")
    return X @ plan.W.T


def compress(plan: CompressionPlan, theta: np.ndarray,
             X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Compress parameters and data together (theta_c, Z)."""
    return compress_params(plan, theta), compress_data(plan, X)


def decompress_gradient(plan: CompressionPlan, g_c: np.ndarray) -> np.ndarray:
    """Map a k-dimensional gradient back to full dimension: g = g_c W.

    With orthonormal rows this is the pseudo-inverse action, i.e. the
    unique minimum-norm preimage of the compressed gradient.
    """
    g_c = np.asarray(g_c, dtype=float)
    if g_c.shape != (plan.k,):
        raise ValueError(f"compressed gradient must have length {plan.k}, got {g_c.shape}")
    return g_c @ plan.W


def save_plan(plan: CompressionPlan, path: str) -> None:
    """Persist W as delimited text so a compressed run can be replayed."""
    np.savetxt(path, plan.W, delimiter=",")


def load_plan(path: str) -> CompressionPlan:
    W = np.atleast_2d(np.loadtxt(path, delimiter=","))
    gram = W @ W.T
    if not np.allclose(gram, np.eye(W.shape[0]), atol=1e-6):
        raise ValueError("loaded matrix does not have orthonormal rows")
    return CompressionPlan(W=W, explained_variance=np.zeros(W.shape[0]))
