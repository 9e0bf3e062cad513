"""Snapshot POD with the dual truncation rule.

Snapshots are rows of a matrix; the inner product is given by a symmetric
weight operator ``W`` (a sparse mass matrix for nodal fields, or a vector of
point measures for integration-point fields), so ``<a, b> = a @ W @ b``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DISCARD_RATIO = 1e-14


@dataclass(eq=False)
class ReducedBasis:
    """Modes stored as rows, orthonormal for the basis inner product."""

    modes: np.ndarray  # (n, N)
    eigenvalues: np.ndarray  # retained, descending
    spectrum: np.ndarray  # all eigenvalues of the correlation matrix, descending
    weight: object = None

    @property
    def n(self) -> int:
        return len(self.modes)

    @property
    def empty(self) -> bool:
        return self.n == 0

    def gram(self) -> np.ndarray:
        return self.modes @ apply_weight(self.weight, self.modes.T)

    def project(self, field) -> np.ndarray:
        """Coefficients of the orthogonal projection of ``field``."""
        return self.modes @ apply_weight(self.weight, np.asarray(field, dtype=float))

    def reconstruct(self, coefs) -> np.ndarray:
        return np.asarray(coefs) @ self.modes


def apply_weight(weight, x):
    """``W @ x`` for a sparse/dense matrix, a diagonal vector, or identity."""
    if weight is None:
        return x
    if sp.issparse(weight):
        return weight @ x
    w = np.asarray(weight)
    if w.ndim == 1:
        return w[:, None] * x if np.ndim(x) == 2 else w * x
    return w @ x


def truncation_rank(eigenvalues, eps: float) -> int:
    """``n = max(n1, n2)`` over eigenvalues sorted in descending order.

    ``n1`` is the smallest count whose cumulated eigenvalues reach
    ``(1 - eps^2)`` of the total; ``n2`` counts the eigenvalues strictly
    above ``eps^2`` times the largest one.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0:
        return 0
    total = lam.sum()
    cum = np.cumsum(lam)
    n1 = int(np.searchsorted(cum, (1.0 - eps**2) * total) + 1)
    n2 = int(np.count_nonzero(lam > eps**2 * lam[0]))
    return min(max(n1, n2), lam.size)


def _orthonormalize(modes, weight, passes: int = 2):
    out = []
    for v in modes:
        v = v.copy()
        for _ in range(passes):
            for q in out:
                v -= (q @ apply_weight(weight, v)) * q
        norm = np.sqrt(v @ apply_weight(weight, v))
        out.append(v / norm)
    return np.array(out).reshape(len(out), modes.shape[1])


def snapshot_pod(snapshots, eps: float, weight=None) -> ReducedBasis:
    """Method of snapshots: correlation matrix, eigen-decomposition, truncation.

    Returned modes are ``sum_j u_j xi_ij / sqrt(lambda_i)`` renormalized to unit
    norm and re-orthonormalized. Eigenvalues below ``1e-14 * lambda_1`` are
    discarded before truncating.
    """
    U = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if U.shape[0] == 0:
        raise ValueError("snapshot POD needs at least one snapshot")
    if not 0.0 < eps < 1.0:
        raise ValueError("POD tolerance must lie in (0, 1)")
    C = U @ apply_weight(weight, U.T)
    C = 0.5 * (C + C.T)
    lam, xi = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam, xi = lam[order], xi[:, order]
    if lam[0] <= 0.0:
        warnings.warn("all snapshots vanish; returning an empty basis", RuntimeWarning, stacklevel=2)
        return ReducedBasis(np.zeros((0, U.shape[1])), np.zeros(0), np.zeros(0), weight)
    spectrum = np.clip(lam, 0.0, None)
    keep = lam > DISCARD_RATIO * lam[0]
    lam_k, xi_k = lam[keep], xi[:, keep]
    n = truncation_rank(lam_k, eps)
    modes = (xi_k[:, :n].T @ U) / np.sqrt(lam_k[:n])[:, None]
    modes = _orthonormalize(modes, weight)
    return ReducedBasis(modes, lam_k[:n].copy(), spectrum, weight)

