"""Empirical cubature (NNOMP) and empirical interpolation point selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls as _scipy_nnls

DEFAULT_ECM_TOL = 1e-4
STAGNATION_WINDOW = 3
# weights below this fraction of the largest one are round-off and get pruned
PRUNE_RATIO = 1e-12


class HyperreductionError(RuntimeError):
    """Raised on NNLS/NNOMP failure; ``best`` holds the best quadrature found."""

    def __init__(self, message: str, best: "ReducedQuadrature | None" = None):
        super().__init__(message)
        self.best = best


class DegenerateModesError(ValueError):
    pass


@dataclass(eq=False)
class EcmSystem:
    """Rows ``q = i * n + j`` pair snapshot ``i`` with mode ``j``."""

    J: np.ndarray
    g: np.ndarray
    n_snapshots: int
    n_modes: int


@dataclass(eq=False)
class ReducedQuadrature:
    indices: np.ndarray
    weights: np.ndarray
    residual: float = 0.0
    history: tuple = ()

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.indices) != len(self.weights):
            raise ValueError("indices and weights must align")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("quadrature indices must be distinct")

    @property
    def size(self) -> int:
        return len(self.indices)

    @classmethod
    def full(cls, measures) -> "ReducedQuadrature":
        measures = np.asarray(measures, dtype=float)
        return cls(np.arange(len(measures)), measures.copy())


def build_ecm_system(sigma_snapshots, mode_strains, measures) -> EcmSystem:
    """``J[i*n + j, k] = sigma_i(x_k) : eps(psi_j)(x_k)`` and ``g = J @ nu``.

    ``sigma_snapshots`` is ``(N_c, N_G, 6)`` (tensor Voigt stresses) and
    ``mode_strains`` ``(n, N_G, 6)`` (engineering Voigt strains), so the
    double contraction is the plain dot product.
    """
    S = np.asarray(sigma_snapshots, dtype=float)
    E = np.asarray(mode_strains, dtype=float)
    nu = np.asarray(measures, dtype=float)
    if S.ndim != 3 or E.ndim != 3 or S.shape[1:] != E.shape[1:] or S.shape[1] != len(nu):
        raise ValueError("snapshot stresses, mode strains and measures must share the point set")
    J = np.einsum("ika,jka->ijk", S, E).reshape(S.shape[0] * E.shape[0], S.shape[1])
    return EcmSystem(J, J @ nu, S.shape[0], E.shape[0])


def nnls(A, b, max_iter: int | None = None) -> np.ndarray:
    """Nonnegative least squares (Lawson-Hanson active set).

    The iteration cap defaults to ten times the number of columns.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != len(b):
        raise ValueError("nnls: shape mismatch")
    if A.shape[1] == 0:
        return np.zeros(0)
    cap = 10 * A.shape[1] if max_iter is None else max_iter
    try:
        w, _ = _scipy_nnls(A, b, maxiter=cap)
    except RuntimeError as exc:
        raise HyperreductionError(f"nnls exceeded {cap} iterations") from exc
    return w


def _fit(J, g, selected):
    cols = np.asarray(selected, dtype=np.int64)
    w = nnls(J[:, cols], g)
    r = g - J[:, cols] @ w
    return w, r


def _finalize(J, g, selected, g_norm, history):
    """Sort, drop (numerically) zero weights and refit until the support is stable."""
    cols = np.sort(np.asarray(selected, dtype=np.int64))
    while True:
        w, r = _fit(J, g, cols)
        keep = w > PRUNE_RATIO * w.max() if w.size and w.max() > 0.0 else w > 0.0
        if keep.all() or not keep.any():
            break
        cols = cols[keep]
    if not keep.any():
        cols, w = cols[:0], w[:0]
        r = g.copy()
    return ReducedQuadrature(cols, w, float(np.linalg.norm(r) / g_norm), tuple(history))


def nnomp(J, g, eps: float = DEFAULT_ECM_TOL, max_points: int | None = None) -> ReducedQuadrature:
    """Nonnegative orthogonal matching pursuit for a sparse positive quadrature.

    Greedily adds the column maximizing ``J^T r`` (raw, lowest index on ties,
    already selected columns skipped), refits the weights by NNLS and stops
    when ``||r|| <= eps ||g||``. Columns with zero or round-off weights are
    pruned on return.
    """
    if eps <= 0:
        raise ValueError("ECM tolerance must be positive")
    J = np.asarray(J, dtype=float)
    g = np.asarray(g, dtype=float)
    g_norm = np.linalg.norm(g)
    if g_norm == 0.0:
        return ReducedQuadrature(np.zeros(0, dtype=np.int64), np.zeros(0))
    n_cols = J.shape[1]
    limit = n_cols if max_points is None else min(max_points, n_cols)
    selected: list[int] = []
    taken = np.zeros(n_cols, dtype=bool)
    r = g.copy()
    history = [1.0]
    best_norm, best_sel, stalled = np.inf, [], 0
    while history[-1] > eps:
        if len(selected) >= limit:
            raise HyperreductionError(
                f"all {limit} candidate points used, residual {history[-1]:.3e}",
                _finalize(J, g, best_sel or selected, g_norm, history),
            )
        score = J.T @ r
        score[taken] = -np.inf
        k = int(np.argmax(score))  # first maximizer, i.e. lowest index on ties
        selected.append(k)
        taken[k] = True
        _, r = _fit(J, g, selected)
        rel = float(np.linalg.norm(r) / g_norm)
        history.append(rel)
        if rel < best_norm:
            best_norm, best_sel, stalled = rel, list(selected), 0
        else:
            stalled += 1
            if stalled >= STAGNATION_WINDOW:
                raise HyperreductionError(
                    f"NNOMP stagnated at residual {best_norm:.3e}",
                    _finalize(J, g, best_sel, g_norm, history),
                )
    return _finalize(J, g, selected, g_norm, history)


def verify_quadrature(system: EcmSystem, rq: ReducedQuadrature) -> float:
    """Relative residual ``||J_Z w - g|| / ||g||``."""
    g_norm = np.linalg.norm(system.g)
    approx = system.J[:, rq.indices] @ rq.weights
    if g_norm == 0.0:
        return float(np.linalg.norm(approx))
    return float(np.linalg.norm(approx - system.g) / g_norm)


def eim_points(modes) -> np.ndarray:
    """Greedy empirical interpolation: one point per mode, in selection order.

    ``modes`` is ``(n, N_G)``. The first point maximizes ``|psi_1|``; each next
    point maximizes the interpolation residual of the next mode by the
    previous modes on the previous points.
    """
    Q = np.atleast_2d(np.asarray(modes, dtype=float))
    points: list[int] = []
    for j, psi in enumerate(Q):
        if points:
            P = Q[:j][:, points].T  # (j, j) interpolation matrix
            try:
                c = np.linalg.solve(P, psi[points])
            except np.linalg.LinAlgError as exc:
                raise DegenerateModesError("singular interpolation system") from exc
            res = psi - c @ Q[:j]
        else:
            res = psi
        k = int(np.argmax(np.abs(res)))
        scale = np.abs(psi).max()
        if scale == 0.0 or np.abs(res[k]) <= 1e-12 * scale:
            raise DegenerateModesError(f"mode {j} is interpolated exactly by the previous ones")
        points.append(k)
    return np.asarray(points, dtype=np.int64)


def eim_select(modes, existing=()) -> np.ndarray:
    """EIM points completed without repeats by ``existing`` indices, sorted."""
    pts = eim_points(modes) if len(np.atleast_2d(modes)) else np.zeros(0, dtype=np.int64)
    return np.union1d(pts, np.asarray(existing, dtype=np.int64)).astype(np.int64)
