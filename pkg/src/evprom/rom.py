"""Reduced model: POD Galerkin solver with empirical cubature and Gappy-POD.

The reduced basis is held as a matrix ``Phi`` of shape ``(n_dofs, n)`` (dense
for POD modes, sparse for the full finite-element basis). The law is evaluated
at the union ``U`` of the quadrature points and all Gappy points; only the
quadrature points enter the Newton solve, the other points are evaluated once
per converged step since they only feed the dual reconstructions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .behavior import MaterialState
from .fem import assemble_forces_and_tangent
from .hf import LoadingProgram, Problem, SnapshotArchive, SolverError, external_force_vector
from .hyperreduction import (
    DEFAULT_ECM_TOL,
    ReducedQuadrature,
    build_ecm_system,
    eim_select,
    nnomp,
)
from .pod import ReducedBasis, snapshot_pod

DEFAULT_ROM_TOL = 1e-4
DEFAULT_POD_TOL = 1e-5
DEFAULT_GAPPY_TOL = 1e-5
DUAL_QUANTITIES = ("p", "s11", "s22", "s33", "s23", "s13", "s12")
_SIGMA_COLUMN = {"s11": 0, "s22": 1, "s33": 2, "s23": 3, "s13": 4, "s12": 5}


class GappyError(RuntimeError):
    """Ill-posed Gappy reconstruction (Gram matrix not positive definite)."""


def dual_values(quantity: str, sigma, p) -> np.ndarray:
    """Extract one dual quantity from stresses ``(..., 6)`` and plasticity."""
    if quantity == "p":
        return np.asarray(p)
    if quantity in _SIGMA_COLUMN:
        return np.asarray(sigma)[..., _SIGMA_COLUMN[quantity]]
    raise KeyError(f"unknown dual quantity {quantity!r}")


@dataclass(eq=False)
class DualReconstruction:
    """Gappy-POD data of one dual quantity."""

    quantity: str
    modes: np.ndarray  # (n_q, N_G)
    points: np.ndarray  # (m_q,) sorted global point indices
    B: np.ndarray  # (m_q, n_q)
    M: np.ndarray  # (n_q, n_q)
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self._factor = None
        if self.n:
            try:
                self._factor = sla.cho_factor(self.M, lower=True)
            except np.linalg.LinAlgError as exc:
                raise GappyError(f"Gappy matrix of {self.quantity!r} is not positive definite") from exc

    @property
    def n(self) -> int:
        return len(self.modes)

    @property
    def m(self) -> int:
        return len(self.points)

    def solve(self, values_at_points) -> np.ndarray:
        """Coefficients ``z`` solving ``M z = B^T p_hat``."""
        v = np.asarray(values_at_points, dtype=float)
        if v.shape != (self.m,):
            raise ValueError(f"expected {self.m} point values for {self.quantity!r}, got {v.shape}")
        if not self.n:
            return np.zeros(0)
        return sla.cho_solve(self._factor, self.B.T @ v)


def gappy_offline(quantity: str, snapshots, measures, quadrature_indices,
                  eps: float = DEFAULT_GAPPY_TOL) -> DualReconstruction:
    """POD of dual snapshots, EIM points completed by the quadrature points."""
    snaps = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if snaps.shape[0] == 0:
        raise ValueError("Gappy-POD needs at least one snapshot")
    if np.any(snaps != 0.0):
        basis = snapshot_pod(snaps, eps, np.asarray(measures, dtype=float))
        modes, lam = basis.modes, basis.eigenvalues
    else:
        modes, lam = np.zeros((0, snaps.shape[1])), np.zeros(0)
    points = eim_select(modes, quadrature_indices) if len(modes) else np.unique(
        np.asarray(quadrature_indices, dtype=np.int64))
    B = modes[:, points].T
    return DualReconstruction(quantity, modes, points, B, B.T @ B, lam)


def gappy_online(dual: DualReconstruction, values_at_points):
    """Return ``(z, reconstructed field over all points)``."""
    z = dual.solve(values_at_points)
    return z, z @ dual.modes


@dataclass(eq=False)
class ReducedModel:
    Phi: object  # (n_dofs, n) dense array or sparse matrix
    quadrature: ReducedQuadrature
    duals: dict
    strain_U: object  # (6 |U|, n) strain operator at the union points
    union: np.ndarray
    primal: ReducedBasis | None = None

    def __post_init__(self):
        self.union = np.asarray(self.union, dtype=np.int64)
        pos = {int(k): i for i, k in enumerate(self.union)}
        self.quad_pos = np.array([pos[int(k)] for k in self.quadrature.indices], dtype=np.int64)
        self.dual_pos = {q: np.array([pos[int(k)] for k in d.points], dtype=np.int64)
                         for q, d in self.duals.items()}
        rows = (6 * self.quad_pos[:, None] + np.arange(6)).ravel()
        self.strain_Q = self.strain_U[rows]
        extra = np.setdiff1d(np.arange(len(self.union)), self.quad_pos)
        self.extra_pos = extra
        self.strain_X = self.strain_U[(6 * extra[:, None] + np.arange(6)).ravel()]

    @property
    def n(self) -> int:
        return self.Phi.shape[1]

    @property
    def d(self) -> int:
        return self.quadrature.size

    def displacement(self, u_hat) -> np.ndarray:
        return np.asarray(self.Phi @ np.asarray(u_hat)).ravel()

    def strains(self, u_hat, which: str = "U") -> np.ndarray:
        op = {"U": self.strain_U, "Q": self.strain_Q, "X": self.strain_X}[which]
        return np.asarray(op @ np.asarray(u_hat)).reshape(-1, 6)

    def summary(self) -> dict:
        return {"n": self.n, "d": self.d, "union": len(self.union),
                **{f"n_{q}": d.n for q, d in self.duals.items()},
                **{f"m_{q}": d.m for q, d in self.duals.items()}}

    def save(self, path) -> None:
        arrays = {
            "Phi": self.Phi.toarray() if sp.issparse(self.Phi) else np.asarray(self.Phi),
            "quad_indices": self.quadrature.indices,
            "quad_weights": self.quadrature.weights,
            "union": self.union,
            "quantities": np.array(list(self.duals)),
        }
        for q, d in self.duals.items():
            arrays[f"{q}_modes"] = d.modes
            arrays[f"{q}_points"] = d.points
            arrays[f"{q}_eigenvalues"] = d.eigenvalues
        np.savez(Path(path), **arrays)

    @classmethod
    def load(cls, path, problem: Problem) -> "ReducedModel":
        data = np.load(Path(path))
        duals = {}
        for q in data["quantities"].tolist():
            modes, points = data[f"{q}_modes"], data[f"{q}_points"]
            B = modes[:, points].T
            duals[q] = DualReconstruction(q, modes, points, B, B.T @ B, data[f"{q}_eigenvalues"])
        quad = ReducedQuadrature(data["quad_indices"], data["quad_weights"])
        return assemble_model(problem, data["Phi"], quad, duals)


def assemble_model(problem: Problem, Phi, quadrature: ReducedQuadrature, duals: dict,
                   primal: ReducedBasis | None = None) -> ReducedModel:
    """Compute the union point set and its reduced strain operator."""
    pts = [quadrature.indices] + [d.points for d in duals.values()]
    union = np.unique(np.concatenate(pts)).astype(np.int64)
    B_U = problem.table.point_strain_operator(union)
    strain_U = B_U @ Phi
    if not sp.issparse(Phi):
        strain_U = np.asarray(strain_U)
    return ReducedModel(Phi, quadrature, duals, strain_U, union, primal)


def build_reduced_model(
    problem: Problem,
    archive: SnapshotArchive,
    eps_pod: float = DEFAULT_POD_TOL,
    eps_ecm: float = DEFAULT_ECM_TOL,
    eps_gappy: float = DEFAULT_GAPPY_TOL,
    quantities=DUAL_QUANTITIES,
    variabilities=None,
) -> ReducedModel:
    """Data compression, operator compression and Gappy offline stages."""
    table = problem.table
    keys = archive.variabilities if variabilities is None else list(variabilities)
    U = archive.stacked("u", keys)
    primal = snapshot_pod(U, eps_pod, table.mass_matrix)
    if primal.empty:
        raise ValueError("displacement snapshots vanish; nothing to reduce")
    Phi = primal.modes.T
    mode_strains = np.asarray(table.strain_operator @ Phi).T.reshape(primal.n, -1, 6)
    sigma = archive.stacked("sigma", keys)
    system = build_ecm_system(sigma, mode_strains, table.measures)
    quadrature = nnomp(system.J, system.g, eps_ecm)
    p = archive.stacked("p", keys)
    duals = {q: gappy_offline(q, dual_values(q, sigma, p), table.measures, quadrature.indices, eps_gappy)
             for q in quantities}
    return assemble_model(problem, Phi, quadrature, duals, primal)


def full_order_model(problem: Problem) -> ReducedModel:
    """Reduced model spanned by every free finite-element dof, full quadrature."""
    free = problem.mesh.free_dofs
    Phi = sp.csr_matrix((np.ones(len(free)), (free, np.arange(len(free)))),
                        shape=(problem.mesh.n_dofs, len(free)))
    return assemble_model(problem, Phi, ReducedQuadrature.full(problem.table.measures), {})


def project_online_loading(problem: Problem, loading: LoadingProgram, t: float, Phi) -> np.ndarray:
    """Reduced external forces ``Phi^T F_ext(t)``."""
    return external_force_vector(problem, loading, t, basis=Phi)


@dataclass
class RomStep:
    step: int
    u_hat: np.ndarray
    iterations: int
    history: list
    sigma_U: np.ndarray  # law stresses at the union points
    state_U: MaterialState
    hat: dict  # quantity -> law values at its Gappy points
    z: dict
    tilde: dict  # quantity -> reconstructed field over all points
    tilde_at_points: dict


def _solve_small(K, r):
    try:
        lu, piv = sla.lu_factor(K)
    except ValueError as exc:
        raise SolverError("non-finite reduced tangent") from exc
    d = np.abs(np.diag(lu))
    if d.size and d.min() <= 1e-14 * d.max():
        raise SolverError("singular reduced tangent matrix")
    return sla.lu_solve((lu, piv), r)


def reduced_newton(
    model: ReducedModel,
    problem: Problem,
    loading: LoadingProgram,
    step: int,
    state_U: MaterialState,
    u_guess,
    tol: float = DEFAULT_ROM_TOL,
    max_iter: int = 30,
    u_prev=None,
):
    """Reduced Newton iteration on one time step.

    Returns ``(u_hat, sigma_U, new_state_U, iterations, history)``; the state
    passed in is left untouched (states are committed by the caller).
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    law = problem.law
    t, t_prev = float(loading.times[step]), loading.previous_time(step)
    f_ext = project_online_loading(problem, loading, t, model.Phi)
    scale = np.linalg.norm(f_ext)
    interp_U = problem.table.interpolation[model.union]
    T_U = interp_U @ loading.temperature(t, problem.mesh.n_nodes)
    T_U_old = interp_U @ loading.temperature(t_prev, problem.mesh.n_nodes)
    qp, xp = model.quad_pos, model.extra_pos
    eps_old_U = None if u_prev is None else model.strains(u_prev)
    st_Q = state_U.take(qp)

    def old(a, idx):
        return None if a is None else a[idx]

    u = np.array(u_guess, dtype=float)
    history = []
    for it in range(max_iter + 1):
        eps_Q = model.strains(u, "Q")
        sig_Q, D_Q, new_Q = law.evaluate(st_Q, eps_Q, T_U[qp], t - t_prev, old(eps_old_U, qp), T_U_old[qp])
        F, K = assemble_forces_and_tangent(model.strain_Q, sig_Q, D_Q, model.quadrature.weights)
        r = F - f_ext
        ratio = np.linalg.norm(r) / scale if scale > 0 else np.linalg.norm(r)
        history.append(float(ratio))
        if not np.isfinite(ratio):
            raise SolverError("non-finite reduced residual", history, step)
        if ratio <= tol:
            break
        if it == max_iter:
            raise SolverError(f"reduced Newton did not converge in {max_iter} iterations", history, step)
        try:
            u = u - _solve_small(K, r)
        except SolverError as exc:
            raise SolverError(str(exc), history, step) from exc

    sigma_U = np.zeros((len(model.union), 6))
    new_state = state_U.copy()
    sigma_U[qp] = sig_Q
    new_state.put(qp, new_Q)
    if len(xp):
        sig_X, _, new_X = law.evaluate(
            state_U.take(xp), model.strains(u, "X"), T_U[xp], t - t_prev,
            old(eps_old_U, xp), T_U_old[xp], tangent=False,
        )
        sigma_U[xp] = sig_X
        new_state.put(xp, new_X)
    return u, sigma_U, new_state, it, history


def reconstruct_duals(model: ReducedModel, sigma_U, p_U):
    """Gappy-POD reconstruction of every dual quantity of the model."""
    hat, z, tilde, at_pts = {}, {}, {}, {}
    for q, dual in model.duals.items():
        values = dual_values(q, sigma_U, p_U)[model.dual_pos[q]]
        zq, field_q = gappy_online(dual, values)
        hat[q], z[q], tilde[q], at_pts[q] = values, zq, field_q, dual.B @ zq
    return hat, z, tilde, at_pts


class RomRunner:
    """Step-by-step online solver; lets a driver replace states between steps."""

    def __init__(self, model: ReducedModel, problem: Problem, loading: LoadingProgram,
                 tol: float = DEFAULT_ROM_TOL, max_iter: int = 30):
        self.problem = problem
        self.loading = loading
        self.tol = tol
        self.max_iter = max_iter
        self.set_model(model)
        self.u_hat = np.zeros(model.n)
        self.state_U = MaterialState.zeros(len(model.union))
        self.step_index = 0

    def set_model(self, model: ReducedModel) -> None:
        self.model = model

    def reset_from_full(self, u_full, state_full: MaterialState) -> None:
        """Restart from a full-field solution: project ``u`` and take point states."""
        Phi = self.model.Phi
        self.u_hat = np.asarray(_least_squares_coefficients(Phi, u_full, self.model.primal))
        self.state_U = state_full.take(self.model.union)

    def step(self) -> RomStep:
        k = self.step_index
        u, sigma_U, state, iters, history = reduced_newton(
            self.model, self.problem, self.loading, k, self.state_U, self.u_hat,
            self.tol, self.max_iter, u_prev=self.u_hat,
        )
        hat, z, tilde, at_pts = reconstruct_duals(self.model, sigma_U, state.p)
        self.u_hat, self.state_U = u, state
        self.step_index += 1
        return RomStep(k, u, iters, history, sigma_U, state, hat, z, tilde, at_pts)


def _least_squares_coefficients(Phi, u_full, primal: ReducedBasis | None):
    if primal is not None:
        return primal.project(u_full)
    if sp.issparse(Phi):
        # columns are unit vectors of the free dofs
        return np.asarray(Phi.T @ u_full).ravel()
    return np.linalg.lstsq(Phi, u_full, rcond=None)[0]


@dataclass(eq=False)
class RomSolution:
    steps: list = field(default_factory=list)
    records: list = field(default_factory=list)  # per step: hook output

    @property
    def u_hat(self) -> list:
        return [s.u_hat for s in self.steps]


def run_rom_transient(model: ReducedModel, problem: Problem, loading: LoadingProgram,
                      tol: float = DEFAULT_ROM_TOL, hook=None) -> RomSolution:
    """Online stage over every step of ``loading``; ``hook(step)`` may add a record."""
    runner = RomRunner(model, problem, loading, tol)
    out = RomSolution()
    for _ in range(loading.n_steps):
        res = runner.step()
        out.steps.append(res)
        out.records.append(None if hook is None else hook(res))
    return out
