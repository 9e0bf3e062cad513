"""High-fidelity transient solver and snapshot archive.

Units follow the mm / N / MPa / s system: densities given in kg/m^3 are
converted to t/mm^3, angular speeds are rad/s (rpm converted when parsed).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .behavior import MaterialState
from .fem import (
    GlobalIntegrationTable,
    Mesh,
    assemble_forces_and_tangent,
    build_facet_quadrature,
    build_integration_table,
)

RPM_TO_RAD_S = 2.0 * np.pi / 60.0
KG_M3_TO_T_MM3 = 1e-12
DEFAULT_HF_TOL = 1e-5


class SolverError(RuntimeError):
    """Newton failure; carries the residual history and the failing step."""

    def __init__(self, message: str, history=(), step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.history = list(history)
        self.step = step


@dataclass(frozen=True)
class PiecewiseLinear:
    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) == 0 or len(t) != len(self.values):
            raise ValueError("piecewise-linear function needs matching, nonempty times and values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("piecewise-linear times must be strictly increasing")
        object.__setattr__(self, "times", tuple(float(x) for x in self.times))
        object.__setattr__(self, "values", tuple(float(x) for x in self.values))

    @classmethod
    def constant(cls, value: float) -> "PiecewiseLinear":
        return cls((0.0,), (value,))

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def scaled(self, factor: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.times, tuple(factor * v for v in self.values))


@dataclass(eq=False)
class LoadingProgram:
    """A nonparametrized loading: rotation, pressure and temperature histories.

    ``temperature_keyframes`` holds ``(time, nodal temperature)`` pairs; the
    temperature at any time is interpolated linearly between the bracketing
    keyframes (held constant outside them).
    """

    label: str
    times: np.ndarray
    rotation_speed: PiecewiseLinear = field(default_factory=lambda: PiecewiseLinear.constant(0.0))
    axis_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis_direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    density: float = 0.0
    pressure_coefficient: PiecewiseLinear = field(default_factory=lambda: PiecewiseLinear.constant(0.0))
    pressure_shape: dict = field(default_factory=dict)
    temperature_keyframes: list = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or len(self.times) == 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("loading times must be a nonempty increasing sequence")
        self.axis_point = np.asarray(self.axis_point, dtype=float)
        d = np.asarray(self.axis_direction, dtype=float)
        self.axis_direction = d / np.linalg.norm(d)
        self.pressure_shape = {str(k): float(v) for k, v in self.pressure_shape.items()}
        frames = sorted(((float(t), np.asarray(f, dtype=float)) for t, f in self.temperature_keyframes),
                        key=lambda kv: kv[0])
        for t, _ in frames:
            if not self.start_time - 1e-12 <= t <= self.times[-1] + 1e-12:
                raise ValueError(f"temperature keyframe at t={t} outside the program range")
        self.temperature_keyframes = frames

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def start_time(self) -> float:
        """Time of the unloaded initial state preceding the first step."""
        if self.times[0] > 0.0:
            return 0.0
        gap = self.times[1] - self.times[0] if len(self.times) > 1 else 1.0
        return float(self.times[0] - gap)

    def previous_time(self, step: int) -> float:
        return self.start_time if step == 0 else float(self.times[step - 1])

    def check_time(self, t: float) -> None:
        if not self.start_time - 1e-12 <= t <= self.times[-1] + 1e-12:
            raise ValueError(f"time {t} outside loading program {self.label!r}")

    def omega(self, t) -> float:
        return float(self.rotation_speed(t))

    def temperature(self, t, n_nodes: int) -> np.ndarray:
        if not self.temperature_keyframes:
            return np.full(n_nodes, 20.0)
        ts = [k[0] for k in self.temperature_keyframes]
        fields = [k[1] for k in self.temperature_keyframes]
        if t <= ts[0]:
            return fields[0].copy()
        if t >= ts[-1]:
            return fields[-1].copy()
        j = int(np.searchsorted(ts, t, side="right"))
        w = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
        return (1.0 - w) * fields[j - 1] + w * fields[j]


class Problem:
    """Mesh, integration data and law bundled for repeated solves."""

    def __init__(self, mesh: Mesh, law, table: GlobalIntegrationTable | None = None):
        self.mesh = mesh
        self.law = law
        self.table = table if table is not None else build_integration_table(mesh)
        self._facets = {}

    @property
    def n_points(self) -> int:
        return self.table.n_points

    def facet_quadrature(self, labels):
        key = tuple(sorted(labels))
        if key not in self._facets:
            self._facets[key] = build_facet_quadrature(self.mesh, key)
        return self._facets[key]

    def point_temperature(self, loading: LoadingProgram, t: float) -> np.ndarray:
        return self.table.nodal_to_points(loading.temperature(t, self.mesh.n_nodes))


def external_force_vector(problem: Problem, loading: LoadingProgram, t: float, basis=None) -> np.ndarray:
    """External generalized forces at time ``t``.

    Centrifugal body force ``rho omega^2 r_perp`` plus the traction
    ``coefficient(t) * shape * n`` on the pressure surfaces. With ``basis``
    (``n_dofs x n``), the projection ``basis.T @ F`` is returned.
    """
    loading.check_time(t)
    mesh, table = problem.mesh, problem.table
    F = np.zeros(mesh.n_dofs)
    omega = loading.omega(t)
    if omega != 0.0 and loading.density != 0.0:
        rel = table.points - loading.axis_point
        d = loading.axis_direction
        r_perp = rel - np.outer(rel @ d, d)
        rho = loading.density * KG_M3_TO_T_MM3
        body = (rho * omega**2 * table.measures)[:, None] * r_perp
        F += np.asarray(table.interpolation.T @ body).ravel()
    coef = float(loading.pressure_coefficient(t))
    if coef != 0.0 and loading.pressure_shape:
        fq = problem.facet_quadrature(loading.pressure_shape)
        labels = [mesh.facets[f][0] for f in fq.facet]
        traction = coef * np.array([loading.pressure_shape[lab] for lab in labels])
        F += fq.nodal_forces(traction, mesh.n_dofs)
    if basis is None:
        return F
    return np.asarray(basis.T @ F).ravel()


def _solve_dense(K: np.ndarray, r: np.ndarray) -> np.ndarray:
    lu, piv = sla.lu_factor(K, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.size and d.min() <= 1e-14 * d.max():
        raise SolverError("singular tangent matrix")
    return sla.lu_solve((lu, piv), r)


@dataclass
class StepResult:
    u: np.ndarray
    sigma: np.ndarray
    state: MaterialState
    iterations: int
    history: list


def newton_solve(
    problem: Problem,
    loading: LoadingProgram,
    step: int,
    state_in: MaterialState,
    u_guess,
    tol: float = DEFAULT_HF_TOL,
    max_iter: int = 30,
    u_prev=None,
) -> StepResult:
    """Global Newton iteration for one time step of ``loading``.

    Stops when ``||F_int - F_ext|| / ||F_ext|| <= tol`` on the free dofs
    (absolute residual when the external forces vanish). ``iterations``
    counts linear solves.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    t, t_prev = float(loading.times[step]), loading.previous_time(step)
    table, law = problem.table, problem.law
    free = problem.mesh.free_dofs
    f_ext = external_force_vector(problem, loading, t)[free]
    scale = np.linalg.norm(f_ext)
    T_ip = problem.point_temperature(loading, t)
    T_old = problem.point_temperature(loading, t_prev)
    eps_old = None if u_prev is None else table.strains(u_prev)

    u = np.array(u_guess, dtype=float)
    u[problem.mesh.constrained_dofs] = 0.0
    history = []
    for it in range(max_iter + 1):
        eps = table.strains(u)
        sigma, D, state = law.evaluate(state_in, eps, T_ip, t - t_prev, eps_old, T_old)
        F_int, K = assemble_forces_and_tangent(table.strain_operator, sigma, D, table.measures)
        r = F_int[free] - f_ext
        ratio = np.linalg.norm(r) / scale if scale > 0 else np.linalg.norm(r)
        history.append(float(ratio))
        if not np.isfinite(ratio):
            raise SolverError("non-finite residual", history, step)
        if ratio <= tol:
            return StepResult(u, sigma, state, it, history)
        if it == max_iter:
            break
        u[free] -= _solve_dense(K[np.ix_(free, free)], r)
    raise SolverError(f"Newton did not converge in {max_iter} iterations", history, step)


@dataclass(eq=False)
class LoadingRecord:
    """Time series of one loading program."""

    label: str
    times: np.ndarray
    u: np.ndarray  # (K, n_dofs)
    sigma: np.ndarray  # (K, N_G, 6)
    p: np.ndarray  # (K, N_G)
    states: np.ndarray  # (K, N_G, 13)
    iterations: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.times)

    def state(self, step: int) -> MaterialState:
        return MaterialState.from_table(self.states[step])


@dataclass(eq=False)
class SnapshotArchive:
    """Snapshots per variability ``(label, time index)``."""

    records: dict = field(default_factory=dict)

    def add(self, record: LoadingRecord) -> None:
        self.records[record.label] = record

    def __getitem__(self, label: str) -> LoadingRecord:
        return self.records[label]

    @property
    def labels(self) -> list[str]:
        return list(self.records)

    @property
    def variabilities(self) -> list[tuple[str, int]]:
        return [(lab, k) for lab, rec in self.records.items() for k in range(rec.n_steps)]

    def stacked(self, name: str, variabilities=None) -> np.ndarray:
        keys = self.variabilities if variabilities is None else variabilities
        return np.stack([getattr(self.records[lab], name)[k] for lab, k in keys])

    def save(self, directory) -> None:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        manifest = {"loadings": []}
        for i, (label, rec) in enumerate(self.records.items()):
            sub = f"{i:02d}_{_slug(label)}"
            manifest["loadings"].append({
                "label": label, "directory": sub, "times": rec.times.tolist(),
                "iterations": rec.iterations.tolist(),
            })
            for k in range(rec.n_steps):
                d = root / sub / f"step_{k:04d}"
                d.mkdir(parents=True, exist_ok=True)
                np.save(d / "u.npy", rec.u[k])
                np.save(d / "sigma.npy", rec.sigma[k])
                np.save(d / "p.npy", rec.p[k])
                np.save(d / "state.npy", rec.states[k])
        manifest["variabilities"] = [[lab, k] for lab, k in self.variabilities]
        (root / "manifest.json").write_text(json.dumps(manifest, indent=1))

    @classmethod
    def load(cls, directory) -> "SnapshotArchive":
        root = Path(directory)
        manifest = json.loads((root / "manifest.json").read_text())
        archive = cls()
        for entry in manifest["loadings"]:
            steps = [root / entry["directory"] / f"step_{k:04d}" for k in range(len(entry["times"]))]
            archive.add(LoadingRecord(
                entry["label"],
                np.asarray(entry["times"]),
                np.stack([np.load(s / "u.npy") for s in steps]),
                np.stack([np.load(s / "sigma.npy") for s in steps]),
                np.stack([np.load(s / "p.npy") for s in steps]),
                np.stack([np.load(s / "state.npy") for s in steps]),
                np.asarray(entry["iterations"]),
            ))
        return archive


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_") or "loading"


def run_transient(
    problem: Problem,
    loading: LoadingProgram,
    tol: float = DEFAULT_HF_TOL,
    max_iter: int = 30,
) -> LoadingRecord:
    """March through all steps, carrying the material state."""
    problem.mesh.check_boundaries(loading.pressure_shape)
    n_ip = problem.n_points
    state = MaterialState.zeros(n_ip)
    u = np.zeros(problem.mesh.n_dofs)
    us, sigmas, ps, states, iters = [], [], [], [], []
    for k in range(loading.n_steps):
        res = newton_solve(problem, loading, k, state, u, tol, max_iter, u_prev=u)
        u, state = res.u, res.state
        us.append(u.copy())
        sigmas.append(res.sigma)
        ps.append(state.p.copy())
        states.append(state.as_table())
        iters.append(res.iterations)
    return LoadingRecord(loading.label, loading.times.copy(), np.array(us), np.array(sigmas),
                         np.array(ps), np.array(states), np.array(iters))


def generate_archive(problem: Problem, loadings, tol: float = DEFAULT_HF_TOL) -> SnapshotArchive:
    archive = SnapshotArchive()
    for loading in loadings:
        archive.add(run_transient(problem, loading, tol))
    return archive
