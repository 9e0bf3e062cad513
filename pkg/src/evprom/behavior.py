"""Temperature-dependent material laws.

Two laws are provided, both vectorized over integration points:

* ``elas``: cubic thermoelasticity, stateless.
* ``evp``: Norton viscoplastic flow with nonlinear (Armstrong-Frederick type)
  kinematic hardening, integrated by a backward-Euler return mapping.

Conventions
-----------
Stress and strain are stored as Voigt 6-vectors ordered
``[11, 22, 33, 23, 13, 12]``. Stress vectors carry tensor components, strain
vectors carry engineering shears (``gamma_ij = 2 eps_ij``), so that
``sigma = A @ eps`` with the usual Voigt stiffness matrix. The internal
variables ``eps_p`` and ``alpha`` are strain-like and use the engineering
convention too. Internally the return mapping works in Mandel notation, where
the tensor double contraction is the plain dot product.

Units are MPa for stresses and moduli, degrees Celsius for temperatures,
seconds for time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

T_REF = 20.0

_SQ2 = np.sqrt(2.0)
_SQ32 = np.sqrt(1.5)
# Voigt (engineering strain) -> Mandel
_STRAIN_TO_MANDEL = np.array([1.0, 1.0, 1.0, 1.0 / _SQ2, 1.0 / _SQ2, 1.0 / _SQ2])
# Voigt (tensor stress) -> Mandel
_STRESS_TO_MANDEL = np.array([1.0, 1.0, 1.0, _SQ2, _SQ2, _SQ2])
_IDENTITY = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


class BehaviorError(RuntimeError):
    """Local integration failure, carrying the residual at exit."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class TemperatureTable:
    """Piecewise-linear coefficient table, clamped outside its range."""

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        bp = tuple(float(b) for b in np.atleast_1d(self.breakpoints))
        vals = tuple(float(v) for v in np.atleast_1d(self.values))
        if len(bp) < 1 or len(bp) != len(vals):
            raise ValueError("temperature table needs matching, non-empty breakpoints and values")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("temperature breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: float) -> "TemperatureTable":
        return cls((T_REF,), (value,))

    def __call__(self, T):
        return np.interp(T, self.breakpoints, self.values)

    def to_dict(self) -> dict:
        return {"breakpoints": list(self.breakpoints), "values": list(self.values)}

    @classmethod
    def from_value(cls, spec) -> "TemperatureTable":
        """Build from a scalar or a ``{breakpoints, values}`` mapping."""
        if isinstance(spec, TemperatureTable):
            return spec
        if isinstance(spec, dict):
            unknown = set(spec) - {"breakpoints", "values"}
            if unknown:
                raise ValueError(f"unknown temperature-table keys: {sorted(unknown)}")
            return cls(tuple(spec["breakpoints"]), tuple(spec["values"]))
        return cls.constant(float(spec))


def _table(x) -> TemperatureTable:
    return TemperatureTable.from_value(x)


@dataclass(frozen=True, kw_only=True)
class ElasParams:
    y1111: TemperatureTable
    y1122: TemperatureTable
    y1212: TemperatureTable
    # Treated as a strain per kelvin (see README, "units").
    alpha_th: TemperatureTable
    T0: float = T_REF

    def __post_init__(self):
        for name in self._table_fields():
            object.__setattr__(self, name, _table(getattr(self, name)))

    @classmethod
    def _table_fields(cls) -> tuple[str, ...]:
        return ("y1111", "y1122", "y1212", "alpha_th")

    def check(self) -> None:
        temps = sorted({t for name in self._table_fields() for t in getattr(self, name).breakpoints})
        for T in temps:
            A = elastic_stiffness(self, T)
            if np.linalg.eigvalsh(A).min() <= 0.0:
                raise ValueError(f"elastic stiffness not positive definite at T={T}")

    def to_dict(self) -> dict:
        out = {name: getattr(self, name).to_dict() for name in self._table_fields()}
        out["T0"] = self.T0
        return out


@dataclass(frozen=True, kw_only=True)
class EvpParams(ElasParams):
    C: TemperatureTable
    D: TemperatureTable
    K_norton: TemperatureTable
    m: TemperatureTable
    R0: TemperatureTable

    @classmethod
    def _table_fields(cls) -> tuple[str, ...]:
        return ElasParams._table_fields() + ("C", "D", "K_norton", "m", "R0")

    def check(self) -> None:
        super().check()
        if min(self.K_norton.values) <= 0.0:
            raise ValueError("Norton coefficient K must be positive")
        if min(self.m.values) < 1.0:
            raise ValueError("Norton exponent m must be >= 1")
        if min(self.R0.values) <= 0.0:
            raise ValueError("initial yield stress R0 must be positive")


def isotropic_params(E: float, nu: float, **extra) -> dict:
    """Cubic coefficients reproducing an isotropic material."""
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return {"y1111": lam + 2.0 * mu, "y1122": lam, "y1212": mu, **extra}


def default_evp_params(**overrides) -> EvpParams:
    """Desk-scale fixture material; values are test fixtures, not measured data."""
    base = isotropic_params(200_000.0, 0.3)
    base.update(alpha_th=1e-5, C=1e4, D=50.0, K_norton=500.0, m=5.0, R0=200.0)
    base.update(overrides)
    return EvpParams(**base)


def default_elas_params(**overrides) -> ElasParams:
    base = isotropic_params(200_000.0, 0.3)
    base.update(alpha_th=1e-5)
    base.update(overrides)
    return ElasParams(**base)


@dataclass
class MaterialState:
    """Internal variables at a set of points.

    ``eps_p`` and ``alpha`` have shape ``(n, 6)`` (engineering Voigt), ``p``
    has shape ``(n,)``.
    """

    eps_p: np.ndarray
    alpha: np.ndarray
    p: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "MaterialState":
        return cls(np.zeros((n, 6)), np.zeros((n, 6)), np.zeros(n))

    def __len__(self) -> int:
        return len(self.p)

    def take(self, idx) -> "MaterialState":
        return MaterialState(self.eps_p[idx].copy(), self.alpha[idx].copy(), self.p[idx].copy())

    def copy(self) -> "MaterialState":
        return self.take(slice(None))

    def put(self, idx, other: "MaterialState") -> None:
        self.eps_p[idx] = other.eps_p
        self.alpha[idx] = other.alpha
        self.p[idx] = other.p

    def as_table(self) -> np.ndarray:
        """Stack as an ``(n, 13)`` array: eps_p, alpha, p."""
        return np.hstack([self.eps_p, self.alpha, self.p[:, None]])

    @classmethod
    def from_table(cls, table: np.ndarray) -> "MaterialState":
        table = np.asarray(table, dtype=float)
        return cls(table[:, :6].copy(), table[:, 6:12].copy(), table[:, 12].copy())


def elastic_stiffness(params: ElasParams, T) -> np.ndarray:
    """Voigt stiffness of the cubic law; shape ``(6, 6)`` or ``(..., 6, 6)``."""
    T = np.asarray(T, dtype=float)
    a, b, c = params.y1111(T), params.y1122(T), params.y1212(T)
    A = np.zeros(T.shape + (6, 6))
    for i in range(3):
        for j in range(3):
            A[..., i, j] = a if i == j else b
        A[..., 3 + i, 3 + i] = c
    return A


def thermal_strain(params: ElasParams, T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    return (params.alpha_th(T) * (T - params.T0))[..., None] * _IDENTITY


def integrate_elas(params: ElasParams, eps_total, T):
    """Stress and tangent of the thermoelastic law."""
    eps = np.asarray(eps_total, dtype=float)
    A = elastic_stiffness(params, np.broadcast_to(T, eps.shape[:-1]))
    sigma = np.einsum("...ij,...j->...i", A, eps - thermal_strain(params, np.broadcast_to(T, eps.shape[:-1])))
    return sigma, A


def _dev(x):
    tr = x[..., :3].sum(axis=-1, keepdims=True) / 3.0
    out = x.copy()
    out[..., :3] -= tr
    return out


@dataclass
class _LocalCoefficients:
    y11: np.ndarray
    y12: np.ndarray
    y44: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray
    m: np.ndarray
    R0: np.ndarray
    eps_th: np.ndarray

    @classmethod
    def at(cls, params: EvpParams, T: np.ndarray) -> "_LocalCoefficients":
        return cls(
            params.y1111(T), params.y1122(T), params.y1212(T),
            params.C(T), params.D(T), params.K_norton(T), params.m(T), params.R0(T),
            thermal_strain(params, T),
        )

    def take(self, mask) -> "_LocalCoefficients":
        return _LocalCoefficients(**{k: v[mask] for k, v in self.__dict__.items()})

    def stiffness_mandel(self, e):
        """Apply the Mandel stiffness to Mandel strains ``e``."""
        tr = e[..., :3].sum(axis=-1)
        out = np.empty_like(e)
        out[..., :3] = (self.y11 - self.y12)[..., None] * e[..., :3] + (self.y12 * tr)[..., None]
        out[..., 3:] = (2.0 * self.y44)[..., None] * e[..., 3:]
        return out


@njit(cache=True)
def _solve_norm(a_d, a_s, b_d, b_s, norm_eta):
    """Solve ``a_d/(q+b_d)^2 + a_s/(q+b_s)^2 = 1`` for ``q >= 0``, pointwise.

    The left-hand side is convex and decreasing in ``q``; Newton started left of
    the root increases monotonically to it. ``b_d`` and ``b_s`` are both zero
    (no flow, the start point is the root) or both positive.
    """
    n = a_d.shape[0]
    out = np.empty(n)
    for i in range(n):
        q = max(norm_eta[i] - max(b_d[i], b_s[i]), 0.0)
        for _ in range(60):
            qd = q + b_d[i]
            qs = q + b_s[i]
            if qd <= 0.0 or qs <= 0.0:
                break
            phi = a_d[i] / qd**2 + a_s[i] / qs**2 - 1.0
            if phi <= 0.0:
                break
            dphi = -2.0 * (a_d[i] / qd**3 + a_s[i] / qs**3)
            step = -phi / dphi
            q += step
            if abs(step) <= 1e-15 * q:
                break
        out[i] = q
    return out


def _plastic_correction(co: _LocalCoefficients, s_tr, X_old_coef, alpha_old, dt, f_trial):
    """Solve the viscous consistency equation for the plastic multiplier.

    Unknown is ``v = (dp/dt)^(1/m)`` so the Norton term stays smooth at zero.
    Returns ``(dp, n)`` with ``n`` the Mandel flow direction.
    """
    two_g_d = co.y11 - co.y12
    two_g_s = 2.0 * co.y44
    c23 = 2.0 / 3.0 * co.C

    def evaluate(v):
        dp = dt * v**co.m
        h = 1.0 / (1.0 + dp * co.D)
        eta = s_tr - (c23 * h)[:, None] * alpha_old
        a_d = np.einsum("ij,ij->i", eta[:, :3], eta[:, :3])
        a_s = np.einsum("ij,ij->i", eta[:, 3:], eta[:, 3:])
        c_d = two_g_d + c23 * h
        c_s = two_g_s + c23 * h
        b_d = _SQ32 * dp * c_d
        b_s = _SQ32 * dp * c_s
        q = _solve_norm(a_d, a_s, b_d, b_s, np.sqrt(a_d + a_s))
        g = _SQ32 * q - co.R0 - co.K * v
        # implicit derivative dq/d(dp)
        deta = (c23 * co.D * h**2)[:, None] * alpha_old
        da_d = 2.0 * np.einsum("ij,ij->i", eta[:, :3], deta[:, :3])
        da_s = 2.0 * np.einsum("ij,ij->i", eta[:, 3:], deta[:, 3:])
        dc = -c23 * co.D * h**2
        db_d = _SQ32 * (c_d + dp * dc)
        db_s = _SQ32 * (c_s + dp * dc)
        qd, qs = np.maximum(q + b_d, 1e-300), np.maximum(q + b_s, 1e-300)
        dphi_dq = -2.0 * (a_d / qd**3 + a_s / qs**3)
        dphi_ddp = da_d / qd**2 - 2.0 * a_d * db_d / qd**3 + da_s / qs**2 - 2.0 * a_s * db_s / qs**3
        with np.errstate(divide="ignore", invalid="ignore"):
            dq = np.where(q > 0.0, -dphi_ddp / dphi_dq, 0.0)
        ddp_dv = dt * co.m * v ** (co.m - 1.0)
        dg = _SQ32 * dq * ddp_dv - co.K
        return g, dg, dp, eta, q, b_d, b_s

    norm_s = np.linalg.norm(s_tr, axis=1)
    norm_a = np.linalg.norm(alpha_old, axis=1)
    f_max = _SQ32 * (norm_s + c23 * norm_a) - co.R0
    lo = np.zeros_like(f_max)
    hi = np.maximum(f_max, f_trial) / co.K
    # initial guess from the linear-viscous, hardening-free estimate
    v = np.clip(f_trial / co.K, 0.0, hi) * 0.5
    scale = co.R0 + np.abs(f_trial)
    converged = np.zeros(len(v), dtype=bool)
    g = np.full(len(v), np.inf)
    for _ in range(100):
        g, dg, dp, eta, q, b_d, b_s = evaluate(v)
        converged = np.abs(g) <= 1e-13 * scale
        width_ok = (hi - lo) <= 1e-15 * np.maximum(hi, 1e-300)
        converged |= width_ok
        if converged.all():
            break
        lo = np.where(g > 0.0, v, lo)
        hi = np.where(g < 0.0, v, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            v_new = v - g / dg
        bad = ~np.isfinite(v_new) | (v_new <= lo) | (v_new >= hi)
        v_new = np.where(bad, 0.5 * (lo + hi), v_new)
        v = np.where(converged, v, v_new)
    else:
        g, dg, dp, eta, q, b_d, b_s = evaluate(v)
        resid = np.abs(g) / scale
        if (resid > 1e-8).any():
            raise BehaviorError("evp local Newton did not converge in 100 iterations", float(resid.max()))
    n = np.empty_like(eta)
    n[:, :3] = _SQ32 * eta[:, :3] / np.maximum(q + b_d, 1e-300)[:, None]
    n[:, 3:] = _SQ32 * eta[:, 3:] / np.maximum(q + b_s, 1e-300)[:, None]
    return dp, n


def _evp_update(co: _LocalCoefficients, epsp_old, alpha_old, p_old, eps_total, dt):
    """One backward-Euler step; all arguments Mandel, leading axis = points."""
    e_el = eps_total - co.eps_th - epsp_old
    sigma_tr = co.stiffness_mandel(e_el)
    s_tr = _dev(sigma_tr)
    X_coef = 2.0 / 3.0 * co.C
    xi_tr = s_tr - X_coef[:, None] * alpha_old
    f_trial = _SQ32 * np.linalg.norm(xi_tr, axis=1) - co.R0
    plastic = f_trial > 0.0

    sigma = sigma_tr
    epsp, alpha, p = epsp_old, alpha_old, p_old
    if plastic.any():
        sub = co.take(plastic)
        dp, n = _plastic_correction(
            sub, s_tr[plastic], X_coef[plastic], alpha_old[plastic], dt[plastic], f_trial[plastic]
        )
        depsp = dp[:, None] * n
        h = 1.0 / (1.0 + dp * sub.D)
        epsp = epsp_old.copy()
        alpha = alpha_old.copy()
        p = p_old.copy()
        sigma = sigma_tr.copy()
        epsp[plastic] = epsp_old[plastic] + depsp
        alpha[plastic] = h[:, None] * (alpha_old[plastic] + depsp)
        p[plastic] = p_old[plastic] + dp
        sigma[plastic] = sigma_tr[plastic] - sub.stiffness_mandel(depsp)
    return sigma, epsp, alpha, p, plastic


def _broadcast_points(eps, T, dt):
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    n = eps.shape[0]
    T = np.broadcast_to(np.asarray(T, dtype=float), (n,)).copy()
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (n,)).copy()
    return eps, T, dt


def _evp_stress(params, state, eps, T, dt, substeps, eps_old, T_old):
    """Return mapping in Voigt conventions, with optional sub-incrementation."""
    if substeps == 1:
        co = _LocalCoefficients.at(params, T)
        sig, epsp, alpha, p, plastic = _evp_update(
            co,
            state.eps_p * _STRAIN_TO_MANDEL,
            state.alpha * _STRAIN_TO_MANDEL,
            state.p,
            eps * _STRAIN_TO_MANDEL,
            dt,
        )
        return sig / _STRESS_TO_MANDEL, epsp / _STRAIN_TO_MANDEL, alpha / _STRAIN_TO_MANDEL, p, plastic
    epsp = state.eps_p * _STRAIN_TO_MANDEL
    alpha = state.alpha * _STRAIN_TO_MANDEL
    p = state.p
    plastic = np.zeros(len(p), dtype=bool)
    e0, e1 = eps_old * _STRAIN_TO_MANDEL, eps * _STRAIN_TO_MANDEL
    for k in range(1, substeps + 1):
        theta = k / substeps
        Tk = T_old + theta * (T - T_old)
        co = _LocalCoefficients.at(params, Tk)
        sig, epsp, alpha, p, pl = _evp_update(co, epsp, alpha, p, e0 + theta * (e1 - e0), dt / substeps)
        plastic |= pl
    return sig / _STRESS_TO_MANDEL, epsp / _STRAIN_TO_MANDEL, alpha / _STRAIN_TO_MANDEL, p, plastic


def integrate_evp(
    params: EvpParams,
    state: MaterialState,
    eps_total_new,
    T,
    dt,
    *,
    substeps: int = 1,
    eps_total_old=None,
    T_old=None,
    tangent: bool = True,
):
    """Backward-Euler return mapping for the Norton / kinematic hardening law.

    Vectorized over points: ``eps_total_new`` has shape ``(n, 6)``. ``substeps``
    splits the step into equal sub-increments with linearly interpolated strain
    and temperature, which needs ``eps_total_old`` and ``T_old``.

    Returns ``(sigma, tangent, new_state)``; the tangent is the derivative of the
    stress update with respect to the total strain, by central differences for
    points that flowed plastically and the elastic stiffness elsewhere.
    """
    eps, T, dt = _broadcast_points(eps_total_new, T, dt)
    if np.any(dt <= 0.0):
        raise ValueError("time increment must be positive")
    if substeps > 1:
        if eps_total_old is None:
            raise ValueError("sub-incrementation needs the previous total strain")
        eps_old = np.broadcast_to(np.asarray(eps_total_old, dtype=float), eps.shape)
        T_old = T if T_old is None else np.broadcast_to(np.asarray(T_old, dtype=float), T.shape)
    else:
        eps_old = T_old = None

    sigma, epsp, alpha, p, plastic = _evp_stress(params, state, eps, T, dt, substeps, eps_old, T_old)
    new_state = MaterialState(epsp, alpha, p)
    if not tangent:
        return sigma, None, new_state

    D = elastic_stiffness(params, T).copy()
    idx = np.flatnonzero(plastic)
    if idx.size:
        npl = idx.size
        h = 1e-7 * np.maximum(np.abs(eps[idx]).max(axis=1), 1e-2)
        pert = np.repeat(eps[idx][None], 12, axis=0)  # (12, npl, 6)
        for j in range(6):
            pert[2 * j, :, j] += h
            pert[2 * j + 1, :, j] -= h
        sub_state = state.take(idx)
        rep_state = MaterialState(
            np.tile(sub_state.eps_p, (12, 1)), np.tile(sub_state.alpha, (12, 1)), np.tile(sub_state.p, 12)
        )
        rep_old = None if eps_old is None else np.tile(eps_old[idx], (12, 1))
        rep_Told = None if T_old is None else np.tile(T_old[idx], 12)
        sig_p, *_ = _evp_stress(
            params, rep_state, pert.reshape(-1, 6), np.tile(T[idx], 12), np.tile(dt[idx], 12),
            substeps, rep_old, rep_Told,
        )
        sig_p = sig_p.reshape(12, npl, 6)
        for j in range(6):
            D[idx, :, j] = (sig_p[2 * j] - sig_p[2 * j + 1]) / (2.0 * h[:, None])
    return sigma, D, new_state


def evp_rates(params: EvpParams, sigma_voigt, alpha_voigt, T):
    """Right-hand side of the viscoplastic ODE system at given stress/back-strain.

    Returns ``(eps_p_rate, alpha_rate, p_rate)`` in engineering Voigt form.
    """
    sigma_voigt = np.atleast_2d(sigma_voigt)
    alpha_m = np.atleast_2d(alpha_voigt) * _STRAIN_TO_MANDEL
    s = _dev(sigma_voigt * _STRESS_TO_MANDEL)
    xi = s - (2.0 / 3.0 * params.C(T))[..., None] * alpha_m
    nxi = np.linalg.norm(xi, axis=-1)
    f = _SQ32 * nxi - params.R0(T)
    ratio = np.maximum(f, 0.0) / params.K_norton(T)
    with np.errstate(divide="ignore"):
        pdot = np.where(ratio > 0.0, np.exp(params.m(T) * np.log(np.where(ratio > 0, ratio, 1.0))), 0.0)
    direction = np.where(nxi[..., None] > 0.0, _SQ32 * xi / np.where(nxi > 0, nxi, 1.0)[..., None], 0.0)
    epsp_dot = pdot[..., None] * direction
    alpha_dot = epsp_dot - (pdot * params.D(T))[..., None] * alpha_m
    return epsp_dot / _STRAIN_TO_MANDEL, alpha_dot / _STRAIN_TO_MANDEL, pdot


@njit(cache=True)
def _interp(x, bp, vals, n):
    if x <= bp[0] or n == 1:
        return vals[0]
    if x >= bp[n - 1]:
        return vals[n - 1]
    for i in range(1, n):
        if x < bp[i]:
            w = (x - bp[i - 1]) / (bp[i] - bp[i - 1])
            return vals[i - 1] + w * (vals[i] - vals[i - 1])
    return vals[n - 1]


@njit(cache=True)
def _oracle_coefficients(T, bps, vals, counts, T0, co):
    # co: y1111, y1122, y1212, alpha_th, C, D, K, m, R0, then eps_th
    for j in range(9):
        co[j] = _interp(T, bps[j], vals[j], counts[j])
    co[9] = co[3] * (T - T0)


@njit(cache=True)
def _oracle_rhs(eps, y, co, out, xi):
    y11, y12, y44, C, D, K, m, R0, eth = co[0], co[1], co[2], co[4], co[5], co[6], co[7], co[8], co[9]
    sq2 = np.sqrt(2.0)
    e0 = eps[0] - y[0] - eth
    e1 = eps[1] - y[1] - eth
    e2 = eps[2] - y[2] - eth
    tr = e0 + e1 + e2
    s0 = (y11 - y12) * e0 + y12 * tr
    s1 = (y11 - y12) * e1 + y12 * tr
    s2 = (y11 - y12) * e2 + y12 * tr
    pm = (s0 + s1 + s2) / 3.0
    c23 = 2.0 / 3.0 * C
    xi[0] = s0 - pm - c23 * y[6]
    xi[1] = s1 - pm - c23 * y[7]
    xi[2] = s2 - pm - c23 * y[8]
    for i in range(3, 6):
        # Mandel shear: sqrt2 * y44 * gamma - c23 * gamma_alpha / sqrt2
        xi[i] = sq2 * y44 * (eps[i] - y[i]) - c23 * y[6 + i] / sq2
    nxi = 0.0
    for i in range(6):
        nxi += xi[i] * xi[i]
    nxi = np.sqrt(nxi)
    f = np.sqrt(1.5) * nxi - R0
    pdot = np.exp(m * np.log(f / K)) if f > 0.0 else 0.0
    for i in range(6):
        dm = pdot * np.sqrt(1.5) * xi[i] / nxi if pdot > 0.0 else 0.0
        if i < 3:
            out[i] = dm
            out[6 + i] = dm - pdot * D * y[6 + i]
        else:
            out[i] = dm * sq2
            out[6 + i] = dm * sq2 - pdot * D * y[6 + i]
    out[12] = pdot


@njit(cache=True)
def _oracle_kernel(strain_path, T_path, times, y0, substeps, bps, vals, counts, T0):
    nk = len(times)
    ys = np.empty((nk, 13))
    y = y0.copy()
    ys[0] = y
    k1 = np.empty(13)
    k2 = np.empty(13)
    k3 = np.empty(13)
    k4 = np.empty(13)
    tmp = np.empty(13)
    xi = np.empty(6)
    ea = np.empty(6)
    eb = np.empty(6)
    ec = np.empty(6)
    ca = np.empty(10)
    cb = np.empty(10)
    cc = np.empty(10)
    for k in range(1, nk):
        h = (times[k] - times[k - 1]) / substeps
        dT = T_path[k] - T_path[k - 1]
        const_T = dT == 0.0
        if const_T:
            _oracle_coefficients(T_path[k], bps, vals, counts, T0, ca)
            cb[:] = ca
            cc[:] = ca
        for j in range(substeps):
            a = j / substeps
            b = (j + 0.5) / substeps
            c = (j + 1.0) / substeps
            for i in range(6):
                de = strain_path[k, i] - strain_path[k - 1, i]
                ea[i] = strain_path[k - 1, i] + a * de
                eb[i] = strain_path[k - 1, i] + b * de
                ec[i] = strain_path[k - 1, i] + c * de
            if not const_T:
                _oracle_coefficients(T_path[k - 1] + a * dT, bps, vals, counts, T0, ca)
                _oracle_coefficients(T_path[k - 1] + b * dT, bps, vals, counts, T0, cb)
                _oracle_coefficients(T_path[k - 1] + c * dT, bps, vals, counts, T0, cc)
            _oracle_rhs(ea, y, ca, k1, xi)
            for i in range(13):
                tmp[i] = y[i] + 0.5 * h * k1[i]
            _oracle_rhs(eb, tmp, cb, k2, xi)
            for i in range(13):
                tmp[i] = y[i] + 0.5 * h * k2[i]
            _oracle_rhs(eb, tmp, cb, k3, xi)
            for i in range(13):
                tmp[i] = y[i] + h * k3[i]
            _oracle_rhs(ec, tmp, cc, k4, xi)
            for i in range(13):
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        ys[k] = y
    return ys


def _oracle_tables(params: EvpParams):
    tabs = [getattr(params, name) for name in ("y1111", "y1122", "y1212", "alpha_th", "C", "D", "K_norton", "m", "R0")]
    width = max(len(t.breakpoints) for t in tabs)
    bps = np.zeros((9, width))
    vals = np.zeros((9, width))
    counts = np.zeros(9, dtype=np.int64)
    for j, t in enumerate(tabs):
        counts[j] = len(t.breakpoints)
        bps[j, : counts[j]] = t.breakpoints
        vals[j, : counts[j]] = t.values
    return bps, vals, counts, float(params.T0)


def evp_oracle(
    params: EvpParams,
    state: MaterialState,
    strain_path: Sequence,
    T_path: Sequence,
    times: Sequence,
    substeps: int = 10_000,
):
    """Explicit RK4 integration of the exact viscoplastic ODEs along a path.

    ``strain_path[k]`` (engineering Voigt) and ``T_path[k]`` are the values at
    ``times[k]`` and are interpolated linearly within each interval; ``state``
    holds one point (the path start). Returns ``(sigma, p, states)`` with one
    entry per path entry.

    Only meant as a verification reference for :func:`integrate_evp`.
    """
    if substeps < 1000:
        raise ValueError("oracle needs at least 1000 substeps per step")
    strain_path = np.ascontiguousarray(strain_path, dtype=float).reshape(-1, 6)
    times = np.ascontiguousarray(times, dtype=float)
    T_path = np.ascontiguousarray(np.broadcast_to(T_path, times.shape), dtype=float)
    y0 = np.ascontiguousarray(state.as_table()[0])
    ys = _oracle_kernel(strain_path, T_path, times, y0, int(substeps), *_oracle_tables(params))
    states = [MaterialState.from_table(y[None]) for y in ys]
    A = elastic_stiffness(params, T_path)
    sigma = np.einsum("kij,kj->ki", A, strain_path - thermal_strain(params, T_path) - ys[:, :6])
    return sigma, ys[:, 12].copy(), states


class ElasLaw:
    """Stateless law wrapper used by the solvers."""

    name = "elas"
    has_state = False

    def __init__(self, params: ElasParams):
        self.params = params

    def evaluate(self, state: MaterialState, eps, T, dt, eps_old=None, T_old=None, tangent=True):
        sigma, D = integrate_elas(self.params, eps, T)
        return sigma, (D if tangent else None), state


class EvpLaw:
    name = "evp"
    has_state = True

    def __init__(self, params: EvpParams, substeps: int = 1):
        self.params = params
        self.substeps = substeps

    def evaluate(self, state: MaterialState, eps, T, dt, eps_old=None, T_old=None, tangent=True):
        return integrate_evp(
            self.params, state, eps, T, dt,
            substeps=self.substeps, eps_total_old=eps_old, T_old=T_old, tangent=tangent,
        )


def make_law(kind: str, params, **options):
    if kind == "elas":
        return ElasLaw(params)
    if kind == "evp":
        return EvpLaw(params, **options)
    raise ValueError(f"unknown behavior law {kind!r}")
