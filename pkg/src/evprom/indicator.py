"""Error measures, Gaussian-process calibration and the Gpr error indicator."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .fem import GlobalIntegrationTable
from .hf import Problem, SnapshotArchive
from .rom import ReducedModel, RomRunner, dual_values

CALIBRATION_TOL = 0.1
GRID_POINTS = 5


class UndefinedMeasureError(ValueError):
    """Both the natural and the fallback denominators vanish."""


def _ratio(num: float, den: float, fallback) -> float:
    if den > 0.0:
        return num / den
    if fallback is not None and fallback > 0.0:
        return num / fallback
    raise UndefinedMeasureError("reference norm and fallback denominator are both zero")


def region_norm(table: GlobalIntegrationTable, values, region=None) -> float:
    mask = table.region_mask(region)
    v = np.asarray(values, dtype=float)[mask]
    return float(np.sqrt(np.sum(table.measures[mask] * v * v)))


def relative_error(table: GlobalIntegrationTable, q_hf, q_rec, region=None, fallback=None) -> float:
    """``||q_hf - q_rec|| / ||q_hf||`` in the point-measure L2 norm of ``region``.

    When ``q_hf`` vanishes on the region, ``fallback`` (the largest offline
    reference norm) is used as denominator.
    """
    q_hf = np.asarray(q_hf, dtype=float)
    q_rec = np.asarray(q_rec, dtype=float)
    if q_hf.shape != q_rec.shape or q_hf.shape != (table.n_points,):
        raise ValueError("fields must hold one value per integration point")
    return _ratio(region_norm(table, q_hf - q_rec, region), region_norm(table, q_hf, region), fallback)


def gappy_residual(p_hat, p_tilde_at_points, fallback=None) -> float:
    """``||p_tilde - p_hat||_2 / ||p_hat||_2`` over the Gappy points."""
    p_hat = np.asarray(p_hat, dtype=float)
    p_tilde = np.asarray(p_tilde_at_points, dtype=float)
    if p_hat.shape != p_tilde.shape:
        raise ValueError("Gappy residual needs values at the same points")
    return _ratio(float(np.linalg.norm(p_tilde - p_hat)), float(np.linalg.norm(p_hat)), fallback)


@dataclass(eq=False)
class GprModel:
    """1-D Gaussian process: linear prior mean, squared-exponential plus white noise.

    The prior mean is ``mean + slope * x``; ``slope`` is nonnegative.
    """

    X: np.ndarray
    y: np.ndarray
    mean: float
    signal_var: float
    length: float
    noise_var: float
    degenerate: bool = False
    log_likelihood: float = float("nan")
    slope: float = 0.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self._alpha = None
        if not self.degenerate:
            K = _kernel(self.X, self.X, self.signal_var, self.length) + self.noise_var * np.eye(len(self.X))
            self._chol = sla.cho_factor(K, lower=True)
            self._alpha = sla.cho_solve(self._chol, self.y - self.prior_mean(self.X))

    def prior_mean(self, x):
        return self.mean + self.slope * np.asarray(x, dtype=float)

    def predict(self, x):
        """Predictive mean and standard deviation (noise included)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        prior = self.signal_var + self.noise_var
        if self.degenerate:
            return self.prior_mean(x), np.full(x.shape, np.sqrt(prior))
        ks = _kernel(x, self.X, self.signal_var, self.length)
        mu = self.prior_mean(x) + ks @ self._alpha
        v = sla.cho_solve(self._chol, ks.T)
        var = prior - np.einsum("ij,ji->i", ks, v)
        return mu, np.sqrt(np.maximum(var, 0.0))

    def to_dict(self) -> dict:
        return {
            "X": self.X.tolist(), "y": self.y.tolist(), "mean": self.mean, "slope": self.slope,
            "signal_var": self.signal_var, "length": self.length, "noise_var": self.noise_var,
            "degenerate": self.degenerate, "log_likelihood": self.log_likelihood,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GprModel":
        return cls(**d)


def _kernel(a, b, signal_var, length):
    d = np.subtract.outer(np.asarray(a, float), np.asarray(b, float))
    return signal_var * np.exp(-0.5 * (d / length) ** 2)


def log_marginal_likelihood(X, y, mean, signal_var, length, noise_var) -> float:
    K = _kernel(X, X, signal_var, length) + noise_var * np.eye(len(X))
    try:
        c, low = sla.cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf
    r = np.asarray(y) - mean
    a = sla.cho_solve((c, low), r)
    return float(-0.5 * r @ a - np.log(np.diag(c)).sum() - 0.5 * len(X) * np.log(2.0 * np.pi))


def linear_trend(X, y):
    """Least-squares line ``y ~ a + b x`` with ``b >= 0`` (constant when ``b`` would be negative)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = X - X.mean()
    sxx = float(dx @ dx)
    b = float(dx @ (y - y.mean())) / sxx if sxx > 0.0 else 0.0
    if b <= 0.0:
        return float(y.mean()), 0.0
    return float(y.mean() - b * X.mean()), b


def gpr_fit(X, y) -> GprModel:
    """Maximum-likelihood fit over a 5x5x5 log grid, refined once around the best.

    The prior mean is a nondecreasing least-squares line, so predictions
    beyond the calibrated residual range follow the calibrated trend instead
    of falling back to a constant. The grid spans signal and noise variances
    relative to the variance about that line and length scales from 0.3 to
    30 times the input range, which keeps the regressor from interpolating
    clusters of near-identical inputs. Fewer than two distinct inputs give a
    degenerate constant model.
    """
    X = np.asarray(X, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if X.shape != y.shape or X.size == 0:
        raise ValueError("GPR needs matching, nonempty inputs and targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("GPR training data must be finite")
    if len(np.unique(X)) < 2:
        mean = float(y.mean())
        return GprModel(X, y, mean, float(y.var()), 1.0, 0.0, degenerate=True)
    mean, slope = linear_trend(X, y)
    r = y - mean - slope * X
    var_y = float(r.var())
    scale_y = max(var_y, 1e-12 * max(1.0, float(y.mean()) ** 2))
    span = float(X.max() - X.min())
    # log-space grid centers and half widths: signal variance, length, noise variance
    centers = np.log(np.array([scale_y, 3.0 * span, 1e-3 * scale_y]))
    halfwidth = np.log(np.array([100.0, 10.0, 1e3]))

    def search(c, h):
        axes = [np.linspace(ci - hi, ci + hi, GRID_POINTS) for ci, hi in zip(c, h)]
        best, best_ll = None, -np.inf
        for ls, ll_, ln in itertools.product(*axes):
            val = log_marginal_likelihood(X, r, 0.0, np.exp(ls), np.exp(ll_), np.exp(ln))
            if val > best_ll:
                best, best_ll = np.array([ls, ll_, ln]), val
        return best, best_ll

    best, ll = search(centers, halfwidth)
    if best is None:
        raise ValueError("log marginal likelihood is not finite on the search grid")
    step = 2.0 * halfwidth / (GRID_POINTS - 1)
    best2, ll2 = search(best, step)
    if best2 is not None and ll2 >= ll:
        best, ll = best2, ll2
    s, l, n = np.exp(best)
    return GprModel(X, y, mean, float(s), float(l), float(n), log_likelihood=float(ll), slope=slope)


def gpr_indicator(model: GprModel, residual) -> float:
    """Predictive mean plus three predictive standard deviations."""
    mu, sd = model.predict([float(residual)])
    return float(mu[0] + 3.0 * sd[0])


@dataclass(eq=False)
class Fallbacks:
    """Largest offline reference norms per ``(quantity, region)``."""

    fields: dict = field(default_factory=dict)
    points: dict = field(default_factory=dict)


def region_key(region) -> str:
    return "all" if region is None or region == "all" else str(int(region))


def point_subset(model: ReducedModel, table: GlobalIntegrationTable, quantity: str, region=None):
    """Positions (within the Gappy point list) of the points inside ``region``."""
    pts = model.duals[quantity].points
    return np.flatnonzero(table.region_mask(region)[pts])


def compute_fallbacks(problem: Problem, archive: SnapshotArchive, model: ReducedModel,
                      quantities, regions) -> Fallbacks:
    table = problem.table
    fb = Fallbacks()
    sigma, p = archive.stacked("sigma"), archive.stacked("p")
    for q in quantities:
        vals = dual_values(q, sigma, p)
        for reg in regions:
            key = (q, region_key(reg))
            fb.fields[key] = max(region_norm(table, v, reg) for v in vals)
            sel = model.duals[q].points[point_subset(model, table, q, reg)]
            fb.points[key] = float(np.max(np.linalg.norm(vals[:, sel], axis=1))) if sel.size else 0.0
    return fb


def step_measures(problem: Problem, model: ReducedModel, rom_step, quantities, regions,
                  fallbacks: Fallbacks, reference=None, strict: bool = True):
    """Gappy residuals (and errors when HF ``reference = (sigma, p)`` is given).

    With ``strict=False`` an undefined measure is reported as NaN instead of
    raising.
    """
    table = problem.table
    residuals, errors = {}, {}
    for q in quantities:
        for reg in regions:
            key = (q, region_key(reg))
            sel = point_subset(model, table, q, reg)
            residuals[key] = _measure(strict, gappy_residual, rom_step.hat[q][sel],
                                      rom_step.tilde_at_points[q][sel], fallbacks.points.get(key))
            if reference is not None:
                ref = dual_values(q, *reference)
                errors[key] = _measure(strict, relative_error, table, ref, rom_step.tilde[q], reg,
                                       fallbacks.fields.get(key))
    return residuals, errors


def _measure(strict, fn, *args):
    try:
        return fn(*args)
    except UndefinedMeasureError:
        if strict:
            raise
        return float("nan")


@dataclass(eq=False)
class Calibration:
    models: dict  # (quantity, region key) -> GprModel
    pairs: dict  # (quantity, region key) -> list of (label, step, residual, error)
    fallbacks: Fallbacks

    def indicator(self, quantity: str, region, residual: float) -> float:
        return gpr_indicator(self.models[(quantity, region_key(region))], residual)

    def to_dict(self) -> dict:
        return {
            "models": {f"{q}|{r}": m.to_dict() for (q, r), m in self.models.items()},
            "pairs": {f"{q}|{r}": v for (q, r), v in self.pairs.items()},
            "fallbacks_field": {f"{q}|{r}": v for (q, r), v in self.fallbacks.fields.items()},
            "fallbacks_points": {f"{q}|{r}": v for (q, r), v in self.fallbacks.points.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        def keyed(m):
            return {tuple(k.split("|")): v for k, v in m.items()}

        models = {k: GprModel.from_dict(v) for k, v in keyed(d["models"]).items()}
        fb = Fallbacks(keyed(d["fallbacks_field"]), keyed(d["fallbacks_points"]))
        return cls(models, {k: [tuple(x) for x in v] for k, v in keyed(d["pairs"]).items()}, fb)


def calibrate(
    problem: Problem,
    archive: SnapshotArchive,
    model: ReducedModel,
    loadings,
    regions=(None,),
    quantities=None,
    tol: float = CALIBRATION_TOL,
) -> Calibration:
    """Replay the offline loadings with a loose reduced solve and fit one
    Gaussian process per ``(quantity, region)``.

    Plasticity pairs preceding the first plastic step of a loading (on the
    region) are discarded, as are pairs whose residual or error is undefined.
    A key left without pairs gets no model.
    """
    quantities = tuple(model.duals) if quantities is None else tuple(quantities)
    fallbacks = compute_fallbacks(problem, archive, model, quantities, regions)
    pairs = {(q, region_key(r)): [] for q in quantities for r in regions}
    for loading in loadings:
        rec = archive[loading.label]
        runner = RomRunner(model, problem, loading, tol)
        plastic_started = {region_key(r): False for r in regions}
        for k in range(loading.n_steps):
            res = runner.step()
            for r in regions:
                rk = region_key(r)
                if rec.p[k][problem.table.region_mask(r)].max() > 0.0:
                    plastic_started[rk] = True
            residuals, errors = step_measures(
                problem, model, res, quantities, regions, fallbacks, (rec.sigma[k], rec.p[k]), strict=False)
            for key, res_val in residuals.items():
                if key[0] == "p" and not plastic_started[key[1]]:
                    continue
                if not (np.isfinite(res_val) and np.isfinite(errors[key])):
                    continue
                pairs[key].append((loading.label, k, res_val, errors[key]))
    models = {}
    for key, pts in pairs.items():
        if pts:
            models[key] = gpr_fit([x[2] for x in pts], [x[3] for x in pts])
    return Calibration(models, pairs, fallbacks)


def pearson(pairs) -> float:
    x = np.array([p[2] for p in pairs])
    y = np.array([p[3] for p in pairs])
    if len(x) < 2 or x.std() == 0 or y.std() == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])

