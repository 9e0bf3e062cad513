"""Offline and online workflows, persistence layout and exporters.

Output directory layout::

    offline/   archive/, model.npz, calibration.json, mesh.txt, manifest.json,
               pod_spectrum.csv, quadrature.csv, calibration_pairs.csv
    reference/ HF snapshot archive of the online loading
    online/    enrichment_log.csv, solution.npz, summary.json
    export/    regions.csv, step_XXXX.vtk
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import EnrichmentSettings, Tolerances
from .fem import build_integration_table, element_average, read_mesh, write_mesh, write_vtk
from .hf import LoadingProgram, LoadingRecord, Problem, SnapshotArchive, run_transient
from .indicator import Calibration, calibrate, compute_fallbacks, region_key, region_norm, step_measures
from .rom import DUAL_QUANTITIES, ReducedModel, RomRunner, build_reduced_model, dual_values


class PipelineError(RuntimeError):
    """A workflow stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class _Stage:
    """Context manager turning any failure into a ``PipelineError``."""

    def __init__(self, name: str, timings: dict | None = None):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, kind, exc, tb):
        if self.timings is not None:
            self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, f"{type(exc).__name__}: {exc}") from exc
        return False


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


# offline ---------------------------------------------------------------------

@dataclass(eq=False)
class OfflineArtifacts:
    archive: SnapshotArchive
    model: ReducedModel
    calibration: Calibration
    timings: dict = field(default_factory=dict)


def offline_pipeline(
    problem: Problem,
    loadings,
    tolerances: Tolerances = Tolerances(),
    quantities=DUAL_QUANTITIES,
    regions=(None,),
    archive: SnapshotArchive | None = None,
) -> OfflineArtifacts:
    """Data generation, POD, ECM, Gappy offline stage and calibration."""
    timings: dict = {}
    loadings = list(loadings)
    if archive is None:
        archive = SnapshotArchive()
        with _Stage("hf", timings):
            for loading in loadings:
                archive.add(run_transient(problem, loading, tolerances.hf_newton))
    with _Stage("reduction", timings):
        model = build_reduced_model(problem, archive, tolerances.pod, tolerances.op_comp,
                                    tolerances.gappy_pod, quantities)
    with _Stage("calibration", timings):
        cal = calibrate(problem, archive, model, loadings, regions, quantities, tolerances.calibration)
    return OfflineArtifacts(archive, model, cal, timings)


def save_offline(directory, problem: Problem, artifacts: OfflineArtifacts, tolerances: Tolerances) -> None:
    root = Path(directory) / "offline"
    root.mkdir(parents=True, exist_ok=True)
    artifacts.archive.save(root / "archive")
    artifacts.model.save(root / "model.npz")
    write_mesh(problem.mesh, root / "mesh.txt")
    (root / "calibration.json").write_text(json.dumps(artifacts.calibration.to_dict(), indent=1))
    primal = artifacts.model.primal
    spectrum = primal.spectrum if primal is not None else np.zeros(0)
    write_csv(root / "pod_spectrum.csv", ["index", "eigenvalue", "retained"],
              [(i, lam, i < artifacts.model.n) for i, lam in enumerate(spectrum)])
    quad = artifacts.model.quadrature
    write_csv(root / "quadrature.csv", ["point", "weight"], zip(quad.indices, quad.weights))
    rows = [(q, r, label, k, res, err) for (q, r), pairs in artifacts.calibration.pairs.items()
            for label, k, res, err in pairs]
    write_csv(root / "calibration_pairs.csv", ["quantity", "region", "loading", "step", "residual", "error"], rows)
    manifest = {
        "loadings": artifacts.archive.labels,
        "model": artifacts.model.summary(),
        "ecm_residual": quad.residual,
        "tolerances": tolerances.__dict__,
        "calibrated": sorted(f"{q}|{r}" for q, r in artifacts.calibration.models),
        "timings": artifacts.timings,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_offline(directory, problem: Problem) -> OfflineArtifacts:
    root = Path(directory) / "offline"
    if not (root / "manifest.json").exists():
        raise FileNotFoundError(f"no offline artifacts in {root}")
    archive = SnapshotArchive.load(root / "archive")
    model = ReducedModel.load(root / "model.npz", problem)
    cal = Calibration.from_dict(json.loads((root / "calibration.json").read_text()))
    # the displacement basis is rebuilt exactly from its stored modes
    return OfflineArtifacts(archive, model, cal)


# online ----------------------------------------------------------------------

@dataclass
class StepLog:
    step: int
    time: float
    iterations: int
    enriched: bool
    residuals: dict
    indicators: dict
    errors: dict
    sizes: dict


@dataclass(eq=False)
class EnrichmentLog:
    entries: list = field(default_factory=list)
    monitored: tuple = ()
    reported: tuple = ()
    quantities: tuple = ()

    @property
    def n_enrichments(self) -> int:
        return sum(e.enriched for e in self.entries)

    def max_error(self, keys=None, skip_enriched: bool = True) -> float:
        keys = self.monitored if keys is None else keys
        vals = [e.errors.get(k, np.nan) for e in self.entries if not (skip_enriched and e.enriched) for k in keys]
        vals = [v for v in vals if np.isfinite(v)]
        return max(vals) if vals else float("nan")

    def header(self) -> list:
        cols = ["step", "time", "iterations", "enriched", "n", "d"]
        cols += [f"n_{q}" for q in self.quantities]
        cols += [f"residual_{q}_{r}" for q, r in self.monitored]
        cols += [f"indicator_{q}_{r}" for q, r in self.monitored]
        cols += [f"error_{q}_{r}" for q, r in self.reported]
        return cols

    def rows(self):
        for e in self.entries:
            yield ([e.step, e.time, e.iterations, e.enriched, e.sizes["n"], e.sizes["d"]]
                   + [e.sizes[f"n_{q}"] for q in self.quantities]
                   + [e.residuals[k] for k in self.monitored]
                   + [e.indicators[k] for k in self.monitored]
                   + [e.errors.get(k, np.nan) for k in self.reported])

    def to_csv(self, path) -> None:
        write_csv(path, self.header(), self.rows())


@dataclass(eq=False)
class OnlineResult:
    u: np.ndarray  # (K, n_dofs)
    duals: dict  # quantity -> (K, N_G)
    log: EnrichmentLog
    model: ReducedModel
    timings: dict = field(default_factory=dict)

    def save(self, directory) -> None:
        root = Path(directory) / "online"
        root.mkdir(parents=True, exist_ok=True)
        self.log.to_csv(root / "enrichment_log.csv")
        enriched = np.array([e.enriched for e in self.log.entries], dtype=bool)
        times = np.array([e.time for e in self.log.entries])
        np.savez(root / "solution.npz", u=self.u, times=times, enriched=enriched,
                 **{f"dual_{q}": v for q, v in self.duals.items()})
        summary = {"enrichments": self.log.n_enrichments, "final_model": self.model.summary(),
                   "timings": self.timings}
        (root / "summary.json").write_text(json.dumps(summary, indent=1))


def _enriched_archive(archive: SnapshotArchive, reference: LoadingRecord, steps) -> SnapshotArchive:
    out = SnapshotArchive(dict(archive.records))
    ks = np.asarray(steps, dtype=np.int64)
    out.add(LoadingRecord(f"{reference.label} (enrichment)", reference.times[ks], reference.u[ks],
                          reference.sigma[ks], reference.p[ks], reference.states[ks],
                          reference.iterations[ks]))
    return out


def _sizes(model: ReducedModel) -> dict:
    return {"n": model.n, "d": model.d, **{f"n_{q}": d.n for q, d in model.duals.items()}}


def online_pipeline(
    problem: Problem,
    artifacts: OfflineArtifacts,
    loading: LoadingProgram,
    tolerances: Tolerances = Tolerances(),
    settings: EnrichmentSettings = EnrichmentSettings(),
    reference: LoadingRecord | None = None,
    enrich: bool = True,
    report_regions=None,
) -> OnlineResult:
    """Reduced online stage with indicator-driven enrichment.

    At each step the reduced solution is computed and reconstructed, then the
    indicator is evaluated on every monitored ``(quantity, region)``. If one
    exceeds the threshold, the step is replaced by the HF reference, that
    snapshot joins the snapshot set, the model is rebuilt from scratch and
    the step's indicators and errors are set to zero.
    """
    enrich = enrich and settings.enabled
    if enrich and reference is None:
        raise PipelineError("config", "enrichment requires an HF reference of the online loading")
    if reference is not None and reference.n_steps != loading.n_steps:
        raise PipelineError("config", "HF reference and online loading have different time steps")
    monitored_regions = tuple(None if r == "all" else int(r) for r in settings.regions)
    quantities = tuple(settings.quantities)
    monitored = tuple((q, region_key(r)) for q in quantities for r in monitored_regions)
    missing = [k for k in monitored if k not in artifacts.calibration.models]
    if missing:
        raise PipelineError("calibration", f"no calibrated indicator for {missing}")
    if report_regions is None:
        report_regions = monitored_regions
    report_regions = tuple(dict.fromkeys(tuple(monitored_regions) + tuple(report_regions)))
    reported = tuple((q, region_key(r)) for q in quantities for r in report_regions)

    timings: dict = {}
    model = artifacts.model
    fallbacks = compute_fallbacks(problem, artifacts.archive, model, quantities, report_regions)
    runner = RomRunner(model, problem, loading, tolerances.rom_newton)
    log = EnrichmentLog([], monitored, reported, tuple(model.duals))
    all_q = tuple(model.duals)
    u_out = np.zeros((loading.n_steps, problem.mesh.n_dofs))
    duals_out = {q: np.zeros((loading.n_steps, problem.n_points)) for q in all_q}
    enriched_steps: list[int] = []

    for k in range(loading.n_steps):
        with _Stage("online", timings):
            res = runner.step()
            ref = None if reference is None else (reference.sigma[k], reference.p[k])
            residuals, errors = step_measures(problem, model, res, quantities, report_regions,
                                              fallbacks, ref, strict=False)
            residuals = {key: residuals[key] for key in monitored}
            indicators = {key: artifacts.calibration.indicator(key[0], key[1], v)
                          if np.isfinite(v) else float("nan") for key, v in residuals.items()}
        trigger = enrich and any(v > settings.threshold for v in indicators.values())
        if trigger:
            with _Stage("enrichment", timings):
                enriched_steps.append(k)
                snapshots = _enriched_archive(artifacts.archive, reference, enriched_steps)
                model = build_reduced_model(problem, snapshots, tolerances.pod, tolerances.op_comp,
                                            tolerances.gappy_pod, all_q)
                fallbacks = compute_fallbacks(problem, artifacts.archive, model, quantities, report_regions)
                runner.set_model(model)
                runner.reset_from_full(reference.u[k], reference.state(k))
            u_out[k] = reference.u[k]
            for q in all_q:
                duals_out[q][k] = dual_values(q, reference.sigma[k], reference.p[k])
            residuals = dict.fromkeys(residuals, 0.0)
            indicators = dict.fromkeys(indicators, 0.0)
            errors = dict.fromkeys(errors, 0.0)
        else:
            u_out[k] = model.displacement(res.u_hat)
            for q in all_q:
                duals_out[q][k] = res.tilde[q]
        log.entries.append(StepLog(k, float(loading.times[k]), res.iterations, trigger,
                                   residuals, indicators, errors, _sizes(model)))
    return OnlineResult(u_out, duals_out, log, model, timings)


def hf_reference(problem: Problem, loading: LoadingProgram, tolerances: Tolerances = Tolerances()) -> SnapshotArchive:
    archive = SnapshotArchive()
    with _Stage("hf"):
        archive.add(run_transient(problem, loading, tolerances.hf_newton))
    return archive


# export ----------------------------------------------------------------------

def region_rows(table, step: int, duals: dict):
    """Per-region volume and squared L2 norms; the region rows sum to the ``all`` row."""
    regions = [r for r in np.unique(table.point_regions)]
    rows = []
    for reg in regions + [None]:
        row = [step, region_key(reg), table.volume(reg)]
        row += [region_norm(table, duals[q], reg) ** 2 for q in duals]
        rows.append(row)
    return rows


def export_results(directory, vtk: bool = True) -> list[Path]:
    """Write ``export/regions.csv`` and per-step VTK files from saved artifacts."""
    root = Path(directory)
    mesh = read_mesh(root / "offline" / "mesh.txt")
    table = build_integration_table(mesh)
    out = root / "export"
    out.mkdir(parents=True, exist_ok=True)
    sol_path = root / "online" / "solution.npz"
    written = []
    quantities: list[str] = []
    rows = []
    if sol_path.exists():
        data = np.load(sol_path)
        quantities = sorted((k[5:] for k in data.files if k.startswith("dual_")),
                            key=lambda q: DUAL_QUANTITIES.index(q))
        u = data["u"]
        for k in range(len(u)):
            duals = {q: data[f"dual_{q}"][k] for q in quantities}
            rows += region_rows(table, k, duals)
            if vtk:
                path = out / f"step_{k:04d}.vtk"
                cells = {q: element_average(table, duals[q]) for q in quantities}
                cells["region"] = mesh.region_ids.astype(float)
                write_vtk(path, mesh, {"displacement": u[k].reshape(-1, 3)}, cells)
                written.append(path)
    path = out / "regions.csv"
    write_csv(path, ["step", "region", "volume"] + [f"norm2_{q}" for q in quantities], rows)
    written.insert(0, path)
    return written
