"""Pipeline configuration: YAML parsing and validation.

Unknown keys are rejected so that typos fail early.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .behavior import ElasParams, EvpParams, isotropic_params, make_law
from .fem import Mesh, box_mesh, read_mesh
from .hf import RPM_TO_RAD_S, LoadingProgram, PiecewiseLinear, Problem
from .rom import DUAL_QUANTITIES

OUTPUT_ENV = "EVPROM_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


def _check_keys(block: dict, allowed, where: str, required=()) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    missing = [k for k in required if k not in block]
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")


@dataclass
class Tolerances:
    hf_newton: float = 1e-5
    pod: float = 1e-5
    op_comp: float = 1e-4
    rom_newton: float = 1e-4
    gappy_pod: float = 1e-5
    calibration: float = 0.1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not float(value) > 0:
                raise ConfigError(f"tolerance {name} must be positive")
            setattr(self, name, float(value))
        for name in ("pod", "gappy_pod"):
            if getattr(self, name) >= 1.0:
                raise ConfigError(f"tolerance {name} must be below 1")


@dataclass
class EnrichmentSettings:
    threshold: float = 0.2
    quantities: tuple = ("p", "s11")
    regions: tuple = ("all",)
    enabled: bool = True


@dataclass
class PipelineConfig:
    source: Path
    mesh: Mesh
    law_kind: str
    law_params: object
    law_options: dict
    loadings: dict
    offline: list
    online: str | None
    tolerances: Tolerances = field(default_factory=Tolerances)
    enrichment: EnrichmentSettings = field(default_factory=EnrichmentSettings)
    quantities: tuple = DUAL_QUANTITIES
    output: Path = Path("evprom_output")
    vtk: bool = False

    def problem(self) -> Problem:
        return Problem(self.mesh, make_law(self.law_kind, self.law_params, **self.law_options))

    @property
    def calibration_regions(self):
        return tuple(None if r == "all" else int(r) for r in self.enrichment.regions)


# temperature fields ----------------------------------------------------------

def _field_term(term: dict, nodes: np.ndarray, base_dir: Path, where: str) -> np.ndarray:
    if not isinstance(term, dict) or len(term) != 1:
        raise ConfigError(f"{where}: each term needs exactly one kind")
    kind, spec = next(iter(term.items()))
    if kind == "uniform":
        return np.full(len(nodes), float(spec))
    if kind == "linear":
        _check_keys(spec, ("gradient", "origin"), where, ("gradient",))
        origin = np.asarray(spec.get("origin", [0, 0, 0]), dtype=float)
        return (nodes - origin) @ np.asarray(spec["gradient"], dtype=float)
    if kind == "power":
        _check_keys(spec, ("axis", "origin", "length", "amplitude", "exponent"), where,
                    ("axis", "length", "amplitude"))
        axis = "xyz".index(spec["axis"])
        s = (nodes[:, axis] - float(spec.get("origin", 0.0))) / float(spec["length"])
        return float(spec["amplitude"]) * np.clip(s, 0.0, None) ** float(spec.get("exponent", 1.0))
    if kind == "gaussian":
        _check_keys(spec, ("center", "radius", "amplitude", "axes"), where, ("center", "radius", "amplitude"))
        axes = ["xyz".index(a) for a in spec.get("axes", "xyz")]
        center = np.asarray(spec["center"], dtype=float)
        d2 = ((nodes[:, axes] - center[axes]) ** 2).sum(axis=1)
        return float(spec["amplitude"]) * np.exp(-d2 / float(spec["radius"]) ** 2)
    if kind == "file":
        values = np.loadtxt(base_dir / spec, dtype=float).ravel()
        if len(values) != len(nodes):
            raise ConfigError(f"{where}: nodal file has {len(values)} values for {len(nodes)} nodes")
        return values
    raise ConfigError(f"{where}: unknown temperature term {kind!r}")


def temperature_field(spec, nodes: np.ndarray, base_dir: Path = Path("."), where: str = "field"):
    """Sum of terms: ``uniform``, ``linear``, ``power``, ``gaussian`` or ``file``."""
    terms = spec if isinstance(spec, list) else [spec]
    return sum(_field_term(t, nodes, base_dir, where) for t in terms)


# blocks ----------------------------------------------------------------------

def _mesh(block: dict, base_dir: Path) -> Mesh:
    _check_keys(block, ("box", "file", "dirichlet"), "mesh", ("dirichlet",))
    if ("box" in block) == ("file" in block):
        raise ConfigError("mesh: give exactly one of 'box' or 'file'")
    if "box" in block:
        box = block["box"]
        _check_keys(box, ("lengths", "divisions", "kind", "waist", "region_splits"), "mesh.box",
                    ("lengths", "divisions"))
        mesh = box_mesh(box["lengths"], box["divisions"], box.get("kind", "hex8"),
                        float(box.get("waist", 0.0)), box.get("region_splits", ()))
    else:
        mesh = read_mesh(base_dir / block["file"])
    specs = []
    for i, d in enumerate(block["dirichlet"]):
        _check_keys(d, ("label", "components"), f"mesh.dirichlet[{i}]", ("label",))
        specs.append((d["label"], tuple(int(c) for c in d.get("components", (0, 1, 2)))))
    return mesh.with_dirichlet(specs)


def _material(block: dict):
    _check_keys(block, ("law", "substeps", "isotropic", "parameters"), "material", ("law",))
    kind = block["law"]
    if kind not in ("elas", "evp"):
        raise ConfigError(f"material.law must be 'elas' or 'evp', got {kind!r}")
    params = dict(block.get("parameters", {}))
    if "isotropic" in block:
        iso = block["isotropic"]
        _check_keys(iso, ("E", "nu"), "material.isotropic", ("E", "nu"))
        params = {**isotropic_params(float(iso["E"]), float(iso["nu"])), **params}
    cls = EvpParams if kind == "evp" else ElasParams
    try:
        p = cls(**params)
        p.check()
    except TypeError as exc:
        raise ConfigError(f"material.parameters: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"material.parameters: {exc}") from exc
    options = {"substeps": int(block["substeps"])} if "substeps" in block and kind == "evp" else {}
    return kind, p, options


def _times(spec, where: str) -> np.ndarray:
    if isinstance(spec, dict):
        _check_keys(spec, ("start", "stop", "step"), where, ("start", "stop", "step"))
        start, stop, step = (float(spec[k]) for k in ("start", "stop", "step"))
        count = int(round((stop - start) / step)) + 1
        return start + step * np.arange(count)
    return np.asarray(spec, dtype=float)


def _loading(block: dict, fields: dict, mesh: Mesh) -> LoadingProgram:
    where = f"loading {block.get('label', '?')!r}"
    _check_keys(block, ("label", "times", "rotation", "axis", "density", "pressure", "temperature"),
                where, ("label", "times"))
    kwargs = {}
    if "rotation" in block:
        rot = block["rotation"]
        _check_keys(rot, ("times", "rpm", "rad_s"), f"{where}.rotation", ("times",))
        if ("rpm" in rot) == ("rad_s" in rot):
            raise ConfigError(f"{where}.rotation: give exactly one of 'rpm' or 'rad_s'")
        values = np.asarray(rot["rpm"], float) * RPM_TO_RAD_S if "rpm" in rot else rot["rad_s"]
        kwargs["rotation_speed"] = PiecewiseLinear(rot["times"], values)
    if "axis" in block:
        _check_keys(block["axis"], ("point", "direction"), f"{where}.axis", ("point", "direction"))
        kwargs["axis_point"] = block["axis"]["point"]
        kwargs["axis_direction"] = block["axis"]["direction"]
    if "density" in block:
        kwargs["density"] = float(block["density"])
    if "pressure" in block:
        pr = block["pressure"]
        _check_keys(pr, ("times", "values", "shape"), f"{where}.pressure", ("times", "values", "shape"))
        kwargs["pressure_coefficient"] = PiecewiseLinear(pr["times"], pr["values"])
        kwargs["pressure_shape"] = pr["shape"]
        missing = set(pr["shape"]) - set(mesh.facet_labels)
        if missing:
            raise ConfigError(f"{where}.pressure: unknown surfaces {sorted(missing)}")
    if "temperature" in block:
        frames = []
        for entry in block["temperature"]:
            t, name = entry
            if name not in fields:
                raise ConfigError(f"{where}: unknown temperature field {name!r}")
            frames.append((float(t), fields[name]))
        kwargs["temperature_keyframes"] = frames
    try:
        loading = LoadingProgram(block["label"], _times(block["times"], f"{where}.times"), **kwargs)
        mesh.check_boundaries(loading.pressure_shape)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return loading


def parse_config(data: dict, source: Path = Path("config.yaml")) -> PipelineConfig:
    _check_keys(data, ("mesh", "material", "temperature_fields", "loadings", "offline", "online",
                       "tolerances", "enrichment", "quantities", "output"),
                "config", ("mesh", "material", "loadings", "offline"))
    base = source.parent
    mesh = _mesh(data["mesh"], base)
    kind, params, options = _material(data["material"])
    fields = {name: temperature_field(spec, mesh.nodes, base, f"temperature_fields.{name}")
              for name, spec in (data.get("temperature_fields") or {}).items()}
    loadings = {}
    for block in data["loadings"]:
        loading = _loading(block, fields, mesh)
        if loading.label in loadings:
            raise ConfigError(f"duplicate loading label {loading.label!r}")
        loadings[loading.label] = loading
    offline = list(data["offline"])
    online = data.get("online")
    for label in offline + ([online] if online else []):
        if label not in loadings:
            raise ConfigError(f"unknown loading {label!r}")
    if not offline:
        raise ConfigError("at least one offline loading is required")
    tol_block = data.get("tolerances", {})
    _check_keys(tol_block, Tolerances.__dataclass_fields__, "tolerances")
    tolerances = Tolerances(**tol_block)
    enr = data.get("enrichment", {})
    _check_keys(enr, ("threshold", "quantities", "regions", "enabled"), "enrichment")
    quantities = tuple(data.get("quantities", DUAL_QUANTITIES))
    bad = set(quantities) - set(DUAL_QUANTITIES)
    if bad:
        raise ConfigError(f"unknown dual quantities {sorted(bad)}")
    enrichment = EnrichmentSettings(
        float(enr.get("threshold", 0.2)),
        tuple(enr.get("quantities", ("p", "s11"))),
        tuple(str(r) for r in enr.get("regions", ("all",))),
        bool(enr.get("enabled", True)),
    )
    if not set(enrichment.quantities) <= set(quantities):
        raise ConfigError("monitored quantities must be reconstructed quantities")
    for r in enrichment.regions:
        if r != "all" and (not r.lstrip("-").isdigit() or int(r) not in mesh.regions):
            raise ConfigError(f"monitored region {r!r} does not exist in the mesh")
    out = data.get("output", {})
    _check_keys(out, ("directory", "vtk"), "output")
    directory = Path(os.environ.get(OUTPUT_ENV) or out.get("directory", "evprom_output"))
    if not directory.is_absolute() and OUTPUT_ENV not in os.environ:
        directory = base / directory
    return PipelineConfig(source, mesh, kind, params, options, loadings, offline, online,
                          tolerances, enrichment, quantities, directory, bool(out.get("vtk", False)))


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return parse_config(data or {}, path)
