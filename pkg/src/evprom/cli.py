"""Command line entry point: ``evprom {offline,online,hf,export}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import OUTPUT_ENV, ConfigError
from .config import load_config as _load_config
from .fem import MeshError
from .hf import SnapshotArchive
from .pipeline import (PipelineError, export_results, hf_reference, load_offline, offline_pipeline,
                       online_pipeline, save_offline)

log = logging.getLogger("evprom")

EXIT_CODES = {
    "config": 2,
    "mesh": 3,
    "hf": 4,
    "reduction": 5,
    "calibration": 6,
    "online": 7,
    "enrichment": 8,
    "io": 9,
}


def _cmd_hf(args) -> None:
    cfg = load_config(args.config)
    if cfg.online is None:
        raise ConfigError("no online loading to compute a reference for")
    archive = hf_reference(cfg.problem(), cfg.loadings[cfg.online], cfg.tolerances)
    with_io(lambda: archive.save(cfg.output / "reference"))
    log.info("HF reference of %r written to %s", cfg.online, cfg.output / "reference")


def _cmd_offline(args) -> None:
    cfg = load_config(args.config)
    problem = cfg.problem()
    art = offline_pipeline(problem, [cfg.loadings[lab] for lab in cfg.offline], cfg.tolerances,
                           cfg.quantities, cfg.calibration_regions)
    with_io(lambda: save_offline(cfg.output, problem, art, cfg.tolerances))
    log.info("offline model %s written to %s", art.model.summary(), cfg.output / "offline")


def _cmd_online(args) -> None:
    cfg = load_config(args.config)
    if cfg.online is None:
        raise ConfigError("config defines no online loading")
    problem = cfg.problem()
    art = with_io(lambda: load_offline(cfg.output, problem))
    ref_dir = Path(args.reference) if args.reference else cfg.output / "reference"
    enrich = cfg.enrichment.enabled and not args.no_enrich
    reference = None
    if ref_dir.joinpath("manifest.json").exists():
        archive = with_io(lambda: SnapshotArchive.load(ref_dir))
        if cfg.online not in archive.labels:
            raise ConfigError(f"reference in {ref_dir} does not hold loading {cfg.online!r}")
        reference = archive[cfg.online]
    elif args.reference or enrich:
        raise ConfigError(f"no HF reference found in {ref_dir}; run 'evprom hf' or pass --no-enrich")
    result = online_pipeline(problem, art, cfg.loadings[cfg.online], cfg.tolerances, cfg.enrichment,
                             reference, enrich, (None,) + cfg.mesh.regions)
    with_io(lambda: result.save(cfg.output))
    if cfg.vtk:
        with_io(lambda: export_results(cfg.output))
    log.info("online run: %d enrichments, log in %s", result.log.n_enrichments,
             cfg.output / "online" / "enrichment_log.csv")


def _cmd_export(args) -> None:
    written = with_io(lambda: export_results(args.directory, vtk=not args.no_vtk))
    log.info("exported %d files to %s", len(written), Path(args.directory) / "export")


def load_config(path):
    try:
        return _load_config(path)
    except (ConfigError, MeshError):
        raise
    except (TypeError, ValueError, KeyError, IndexError) as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from exc


def with_io(fn):
    try:
        return fn()
    except (OSError, KeyError, ValueError) as exc:
        raise PipelineError("io", f"{type(exc).__name__}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evprom", description=(
        "Reduced order modeling of elasto-viscoplastic structures with an error indicator. "
        f"The output directory of a config can be overridden with ${OUTPUT_ENV}."))
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("offline", help="HF snapshots, reduced model and indicator calibration")
    s.add_argument("config")
    s.set_defaults(func=_cmd_offline)
    s = sub.add_parser("online", help="reduced simulation of the online loading")
    s.add_argument("config")
    s.add_argument("--no-enrich", action="store_true", help="never enrich the reduced model")
    s.add_argument("--reference", help="directory of the HF reference archive")
    s.set_defaults(func=_cmd_online)
    s = sub.add_parser("hf", help="HF reference computation of the online loading")
    s.add_argument("config")
    s.set_defaults(func=_cmd_hf)
    s = sub.add_parser("export", help="VTK and CSV exports of an output directory")
    s.add_argument("directory")
    s.add_argument("--no-vtk", action="store_true")
    s.set_defaults(func=_cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except MeshError as exc:
        log.error("mesh: %s", exc)
        return EXIT_CODES["mesh"]
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CODES["config"]
    except PipelineError as exc:
        log.error("%s", exc)
        return EXIT_CODES.get(exc.stage, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
