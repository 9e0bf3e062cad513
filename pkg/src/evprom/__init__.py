"""Reduced order modeling of elasto-viscoplastic structures with an
indicator-driven enrichment strategy."""
from .behavior import EvpLaw, EvpParams, ElasLaw, ElasParams, MaterialState, make_law
from .config import PipelineConfig, Tolerances, EnrichmentSettings, load_config, parse_config
from .fem import Mesh, box_mesh, build_integration_table, read_mesh, write_mesh
from .hf import LoadingProgram, PiecewiseLinear, Problem, SnapshotArchive, run_transient
from .pipeline import offline_pipeline, online_pipeline
from .rom import ReducedModel, RomRunner, build_reduced_model, run_rom_transient

__version__ = "0.1.0"

__all__ = [
    "EvpLaw", "EvpParams", "ElasLaw", "ElasParams", "MaterialState", "make_law",
    "PipelineConfig", "Tolerances", "EnrichmentSettings", "load_config", "parse_config",
    "Mesh", "box_mesh", "build_integration_table", "read_mesh", "write_mesh",
    "LoadingProgram", "PiecewiseLinear", "Problem", "SnapshotArchive", "run_transient",
    "offline_pipeline", "online_pipeline",
    "ReducedModel", "RomRunner", "build_reduced_model", "run_rom_transient",
]
