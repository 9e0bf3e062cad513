import os
import time
from pathlib import Path

import numpy as np
import pytest

from evprom.behavior import ElasLaw, default_elas_params
from evprom.config import OUTPUT_ENV, load_config
from evprom.fem import box_mesh
from evprom.hf import LoadingProgram, PiecewiseLinear, Problem, RPM_TO_RAD_S, run_transient
from evprom.pipeline import offline_pipeline

FIXTURE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "fixture.yaml"


@pytest.fixture(scope="session")
def fixture_config():
    saved = os.environ.pop(OUTPUT_ENV, None)
    try:
        return load_config(FIXTURE_CONFIG)
    finally:
        if saved is not None:
            os.environ[OUTPUT_ENV] = saved


@pytest.fixture(scope="session")
def desk_problem(fixture_config):
    return fixture_config.problem()


@pytest.fixture(scope="session")
def offline_loadings(fixture_config):
    return [fixture_config.loadings[label] for label in fixture_config.offline]


@pytest.fixture(scope="session")
def offline_artifacts(fixture_config, desk_problem, offline_loadings):
    start = time.perf_counter()
    art = offline_pipeline(desk_problem, offline_loadings, fixture_config.tolerances,
                           fixture_config.quantities, regions=(None, 1, 2))
    art.timings["total"] = time.perf_counter() - start
    return art


@pytest.fixture(scope="session")
def new_loading(fixture_config):
    return fixture_config.loadings[fixture_config.online]


@pytest.fixture(scope="session")
def new_reference(desk_problem, new_loading):
    return run_transient(desk_problem, new_loading, 1e-5)


def hot_spot_loading(mesh, center_x: float, label: str = "local") -> LoadingProgram:
    """Same mechanical program as the offline loadings, with a hot spot at ``center_x``."""
    x, y, _ = mesh.nodes.T
    cold = np.full(mesh.n_nodes, 20.0)
    warm = 20.0 + 250.0 * (x / 40.0) ** 2
    hot = warm + 300.0 * np.exp(-((x - center_x) ** 2 + (y - 10.0) ** 2) / 40.0)
    return LoadingProgram(
        label, 2.5 * np.arange(1, 21),
        rotation_speed=PiecewiseLinear([0, 25, 50], np.array([0.0, 19000.0, 0.0]) * RPM_TO_RAD_S),
        axis_point=[-200.0, 5.0, 5.0], axis_direction=[0, 0, 1], density=8000.0,
        pressure_coefficient=PiecewiseLinear([0, 25, 50], [0.0, -80.0, 0.0]),
        pressure_shape={"ymax": 0.05},
        temperature_keyframes=[(0, cold), (20, warm), (25, hot), (30, warm), (50, cold)],
    )


@pytest.fixture
def elastic_bar():
    """2x2x2 hex bar with symmetry supports on the three min faces."""
    return box_mesh((2.0, 1.0, 1.0), (2, 2, 2)).with_dirichlet([("xmin", (0,)), ("ymin", (1,)), ("zmin", (2,))])


def elastic_problem(mesh):
    return Problem(mesh, ElasLaw(default_elas_params()))


@pytest.fixture(scope="session")
def small_problem():
    from evprom.behavior import EvpLaw, default_evp_params

    mesh = box_mesh((4.0, 1.0, 1.0), (4, 1, 1)).with_dirichlet([("xmin", (0, 1, 2))])
    return Problem(mesh, EvpLaw(default_evp_params()))


@pytest.fixture(scope="session")
def small_archive(small_problem):
    from evprom.hf import generate_archive

    return generate_archive(small_problem, [bending(), bending("bend low", 24.0)], tol=1e-10)


def bending(label="bend", peak=30.0, times=(1.0, 2.0, 3.0, 4.0, 5.0, 6.0)):
    """Combined bending and tension of a cantilever, loaded then unloaded."""
    return LoadingProgram(label, np.asarray(times),
                          pressure_coefficient=PiecewiseLinear([0, 3, 6], [0.0, peak, 0.0]),
                          pressure_shape={"ymax": -1.0, "xmax": 0.5})
