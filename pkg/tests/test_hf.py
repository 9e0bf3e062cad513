import numpy as np
import pytest

from evprom.behavior import EvpLaw, MaterialState, default_evp_params
from evprom.fem import box_mesh
from evprom.hf import (
    KG_M3_TO_T_MM3,
    RPM_TO_RAD_S,
    LoadingProgram,
    PiecewiseLinear,
    Problem,
    SnapshotArchive,
    SolverError,
    external_force_vector,
    generate_archive,
    newton_solve,
    run_transient,
)

from conftest import elastic_problem


def traction_loading(value=100.0, times=(1.0,)):
    return LoadingProgram("tension", np.asarray(times), pressure_coefficient=PiecewiseLinear.constant(value),
                          pressure_shape={"xmax": 1.0})


class TestPiecewiseLinear:
    def test_interpolation_and_hold(self):
        f = PiecewiseLinear([0, 10], [0, 5])
        np.testing.assert_allclose(f([-1.0, 4.0, 12.0]), [0.0, 2.0, 5.0])

    def test_scaled(self):
        assert PiecewiseLinear([0, 1], [1, 3]).scaled(2.0)(0.5) == pytest.approx(4.0)


class TestLoadingProgram:
    def test_rpm_conversion(self):
        assert 60.0 * RPM_TO_RAD_S == pytest.approx(2.0 * np.pi)

    def test_start_time(self):
        assert traction_loading(times=(2.0, 4.0)).start_time == 0.0
        assert traction_loading(times=(0.0, 3.0)).start_time == -3.0

    def test_times_must_increase(self):
        with pytest.raises(ValueError):
            traction_loading(times=(1.0, 1.0))

    def test_temperature_keyframes(self):
        a, b = np.zeros(2), np.full(2, 10.0)
        prog = LoadingProgram("t", [1.0, 2.0, 3.0], temperature_keyframes=[(3.0, b), (1.0, a)])
        np.testing.assert_allclose(prog.temperature(2.0, 2), 5.0)
        np.testing.assert_allclose(prog.temperature(0.5, 2), 0.0)

    def test_keyframe_outside_program(self):
        with pytest.raises(ValueError):
            LoadingProgram("t", [1.0], temperature_keyframes=[(5.0, np.zeros(2))])

    def test_default_temperature_is_reference(self):
        np.testing.assert_allclose(traction_loading().temperature(1.0, 3), 20.0)


class TestExternalForces:
    def test_centrifugal_resultant(self):
        mesh = box_mesh((2.0, 1.0, 1.0), (2, 1, 1))
        problem = elastic_problem(mesh)
        omega = 100.0
        prog = LoadingProgram("spin", [1.0], rotation_speed=PiecewiseLinear.constant(omega),
                              axis_point=[-1.0, 0.5, 0.5], axis_direction=[0, 0, 1], density=8000.0)
        F = external_force_vector(problem, prog, 1.0).reshape(-1, 3)
        # resultant = rho omega^2 V * distance of the centroid to the axis
        rho = 8000.0 * KG_M3_TO_T_MM3
        np.testing.assert_allclose(F.sum(axis=0), [rho * omega**2 * 2.0 * 2.0, 0.0, 0.0], atol=1e-18)

    def test_pressure_resultant_and_projection(self):
        mesh = box_mesh((1.0, 2.0, 3.0), (1, 2, 2))
        problem = elastic_problem(mesh)
        prog = traction_loading(-7.0)
        F = external_force_vector(problem, prog, 1.0)
        np.testing.assert_allclose(F.reshape(-1, 3).sum(axis=0), [-7.0 * 6.0, 0.0, 0.0], atol=1e-12)
        basis = np.eye(mesh.n_dofs)[:, :5]
        np.testing.assert_allclose(external_force_vector(problem, prog, 1.0, basis=basis), F[:5])

    def test_time_outside_program(self):
        problem = elastic_problem(box_mesh())
        with pytest.raises(ValueError):
            external_force_vector(problem, traction_loading(), 5.0)


class TestNewton:
    def test_patch_test_uniform_stress(self, elastic_bar):
        problem = elastic_problem(elastic_bar)
        res = newton_solve(problem, traction_loading(100.0), 0, MaterialState.zeros(problem.n_points),
                           np.zeros(elastic_bar.n_dofs), tol=1e-12)
        np.testing.assert_allclose(res.sigma[:, 0], 100.0, rtol=1e-10)
        np.testing.assert_allclose(res.sigma[:, 1:], 0.0, atol=1e-8)
        assert res.iterations == 1

    def test_unconstrained_body_is_singular(self):
        problem = elastic_problem(box_mesh())
        with pytest.raises(SolverError):
            newton_solve(problem, traction_loading(), 0, MaterialState.zeros(8), np.zeros(24))

    def test_evp_transient_converges(self, elastic_bar):
        problem = Problem(elastic_bar, EvpLaw(default_evp_params()))
        prog = LoadingProgram("ramp", [1.0, 2.0, 3.0, 4.0],
                              pressure_coefficient=PiecewiseLinear([0, 4], [0, 400.0]),
                              pressure_shape={"xmax": 1.0})
        rec = run_transient(problem, prog, tol=1e-8)
        assert rec.p[-1].max() > 0.0
        assert np.all(np.diff(rec.p, axis=0) >= 0.0)
        assert rec.iterations.max() <= 10

    def test_rejects_nonpositive_tolerance(self, elastic_bar):
        problem = elastic_problem(elastic_bar)
        with pytest.raises(ValueError):
            newton_solve(problem, traction_loading(), 0, MaterialState.zeros(problem.n_points),
                         np.zeros(elastic_bar.n_dofs), tol=0.0)


class TestArchive:
    @pytest.fixture
    def archive(self, elastic_bar):
        problem = elastic_problem(elastic_bar)
        return generate_archive(problem, [traction_loading(10.0, (1.0, 2.0)),
                                          LoadingProgram("other", [1.0], pressure_coefficient=PiecewiseLinear.constant(5.0),
                                                         pressure_shape={"ymax": 1.0})])

    def test_variabilities(self, archive):
        assert archive.variabilities == [("tension", 0), ("tension", 1), ("other", 0)]
        assert archive.stacked("u").shape == (3, archive["tension"].u.shape[1])

    def test_save_load_roundtrip(self, archive, tmp_path):
        archive.save(tmp_path / "arch")
        back = SnapshotArchive.load(tmp_path / "arch")
        assert back.labels == archive.labels
        for label in archive.labels:
            np.testing.assert_array_equal(back[label].u, archive[label].u)
            np.testing.assert_array_equal(back[label].states, archive[label].states)
