import numpy as np
import pytest

from evprom.behavior import MaterialState
from evprom.rom import (
    DualReconstruction,
    GappyError,
    ReducedModel,
    RomRunner,
    build_reduced_model,
    dual_values,
    full_order_model,
    gappy_offline,
    gappy_online,
    reduced_newton,
    run_rom_transient,
)

from conftest import bending


@pytest.fixture(scope="module")
def model(small_problem, small_archive):
    return build_reduced_model(small_problem, small_archive, 1e-6, 1e-6, 1e-6)


class TestDualValues:
    def test_extracts_columns(self):
        sigma = np.arange(12.0).reshape(2, 6)
        np.testing.assert_array_equal(dual_values("s23", sigma, np.zeros(2)), [3.0, 9.0])
        np.testing.assert_array_equal(dual_values("p", sigma, [1.0, 2.0]), [1.0, 2.0])

    def test_unknown(self):
        with pytest.raises(KeyError):
            dual_values("s21", np.zeros((1, 6)), np.zeros(1))


class TestGappy:
    @pytest.fixture
    def dual(self):
        rng = np.random.default_rng(0)
        snaps = rng.standard_normal((6, 3)) @ rng.standard_normal((3, 40))
        return gappy_offline("p", snaps, np.full(40, 0.5), quadrature_indices=[1, 7]), snaps

    def test_points_include_quadrature(self, dual):
        d, _ = dual
        assert d.n == 3
        assert {1, 7} <= set(d.points.tolist())
        assert np.all(np.diff(d.points) > 0)

    def test_exact_for_fields_in_span(self, dual):
        d, _ = dual
        z_true = np.array([0.3, -1.2, 2.0])
        field = z_true @ d.modes
        z, rec = gappy_online(d, field[d.points])
        np.testing.assert_allclose(z, z_true, atol=1e-10)
        np.testing.assert_allclose(rec, field, atol=1e-10)

    def test_wrong_number_of_values(self, dual):
        d, _ = dual
        with pytest.raises(ValueError):
            d.solve(np.zeros(d.m + 1))

    def test_singular_gram_matrix(self):
        modes = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        B = modes[:, [0, 2]].T
        with pytest.raises(GappyError):
            DualReconstruction("p", modes, np.array([0, 2]), B, B.T @ B)

    def test_all_zero_snapshots(self):
        d = gappy_offline("p", np.zeros((3, 10)), np.ones(10), [2, 5])
        assert d.n == 0
        z, rec = gappy_online(d, np.zeros(2))
        assert z.shape == (0,) and np.all(rec == 0.0)


class TestReducedModel:
    def test_basis_is_mass_orthonormal(self, model, small_problem):
        M = small_problem.table.mass_matrix
        np.testing.assert_allclose(model.Phi.T @ (M @ model.Phi), np.eye(model.n), atol=1e-10)

    def test_basis_vanishes_on_dirichlet_dofs(self, model, small_problem):
        np.testing.assert_allclose(model.Phi[small_problem.mesh.constrained_dofs], 0.0, atol=1e-14)

    def test_union_and_positions(self, model):
        np.testing.assert_array_equal(model.union[model.quad_pos], model.quadrature.indices)
        for q, d in model.duals.items():
            np.testing.assert_array_equal(model.union[model.dual_pos[q]], d.points)
        assert model.quadrature.residual <= 1e-6
        assert np.all(model.quadrature.weights > 0)

    def test_replays_training_loading(self, model, small_problem, small_archive):
        sol = run_rom_transient(model, small_problem, bending(), tol=1e-8)
        ref = small_archive["bend"]
        for k, step in enumerate(sol.steps):
            u = model.displacement(step.u_hat)
            assert np.linalg.norm(u - ref.u[k]) <= 1e-3 * np.linalg.norm(ref.u[k])

    def test_save_load_roundtrip(self, model, small_problem, tmp_path):
        model.save(tmp_path / "model.npz")
        back = ReducedModel.load(tmp_path / "model.npz", small_problem)
        np.testing.assert_array_equal(back.union, model.union)
        a = run_rom_transient(model, small_problem, bending(), tol=1e-8)
        b = run_rom_transient(back, small_problem, bending(), tol=1e-8)
        for sa, sb in zip(a.steps, b.steps):
            np.testing.assert_allclose(sb.u_hat, sa.u_hat, rtol=1e-12, atol=1e-14)

    def test_newton_leaves_input_state_untouched(self, model, small_problem):
        state = MaterialState.zeros(len(model.union))
        before = state.as_table().copy()
        reduced_newton(model, small_problem, bending(), 2, state, np.zeros(model.n))
        np.testing.assert_array_equal(state.as_table(), before)

    def test_reset_from_full_projects(self, model, small_problem, small_archive):
        ref = small_archive["bend"]
        runner = RomRunner(model, small_problem, bending())
        runner.reset_from_full(ref.u[2], ref.state(2))
        u = model.displacement(runner.u_hat)
        assert np.linalg.norm(u - ref.u[2]) <= 1e-6 * np.linalg.norm(ref.u[2])
        np.testing.assert_array_equal(runner.state_U.p, ref.p[2][model.union])


def test_full_order_model_reproduces_hf(small_problem, small_archive):
    model = full_order_model(small_problem)
    assert model.d == small_problem.n_points
    sol = run_rom_transient(model, small_problem, bending(), tol=1e-10)
    ref = small_archive["bend"]
    for k, step in enumerate(sol.steps):
        np.testing.assert_allclose(model.displacement(step.u_hat), ref.u[k], rtol=0, atol=1e-8 * np.abs(ref.u[k]).max())
        np.testing.assert_allclose(step.sigma_U, ref.sigma[k], atol=1e-8 * np.abs(ref.sigma[k]).max())
