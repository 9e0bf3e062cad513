import numpy as np
import pytest
import scipy.sparse as sp

from evprom.fem import (
    Mesh,
    MeshError,
    assemble_forces_and_tangent,
    box_mesh,
    build_facet_quadrature,
    build_integration_table,
    element_average,
    l2_inner_product,
    read_mesh,
    strain_at_ip,
    write_mesh,
    write_vtk,
)

UNIT_HEX = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
UNIT_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)


def single(kind, nodes):
    return Mesh(nodes, (kind,), (np.arange(len(nodes)),), np.array([1]))


def affine_displacement(nodes, G, c=(0.0, 0.0, 0.0)):
    return (nodes @ G.T + np.asarray(c)).ravel()


class TestIntegrationTable:
    def test_unit_cube_measures_sum_to_one(self):
        table = build_integration_table(single("hex8", UNIT_HEX))
        assert table.n_points == 8
        np.testing.assert_allclose(table.measures.sum(), 1.0, rtol=1e-14)

    def test_unit_tet_single_point(self):
        table = build_integration_table(single("tet4", UNIT_TET))
        assert table.n_points == 1
        np.testing.assert_allclose(table.measures, [1.0 / 6.0], rtol=1e-14)

    def test_stretched_hex_weights(self):
        table = build_integration_table(single("hex8", UNIT_HEX * [2.0, 1.0, 1.0]))
        np.testing.assert_allclose(table.measures, np.full(8, 0.25), rtol=1e-14)

    @pytest.mark.parametrize("kind", ["hex8", "tet4"])
    def test_box_volume(self, kind):
        mesh = box_mesh((3.0, 2.0, 1.5), (3, 2, 2), kind=kind)
        table = build_integration_table(mesh)
        np.testing.assert_allclose(table.volume(), 9.0, rtol=1e-12)

    def test_region_volumes_partition(self):
        mesh = box_mesh((4.0, 1.0, 1.0), (4, 1, 1), region_splits=[1.5])
        table = build_integration_table(mesh)
        assert mesh.regions == (1, 2)
        np.testing.assert_allclose(table.volume(1), 2.0)
        np.testing.assert_allclose(table.volume(1) + table.volume(2), table.volume())

    def test_unknown_region_raises(self):
        table = build_integration_table(box_mesh())
        with pytest.raises(MeshError):
            table.region_mask(7)

    def test_inverted_element_rejected(self):
        nodes = UNIT_HEX.copy()
        nodes[:, 2] *= -1.0
        with pytest.raises(MeshError):
            build_integration_table(single("hex8", nodes))

    def test_point_ordering_is_element_major(self):
        table = build_integration_table(box_mesh((2.0, 1.0, 1.0), (2, 1, 1)))
        np.testing.assert_array_equal(table.element, np.repeat([0, 1], 8))
        np.testing.assert_array_equal(table.local, np.tile(np.arange(8), 2))


class TestStrains:
    @pytest.mark.parametrize("kind", ["hex8", "tet4"])
    def test_affine_field_gives_exact_strain(self, kind):
        rng = np.random.default_rng(0)
        mesh = box_mesh((2.0, 1.0, 1.0), (2, 2, 1), kind=kind, waist=0.3)
        G = 1e-3 * rng.standard_normal((3, 3))
        u = affine_displacement(mesh.nodes, G, c=(0.1, -0.2, 0.3))
        table = build_integration_table(mesh)
        expected = 0.5 * (G + G.T)
        for ip in (0, table.n_points // 2, table.n_points - 1):
            np.testing.assert_allclose(strain_at_ip(table, u, ip), expected, atol=1e-15)

    def test_rigid_rotation_is_strain_free(self):
        mesh = box_mesh((1.0, 1.0, 1.0), (2, 2, 2))
        W = np.array([[0.0, -1e-3, 2e-3], [1e-3, 0.0, -3e-3], [-2e-3, 3e-3, 0.0]])
        u = affine_displacement(mesh.nodes, W)
        np.testing.assert_allclose(build_integration_table(mesh).strains(u), 0.0, atol=1e-16)

    def test_engineering_shear_convention(self):
        G = np.zeros((3, 3))
        G[0, 1] = 2e-3  # u_x = 2e-3 y
        u = affine_displacement(UNIT_HEX, G)
        eps = build_integration_table(single("hex8", UNIT_HEX)).strains(u)
        np.testing.assert_allclose(eps[:, 5], 2e-3)
        np.testing.assert_allclose(eps[:, :5], 0.0, atol=1e-18)

    def test_ip_out_of_range(self):
        with pytest.raises(IndexError):
            strain_at_ip(single("tet4", UNIT_TET), np.zeros(12), 1)


class TestInnerProduct:
    def test_constant_fields(self):
        table = build_integration_table(box_mesh((2.0, 1.0, 1.0), (2, 1, 1)))
        a = np.full(table.n_points, 3.0)
        np.testing.assert_allclose(l2_inner_product(table, a, a, location="ip"), 18.0)

    def test_nodal_vector_uses_mass_matrix(self):
        mesh = box_mesh((1.0, 2.0, 1.0), (1, 2, 2))
        table = build_integration_table(mesh)
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((2, mesh.n_dofs))
        np.testing.assert_allclose(l2_inner_product(table, a, b, location="nodal"),
                                   a @ (table.mass_matrix @ b), rtol=1e-12)

    def test_ambiguous_length_requires_location(self):
        table = build_integration_table(single("hex8", UNIT_HEX))
        with pytest.raises(ValueError):
            l2_inner_product(table, np.ones(8), np.ones(8))


class TestAssembly:
    def test_dense_and_sparse_operators_agree(self):
        table = build_integration_table(box_mesh((1.0, 1.0, 1.0), (1, 1, 2)))
        rng = np.random.default_rng(2)
        sigma = rng.standard_normal((table.n_points, 6))
        D = np.broadcast_to(np.eye(6), (table.n_points, 6, 6))
        F1, K1 = assemble_forces_and_tangent(table.strain_operator, sigma, D, table.measures)
        F2, K2 = assemble_forces_and_tangent(table.strain_operator.toarray(), sigma, D, table.measures)
        np.testing.assert_allclose(F1, F2, atol=1e-12)
        np.testing.assert_allclose(K1, K2, atol=1e-12)
        np.testing.assert_allclose(K1, K1.T, atol=1e-12)

    def test_internal_force_is_virtual_work(self):
        table = build_integration_table(box_mesh((1.0, 1.0, 1.0), (2, 1, 1)))
        rng = np.random.default_rng(3)
        sigma = rng.standard_normal((table.n_points, 6))
        v = rng.standard_normal(3 * table.mesh.n_nodes)
        F, _ = assemble_forces_and_tangent(table.strain_operator, sigma, None, table.measures,
                                           need_tangent=False)
        work = np.sum(table.measures * np.einsum("ij,ij->i", sigma, table.strains(v)))
        np.testing.assert_allclose(F @ v, work, rtol=1e-12)


class TestFacets:
    def test_unit_square_traction_hand_forces(self):
        mesh = box_mesh()
        fq = build_facet_quadrature(mesh, ["xmax"])
        F = fq.nodal_forces(np.full(len(fq.facet), 2.0), mesh.n_dofs)
        # uniform traction 2 on a unit face: 0.5 per corner node, along +x
        xmax = mesh.label_nodes("xmax")
        np.testing.assert_allclose(F[3 * xmax], 0.5)
        mask = np.ones(mesh.n_dofs, dtype=bool)
        mask[3 * xmax] = False
        np.testing.assert_allclose(F[mask], 0.0, atol=1e-15)

    @pytest.mark.parametrize("kind", ["hex8", "tet4"])
    def test_normals_point_outward(self, kind):
        mesh = box_mesh((2.0, 1.0, 1.0), (2, 1, 1), kind=kind)
        for label, axis, sign in (("xmin", 0, -1), ("ymax", 1, 1), ("zmin", 2, -1)):
            fq = build_facet_quadrature(mesh, [label])
            assert np.all(sign * fq.area_normal[:, axis] > 0)

    def test_tet_facet_area(self):
        mesh = box_mesh((1.0, 1.0, 1.0), (1, 1, 1), kind="tet4")
        fq = build_facet_quadrature(mesh, ["zmax"])
        np.testing.assert_allclose(np.linalg.norm(fq.area_normal, axis=1).sum(), 1.0)


class TestMeshIO:
    def test_roundtrip(self, tmp_path):
        mesh = box_mesh((2.0, 1.0, 1.0), (2, 1, 1), region_splits=[1.0])
        write_mesh(mesh, tmp_path / "m.txt")
        back = read_mesh(tmp_path / "m.txt")
        np.testing.assert_allclose(back.nodes, mesh.nodes)
        np.testing.assert_array_equal(back.region_ids, mesh.region_ids)
        assert back.facets == mesh.facets

    def test_dirichlet_neumann_overlap_rejected(self):
        mesh = box_mesh().with_dirichlet([("xmin", (0, 1, 2))])
        with pytest.raises(MeshError):
            mesh.check_boundaries(["xmin"])

    def test_unknown_label(self):
        with pytest.raises(MeshError):
            box_mesh().with_dirichlet([("nowhere", (0,))])

    def test_constrained_dofs(self):
        mesh = box_mesh().with_dirichlet([("xmin", (0,))])
        np.testing.assert_array_equal(mesh.constrained_dofs, 3 * mesh.label_nodes("xmin"))

    def test_vtk_writer(self, tmp_path):
        mesh = box_mesh((1.0, 1.0, 1.0), (1, 1, 2))
        table = build_integration_table(mesh)
        cells = {"p": element_average(table, np.arange(table.n_points, dtype=float))}
        write_vtk(tmp_path / "a.vtk", mesh, {"u": np.zeros((mesh.n_nodes, 3))}, cells)
        text = (tmp_path / "a.vtk").read_text()
        assert "CELL_TYPES 2" in text and "VECTORS u double" in text
        np.testing.assert_allclose(cells["p"], [3.5, 11.5])


def test_mass_matrix_integrates_constants():
    mesh = box_mesh((2.0, 3.0, 1.0), (2, 2, 1), kind="tet4")
    M = build_integration_table(mesh).mass_matrix
    ones_x = np.zeros(mesh.n_dofs)
    ones_x[0::3] = 1.0
    assert sp.issparse(M)
    np.testing.assert_allclose(ones_x @ (M @ ones_x), 6.0, rtol=1e-12)
