"""Small finite-element kernel: meshes, quadrature, strains and assembly.

Degrees of freedom are numbered node-major (``3 * node + component``). Strain
vectors use the engineering Voigt convention of :mod:`evprom.behavior`.
Global integration points are ordered element-major, local point minor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    pass


_G = 1.0 / np.sqrt(3.0)
_HEX_CORNERS = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
    dtype=float,
)
# local node lists of the six hex faces, counter-clockwise seen from outside
_HEX_FACES = (
    (0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (2, 3, 7, 6), (1, 2, 6, 5), (0, 4, 7, 3),
)
_TET_FACES = ((0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2))

NODES_PER_KIND = {"hex8": 8, "tet4": 4}


def _hex_shape(xi):
    """Shape functions and reference gradients at points ``xi`` (k, 3)."""
    xi = np.atleast_2d(xi)
    c = _HEX_CORNERS
    f = 1.0 + xi[:, None, :] * c[None, :, :]  # (k, 8, 3)
    N = 0.125 * f.prod(axis=2)
    dN = np.empty(xi.shape[:1] + (8, 3))
    dN[..., 0] = 0.125 * c[:, 0] * f[..., 1] * f[..., 2]
    dN[..., 1] = 0.125 * c[:, 1] * f[..., 0] * f[..., 2]
    dN[..., 2] = 0.125 * c[:, 2] * f[..., 0] * f[..., 1]
    return N, dN


def _tet_shape(xi):
    xi = np.atleast_2d(xi)
    N = np.column_stack([1.0 - xi.sum(axis=1), xi[:, 0], xi[:, 1], xi[:, 2]])
    dN = np.broadcast_to(
        np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        (len(xi), 4, 3),
    ).copy()
    return N, dN


def quadrature_rule(kind: str):
    """Reference points and weights: 2x2x2 Gauss for hex8, centroid for tet4."""
    if kind == "hex8":
        g = np.array([-_G, _G])
        pts = np.array([[a, b, c] for c in g for b in g for a in g])
        return pts, np.ones(8)
    if kind == "tet4":
        return np.array([[0.25, 0.25, 0.25]]), np.array([1.0 / 6.0])
    raise MeshError(f"unsupported element kind {kind!r}")


def shape_functions(kind: str, xi):
    if kind == "hex8":
        return _hex_shape(xi)
    if kind == "tet4":
        return _tet_shape(xi)
    raise MeshError(f"unsupported element kind {kind!r}")


@dataclass(frozen=True)
class DirichletSet:
    label: str
    nodes: np.ndarray
    components: tuple[int, ...] = (0, 1, 2)


@dataclass(eq=False)
class Mesh:
    """Unstructured mesh of hex8 and/or tet4 elements.

    ``facets`` lists boundary faces as ``(label, node tuple)``; a facet label
    names a surface that loadings and boundary conditions refer to.
    """

    nodes: np.ndarray
    kinds: tuple[str, ...]
    connectivity: tuple[np.ndarray, ...]
    region_ids: np.ndarray
    facets: tuple[tuple[str, tuple[int, ...]], ...] = ()
    dirichlet: tuple[DirichletSet, ...] = ()

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.kinds = tuple(self.kinds)
        self.connectivity = tuple(np.asarray(c, dtype=np.int64) for c in self.connectivity)
        self.region_ids = np.asarray(self.region_ids, dtype=np.int64)
        self.facets = tuple((str(lab), tuple(int(n) for n in nodes)) for lab, nodes in self.facets)
        self.dirichlet = tuple(self.dirichlet)
        self.validate()

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.kinds)

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    @property
    def regions(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.region_ids.tolist())))

    @property
    def facet_labels(self) -> tuple[str, ...]:
        return tuple(sorted({lab for lab, _ in self.facets}))

    def validate(self) -> None:
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise MeshError("nodes must be an (n, 3) array")
        if len(self.connectivity) != len(self.kinds) or len(self.region_ids) != len(self.kinds):
            raise MeshError("every element needs a kind, a connectivity and exactly one region id")
        for kind, conn in zip(self.kinds, self.connectivity):
            if kind not in NODES_PER_KIND:
                raise MeshError(f"unsupported element kind {kind!r}")
            if len(conn) != NODES_PER_KIND[kind]:
                raise MeshError(f"{kind} element needs {NODES_PER_KIND[kind]} nodes")
            if conn.min() < 0 or conn.max() >= self.n_nodes:
                raise MeshError("connectivity index out of range")
        for _, nodes in self.facets:
            if min(nodes) < 0 or max(nodes) >= self.n_nodes:
                raise MeshError("facet node index out of range")

    def label_nodes(self, label: str) -> np.ndarray:
        nodes = sorted({n for lab, f in self.facets if lab == label for n in f})
        if not nodes:
            raise MeshError(f"no facet labelled {label!r}")
        return np.asarray(nodes, dtype=np.int64)

    def with_dirichlet(self, specs) -> "Mesh":
        """Return a copy with zero-displacement sets ``[(label, components), ...]``."""
        sets = tuple(DirichletSet(lab, self.label_nodes(lab), tuple(comps)) for lab, comps in specs)
        return Mesh(self.nodes, self.kinds, self.connectivity, self.region_ids, self.facets, sets)

    def check_boundaries(self, neumann_labels) -> None:
        """Dirichlet and Neumann surfaces must not share a facet."""
        dir_labels = {d.label for d in self.dirichlet}
        shared = dir_labels & set(neumann_labels)
        if shared:
            raise MeshError(f"surfaces {sorted(shared)} are both Dirichlet and Neumann")

    @cached_property
    def constrained_dofs(self) -> np.ndarray:
        dofs = {3 * int(n) + c for d in self.dirichlet for n in d.nodes for c in d.components}
        return np.asarray(sorted(dofs), dtype=np.int64)

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)

    def element_centroids(self) -> np.ndarray:
        return np.array([self.nodes[c].mean(axis=0) for c in self.connectivity])


def box_mesh(
    lengths=(1.0, 1.0, 1.0),
    divisions=(1, 1, 1),
    kind: str = "hex8",
    waist: float = 0.0,
    region_splits=(),
) -> Mesh:
    """Structured box ``[0, Lx] x [0, Ly] x [0, Lz]`` with labelled faces.

    ``waist`` in ``[0, 1)`` narrows the y/z section towards the middle of the
    x span (a bow-tie shape): the half-widths are scaled by
    ``1 - waist * (1 - |2x/Lx - 1|)``. ``region_splits`` are x positions
    separating consecutive regions (region ids 1, 2, ...). Face labels are
    ``xmin, xmax, ymin, ymax, zmin, zmax``. ``kind="tet4"`` splits each
    hexahedron into six tetrahedra.
    """
    lx, ly, lz = (float(v) for v in lengths)
    nx, ny, nz = (int(v) for v in divisions)
    xs, ys, zs = np.linspace(0, lx, nx + 1), np.linspace(0, ly, ny + 1), np.linspace(0, lz, nz + 1)
    grid = np.array([[x, y, z] for z in zs for y in ys for x in xs])
    if waist:
        if not 0.0 <= waist < 1.0:
            raise MeshError("waist must lie in [0, 1)")
        scale = 1.0 - waist * (1.0 - np.abs(2.0 * grid[:, 0] / lx - 1.0))
        grid[:, 1] = ly / 2 + (grid[:, 1] - ly / 2) * scale
        grid[:, 2] = lz / 2 + (grid[:, 2] - lz / 2) * scale

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    splits = sorted(float(s) for s in region_splits)
    kinds, conn, regions = [], [], []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                h = [nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                     nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1)]
                xc = 0.5 * (xs[i] + xs[i + 1])
                region = 1 + sum(xc > s for s in splits)
                if kind == "hex8":
                    kinds.append("hex8")
                    conn.append(h)
                    regions.append(region)
                elif kind == "tet4":
                    for tet in ((0, 1, 2, 6), (0, 2, 3, 6), (0, 3, 7, 6), (0, 7, 4, 6), (0, 4, 5, 6), (0, 5, 1, 6)):
                        kinds.append("tet4")
                        conn.append([h[t] for t in tet])
                        regions.append(region)
                else:
                    raise MeshError(f"unsupported element kind {kind!r}")

    facets = []

    def quad(label, a, b, c, d):
        if kind == "hex8":
            facets.append((label, (a, b, c, d)))
        else:
            # consistent with the tet split (diagonal through the lowest id node)
            facets.append((label, (a, b, c)))
            facets.append((label, (a, c, d)))

    for k in range(nz):
        for j in range(ny):
            quad("xmin", nid(0, j, k), nid(0, j, k + 1), nid(0, j + 1, k + 1), nid(0, j + 1, k))
            quad("xmax", nid(nx, j, k), nid(nx, j + 1, k), nid(nx, j + 1, k + 1), nid(nx, j, k + 1))
    for k in range(nz):
        for i in range(nx):
            quad("ymin", nid(i, 0, k), nid(i + 1, 0, k), nid(i + 1, 0, k + 1), nid(i, 0, k + 1))
            quad("ymax", nid(i, ny, k), nid(i, ny, k + 1), nid(i + 1, ny, k + 1), nid(i + 1, ny, k))
    for j in range(ny):
        for i in range(nx):
            quad("zmin", nid(i, j, 0), nid(i, j + 1, 0), nid(i + 1, j + 1, 0), nid(i + 1, j, 0))
            quad("zmax", nid(i, j, nz), nid(i + 1, j, nz), nid(i + 1, j + 1, nz), nid(i, j + 1, nz))
    return Mesh(grid, tuple(kinds), tuple(np.array(c) for c in conn), np.array(regions), tuple(facets))


def read_mesh(path) -> Mesh:
    """Read the plain-text mesh format written by :func:`write_mesh`.

    Layout::

        nodes <n>
        <x> <y> <z>            (n lines)
        elements <e>
        <kind> <region> <node ids...>
        facets <f>
        <label> <node ids...>

    Blank lines and ``#`` comments are ignored.
    """
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line.split())
    pos = 0

    def header(name):
        nonlocal pos
        if pos >= len(lines) or lines[pos][0] != name or len(lines[pos]) != 2:
            raise MeshError(f"expected '{name} <count>' block")
        count = int(lines[pos][1])
        pos += 1
        block = lines[pos:pos + count]
        if len(block) != count:
            raise MeshError(f"truncated {name} block")
        pos += count
        return block

    nodes = np.array([[float(v) for v in row] for row in header("nodes")]).reshape(-1, 3)
    kinds, conn, regions = [], [], []
    for row in header("elements"):
        kinds.append(row[0])
        regions.append(int(row[1]))
        conn.append([int(v) for v in row[2:]])
    facets = []
    if pos < len(lines):
        facets = [(row[0], tuple(int(v) for v in row[1:])) for row in header("facets")]
    return Mesh(nodes, tuple(kinds), tuple(np.array(c) for c in conn), np.array(regions), tuple(facets))


def write_mesh(mesh: Mesh, path) -> None:
    out = [f"nodes {mesh.n_nodes}"]
    out += [" ".join(repr(float(v)) for v in x) for x in mesh.nodes]
    out.append(f"elements {mesh.n_elements}")
    out += [
        f"{k} {r} " + " ".join(str(int(n)) for n in c)
        for k, r, c in zip(mesh.kinds, mesh.region_ids, mesh.connectivity)
    ]
    out.append(f"facets {len(mesh.facets)}")
    out += [f"{lab} " + " ".join(str(n) for n in f) for lab, f in mesh.facets]
    Path(path).write_text("\n".join(out) + "\n")


@dataclass(eq=False)
class GlobalIntegrationTable:
    """Integration points of a mesh with their measures.

    ``strain_operator`` maps a nodal dof vector to the stacked strains of all
    points (rows ``6k .. 6k+5`` for point ``k``); ``interpolation`` maps nodal
    scalars to point values.
    """

    mesh: Mesh
    element: np.ndarray
    local: np.ndarray
    points: np.ndarray
    measures: np.ndarray
    strain_operator: sp.csr_matrix = field(repr=False)
    interpolation: sp.csr_matrix = field(repr=False)

    @property
    def n_points(self) -> int:
        return len(self.measures)

    @cached_property
    def point_regions(self) -> np.ndarray:
        return self.mesh.region_ids[self.element]

    def region_mask(self, region=None) -> np.ndarray:
        if region is None or region == "all":
            return np.ones(self.n_points, dtype=bool)
        if int(region) not in self.mesh.regions:
            raise MeshError(f"unknown region {region!r}")
        return self.point_regions == int(region)

    def volume(self, region=None) -> float:
        return float(self.measures[self.region_mask(region)].sum())

    def point_strain_operator(self, indices) -> sp.csr_matrix:
        """Rows of the strain operator for a subset of points."""
        idx = np.asarray(indices, dtype=np.int64)
        rows = (6 * idx[:, None] + np.arange(6)[None, :]).ravel()
        return self.strain_operator[rows]

    def strains(self, u) -> np.ndarray:
        return (self.strain_operator @ np.asarray(u, dtype=float)).reshape(-1, 6)

    def nodal_to_points(self, values) -> np.ndarray:
        """Interpolate nodal scalars ``(n,)`` or vectors ``(n, c)`` to points."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1 and len(values) == 3 * self.mesh.n_nodes:
            values = values.reshape(-1, 3)
        return self.interpolation @ values

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        """L2 Gram matrix of nodal vector fields (3 components, node-major)."""
        Ns = self.interpolation
        M = (Ns.T @ sp.diags(self.measures) @ Ns).tocsr()
        return sp.kron(M, sp.identity(3), format="csr")


def build_integration_table(mesh: Mesh) -> GlobalIntegrationTable:
    elements, local, points, measures = [], [], [], []
    b_rows, b_cols, b_vals = [], [], []
    n_rows, n_cols, n_vals = [], [], []
    k = 0
    for e, (kind, conn) in enumerate(zip(mesh.kinds, mesh.connectivity)):
        xi, w = quadrature_rule(kind)
        N, dN = shape_functions(kind, xi)
        X = mesh.nodes[conn]
        for q in range(len(w)):
            J = dN[q].T @ X  # (3, 3): d x_j / d xi_i
            det = np.linalg.det(J)
            if not det > 0.0:
                raise MeshError(f"non-positive Jacobian in element {e} (det={det:.3e})")
            grad = np.linalg.solve(J, dN[q].T).T  # (nn, 3) dN/dx
            elements.append(e)
            local.append(q)
            points.append(N[q] @ X)
            measures.append(w[q] * det)
            for a, node in enumerate(conn):
                bx, by, bz = grad[a]
                d = 3 * node
                for r, c, v in (
                    (0, 0, bx), (1, 1, by), (2, 2, bz),
                    (3, 1, bz), (3, 2, by),
                    (4, 0, bz), (4, 2, bx),
                    (5, 0, by), (5, 1, bx),
                ):
                    b_rows.append(6 * k + r)
                    b_cols.append(d + c)
                    b_vals.append(v)
                n_rows.append(k)
                n_cols.append(node)
                n_vals.append(N[q, a])
            k += 1
    B = sp.csr_matrix((b_vals, (b_rows, b_cols)), shape=(6 * k, mesh.n_dofs))
    Nmat = sp.csr_matrix((n_vals, (n_rows, n_cols)), shape=(k, mesh.n_nodes))
    return GlobalIntegrationTable(
        mesh,
        np.asarray(elements, dtype=np.int64),
        np.asarray(local, dtype=np.int64),
        np.asarray(points),
        np.asarray(measures),
        B,
        Nmat,
    )


def strain_at_ip(table, u, ip: int) -> np.ndarray:
    """Small-strain tensor (3x3) at one global integration point.

    ``table`` may be a :class:`GlobalIntegrationTable` or a :class:`Mesh`.
    """
    if isinstance(table, Mesh):
        table = build_integration_table(table)
    if not 0 <= ip < table.n_points:
        raise IndexError(f"integration point {ip} out of range")
    v = np.asarray(table.point_strain_operator([ip]) @ np.asarray(u, dtype=float))
    return voigt_to_tensor(v)


def voigt_to_tensor(v) -> np.ndarray:
    """Engineering-strain Voigt vector to symmetric tensor."""
    e11, e22, e33, g23, g13, g12 = v
    return np.array([
        [e11, g12 / 2, g13 / 2],
        [g12 / 2, e22, g23 / 2],
        [g13 / 2, g23 / 2, e33],
    ])


def _as_point_values(table: GlobalIntegrationTable, a, location: str):
    a = np.asarray(a, dtype=float)
    n_ip, n_nodes = table.n_points, table.mesh.n_nodes
    if location == "auto":
        fits_ip = a.shape[0] == n_ip
        fits_nodal = a.shape[0] in (n_nodes, 3 * n_nodes)
        if fits_ip and fits_nodal:
            raise ValueError("field length is ambiguous; pass location='ip' or 'nodal'")
        if not (fits_ip or fits_nodal):
            raise ValueError(f"field of length {a.shape[0]} matches neither nodes nor points")
        location = "ip" if fits_ip else "nodal"
    if location == "ip":
        if a.shape[0] != n_ip:
            raise ValueError("point field length mismatch")
        return a.reshape(n_ip, -1)
    vals = table.nodal_to_points(a)
    return np.asarray(vals).reshape(n_ip, -1)


def l2_inner_product(table: GlobalIntegrationTable, a, b, region=None, location: str = "auto") -> float:
    """``sum_k nu_k a(x_k) . b(x_k)``, optionally restricted to a region."""
    va = _as_point_values(table, a, location)
    vb = _as_point_values(table, b, location)
    if va.shape != vb.shape:
        raise ValueError("fields have mismatched shapes")
    mask = table.region_mask(region)
    return float(np.sum(table.measures[mask] * np.einsum("ij,ij->i", va[mask], vb[mask])))


def assemble_forces_and_tangent(strain_ops, sigma, tangent, weights, need_tangent: bool = True):
    """Generalized internal forces and tangent over an arbitrary basis.

    ``strain_ops`` maps basis coefficients to the stacked strains of the
    quadrature points used (``6 * n_points`` rows, sparse or dense);
    ``sigma`` is ``(n_points, 6)``, ``tangent`` ``(n_points, 6, 6)`` and
    ``weights`` ``(n_points,)``. Returns ``F_i = sum_k w_k sigma_k . eps(phi_i)_k``
    and ``K_ij = sum_k w_k eps(phi_i)_k . D_k eps(phi_j)_k``.
    """
    weights = np.asarray(weights, dtype=float)
    ws = (weights[:, None] * sigma).ravel()
    F = np.asarray(strain_ops.T @ ws).ravel()
    if not need_tangent:
        return F, None
    WD = weights[:, None, None] * tangent
    if sp.issparse(strain_ops):
        n = len(weights)
        Dblk = sp.bsr_matrix((WD, np.arange(n), np.arange(n + 1)), shape=(6 * n, 6 * n)).tocsr()
        K = (strain_ops.T @ (Dblk @ strain_ops)).toarray()
    else:
        Bp = np.asarray(strain_ops).reshape(len(weights), 6, -1)
        DB = np.einsum("kij,kjn->kin", WD, Bp)
        K = np.einsum("kim,kin->mn", Bp, DB)
    return F, K


@dataclass(eq=False)
class FacetQuadrature:
    """Quadrature on labelled boundary facets.

    For point ``k``: ``facet[k]`` indexes ``mesh.facets``, ``nodes[k]`` and
    ``shape[k]`` give the facet nodes and shape values, and ``area_normal[k]``
    is the weight times the outward normal times the surface Jacobian.
    """

    facet: np.ndarray
    nodes: np.ndarray
    shape: np.ndarray
    points: np.ndarray
    area_normal: np.ndarray

    def nodal_forces(self, traction, n_dofs: int) -> np.ndarray:
        """Consistent nodal forces of a traction ``t_k = traction[k] * n_k``."""
        F = np.zeros(n_dofs)
        vec = np.asarray(traction, dtype=float)[:, None] * self.area_normal  # (k, 3)
        contrib = self.shape[:, :, None] * vec[:, None, :]  # (k, nn, 3)
        dofs = 3 * self.nodes[:, :, None] + np.arange(3)
        np.add.at(F, dofs.ravel(), contrib.ravel())
        return F


def _facet_owner_centroids(mesh: Mesh) -> list[np.ndarray]:
    by_node: dict[int, set[int]] = {}
    for e, conn in enumerate(mesh.connectivity):
        for n in conn:
            by_node.setdefault(int(n), set()).add(e)
    out = []
    for _, nodes in mesh.facets:
        owners = set.intersection(*(by_node.get(n, set()) for n in nodes))
        if not owners:
            raise MeshError(f"facet {nodes} does not belong to any element")
        out.append(mesh.nodes[mesh.connectivity[min(owners)]].mean(axis=0))
    return out


def build_facet_quadrature(mesh: Mesh, labels=None) -> FacetQuadrature:
    """2x2 Gauss on quadrilateral facets, centroid rule on triangles.

    Normals point away from the element owning the facet.
    """
    wanted = None if labels is None else set(labels)
    centroids = _facet_owner_centroids(mesh)
    g = np.array([-_G, _G])
    quad_pts = [(a, b) for b in g for a in g]
    rows = []
    for f, (label, nodes) in enumerate(mesh.facets):
        if wanted is not None and label not in wanted:
            continue
        X = mesh.nodes[list(nodes)]
        if len(nodes) == 4:
            for a, b in quad_pts:
                N = 0.25 * np.array([(1 - a) * (1 - b), (1 + a) * (1 - b), (1 + a) * (1 + b), (1 - a) * (1 + b)])
                dNa = 0.25 * np.array([-(1 - b), 1 - b, 1 + b, -(1 + b)])
                dNb = 0.25 * np.array([-(1 - a), -(1 + a), 1 + a, 1 - a])
                rows.append((f, nodes, N, N @ X, np.cross(dNa @ X, dNb @ X)))
        elif len(nodes) == 3:
            N = np.full(3, 1.0 / 3.0)
            rows.append((f, nodes, N, N @ X, 0.5 * np.cross(X[1] - X[0], X[2] - X[0])))
        else:
            raise MeshError("facets must have 3 or 4 nodes")
    if not rows:
        empty = np.zeros((0, 4))
        return FacetQuadrature(np.zeros(0, dtype=np.int64), empty.astype(np.int64), empty,
                               np.zeros((0, 3)), np.zeros((0, 3)))
    width = max(len(r[1]) for r in rows)
    facet = np.array([r[0] for r in rows], dtype=np.int64)
    nodes = np.zeros((len(rows), width), dtype=np.int64)
    shape = np.zeros((len(rows), width))
    for k, r in enumerate(rows):
        nodes[k, : len(r[1])] = r[1]
        shape[k, : len(r[1])] = r[2]
    points = np.array([r[3] for r in rows])
    an = np.array([r[4] for r in rows])
    # orient outward: away from the owning element centroid
    outward = points - np.array([centroids[f] for f in facet])
    flip = np.einsum("ij,ij->i", an, outward) < 0.0
    an[flip] *= -1.0
    return FacetQuadrature(facet, nodes, shape, points, an)


_VTK_CELL = {"hex8": 12, "tet4": 10}


def write_vtk(path, mesh: Mesh, point_data=None, cell_data=None, title: str = "evprom") -> None:
    """Legacy ASCII VTK unstructured grid.

    ``point_data`` maps names to nodal scalars ``(n,)`` or vectors ``(n, 3)``;
    ``cell_data`` maps names to per-element scalars or ``(e, k)`` arrays, the
    latter written as ``k`` scalar arrays suffixed with the column index.
    """
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {mesh.n_nodes} double")
    out += [f"{x:.10g} {y:.10g} {z:.10g}" for x, y, z in mesh.nodes]
    size = sum(len(c) + 1 for c in mesh.connectivity)
    out.append(f"CELLS {mesh.n_elements} {size}")
    out += [f"{len(c)} " + " ".join(str(int(n)) for n in c) for c in mesh.connectivity]
    out.append(f"CELL_TYPES {mesh.n_elements}")
    out += [str(_VTK_CELL[k]) for k in mesh.kinds]

    def block(kind, count, data):
        if not data:
            return
        out.append(f"{kind} {count}")
        for name, values in data.items():
            v = np.asarray(values, dtype=float)
            if v.ndim == 2 and v.shape[1] == 3 and kind == "POINT_DATA":
                out.append(f"VECTORS {name} double")
                out.extend(f"{a:.10g} {b:.10g} {c:.10g}" for a, b, c in v)
                continue
            cols = [v] if v.ndim == 1 else [v[:, j] for j in range(v.shape[1])]
            for j, col in enumerate(cols):
                suffix = "" if v.ndim == 1 else f"_{j}"
                out.append(f"SCALARS {name}{suffix} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(f"{x:.10g}" for x in col)

    block("POINT_DATA", mesh.n_nodes, point_data)
    block("CELL_DATA", mesh.n_elements, cell_data)
    Path(path).write_text("\n".join(out) + "\n")


def element_average(table: GlobalIntegrationTable, values) -> np.ndarray:
    """Measure-weighted element averages of a point field."""
    values = np.asarray(values, dtype=float)
    flat = values.reshape(table.n_points, -1)
    n_el = table.mesh.n_elements
    num = np.zeros((n_el, flat.shape[1]))
    np.add.at(num, table.element, table.measures[:, None] * flat)
    den = np.bincount(table.element, weights=table.measures, minlength=n_el)
    avg = num / den[:, None]
    return avg.reshape((n_el,) + values.shape[1:])
