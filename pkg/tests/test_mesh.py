import numpy as np
import pytest

import fieldtess as ft
from fieldtess.errors import (IsolatedVertexError, MeshFormatError,
                              NonTriangularFaceError)
from fieldtess.mesh import (TriMesh, build_laplacian, gen_icosphere,
                            gen_periodic_grid, load_mesh, write_obj)

from _oracles import graph_laplacian_dense

SINGLE_TRI_OBJ = """\
v 0 0 0
v 1 0 0
v 0 1 0
f 1 2 3
"""

CUBE_OFF = """\
OFF
8 12 0
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
3 0 2 1
3 0 3 2
3 4 5 6
3 4 6 7
3 0 1 5
3 0 5 4
3 1 2 6
3 1 6 5
3 2 3 7
3 2 7 6
3 3 0 4
3 3 4 7
"""


class TestLoaders:
    def test_single_triangle_obj(self, tmp_path):
        path = tmp_path / "tri.obj"
        path.write_text(SINGLE_TRI_OBJ)
        mesh = load_mesh(path)
        assert mesh.n_vertices == 3 and mesh.n_faces == 1
        assert mesh.incidence.shape == (3, 1)
        assert mesh.incidence.nnz == 3
        assert np.all(mesh.incidence.values[:3] == 1.0)

    def test_cube_off_vertex_areas(self, tmp_path):
        path = tmp_path / "cube.off"
        path.write_text(CUBE_OFF)
        mesh = load_mesh(path)
        assert mesh.n_vertices == 8 and mesh.n_faces == 12
        assert abs(mesh.vertex_area.sum() - 6.0) < 1e-12

    def test_icosphere_obj_round_trip(self, tmp_path):
        mesh = gen_icosphere(2)
        path = tmp_path / "ico.obj"
        write_obj(mesh, path)
        back = load_mesh(path)
        # Euler characteristic via an independent edge count
        edges = set()
        for tri in back.faces:
            for a, b in ((0, 1), (1, 2), (2, 0)):
                edges.add((min(tri[a], tri[b]), max(tri[a], tri[b])))
        assert back.n_vertices - len(edges) + back.n_faces == 2
        assert np.allclose(back.positions, mesh.positions)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0 0\nv oops 0 0\n")
        with pytest.raises(MeshFormatError, match="line 2"):
            load_mesh(path)

    def test_non_triangular_face(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(NonTriangularFaceError, match="non-triangular"):
            load_mesh(path)

    def test_obj_face_with_slashes(self, tmp_path):
        path = tmp_path / "slash.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n")
        mesh = load_mesh(path)
        assert mesh.n_faces == 1

    def test_degenerate_face_rejected(self):
        with pytest.raises(MeshFormatError, match="degenerate"):
            TriMesh(np.zeros((3, 3)), [[0, 1, 1]])


class TestPeriodicGrid:
    def test_counts_4x4(self):
        mesh = gen_periodic_grid(4, 4)
        assert mesh.n_vertices == 16 and mesh.n_faces == 32

    def test_all_degrees_six(self):
        mesh = gen_periodic_grid(5, 7)
        assert np.all(mesh.degree == 6)

    def test_euler_characteristic_zero(self):
        mesh = gen_periodic_grid(10, 10)
        assert mesh.euler_characteristic() == 0

    def test_equilateral_faces(self):
        mesh = gen_periodic_grid(6, 6, spacing=2.0)
        assert np.allclose(mesh.face_area, np.sqrt(3.0), atol=1e-12)
        d = mesh.wrap_deltas(mesh.positions[mesh.edges[:, 1]]
                             - mesh.positions[mesh.edges[:, 0]])
        assert np.allclose(np.linalg.norm(d, axis=1), 2.0)

    def test_too_small(self):
        with pytest.raises(MeshFormatError, match="too small"):
            gen_periodic_grid(2, 4)

    def test_wrapped_distance_symmetry(self):
        mesh = gen_periodic_grid(8, 8)
        d1 = mesh.wrapped_distance(mesh.positions[3], mesh.positions[61])
        d2 = mesh.wrapped_distance(mesh.positions[61], mesh.positions[3])
        assert np.allclose(d1, d2)


class TestIcosphere:
    def test_subdiv0(self):
        mesh = gen_icosphere(0)
        assert mesh.n_vertices == 12 and mesh.n_faces == 20

    def test_subdiv1(self):
        mesh = gen_icosphere(1)
        assert mesh.n_vertices == 42 and mesh.n_faces == 80

    def test_unit_norms(self):
        mesh = gen_icosphere(3)
        norms = np.linalg.norm(mesh.positions, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-12

    def test_euler(self):
        assert gen_icosphere(2).euler_characteristic() == 2

    def test_subdiv_bounds(self):
        with pytest.raises(MeshFormatError):
            gen_icosphere(8)


class TestLaplacian:
    def test_uniform_grid_weights(self):
        mesh = gen_periodic_grid(6, 6)
        lap = build_laplacian(mesh, "uniform")
        dense = lap.mat.to_dense()
        assert np.allclose(np.diag(dense), -1.0)
        off = dense - np.diag(np.diag(dense))
        assert np.allclose(off[off != 0], 1.0 / 6.0)

    def test_row_sums_zero(self, icosphere4):
        for scheme in ("uniform", "cotan-clamped"):
            lap = build_laplacian(icosphere4, scheme)
            nnz = lap.mat.nnz
            sums = np.zeros(icosphere4.n_vertices)
            np.add.at(sums, lap.mat.row_idx[:nnz], lap.mat.values[:nnz])
            assert np.abs(sums).max() < 1e-10

    def test_constant_field_in_kernel(self):
        mesh = gen_icosphere(2)
        for scheme in ("uniform", "cotan-clamped"):
            lap = build_laplacian(mesh, scheme)
            c = ft.SparseMat.from_dense(np.full((1, mesh.n_vertices), 3.0))
            out = ft.spgemm(c, lap.mat_t)
            assert np.abs(out.to_dense()).max() < 1e-10

    def test_matches_dense_reference(self):
        mesh = gen_periodic_grid(5, 5)
        lap = build_laplacian(mesh, "uniform")
        ref = graph_laplacian_dense(
            [mesh.neighbors(v) for v in range(mesh.n_vertices)],
            mesh.n_vertices)
        assert np.allclose(lap.mat.to_dense(), ref)
        assert np.allclose(lap.mat_t.to_dense(), ref.T)

    def test_indicator_ring_signs(self):
        # region = a vertex and its ring; the field Laplacian is positive
        # exactly on the outside ring, negative on the inner boundary
        mesh = gen_periodic_grid(9, 9)
        lap = build_laplacian(mesh, "uniform")
        center = 4 * 9 + 4
        region = set([center]) | set(int(v) for v in mesh.neighbors(center))
        ind = np.zeros((1, mesh.n_vertices))
        ind[0, list(region)] = 1.0
        lt = ft.spgemm(ft.SparseMat.from_dense(ind), lap.mat_t).to_dense()[0]
        outer = {int(u) for v in region for u in mesh.neighbors(v)} - region
        inner = {v for v in region
                 if any(int(u) not in region for u in mesh.neighbors(v))}
        for v in range(mesh.n_vertices):
            if v in outer:
                assert lt[v] > 1e-12
            elif v in inner:
                assert lt[v] < -1e-12
            else:
                assert abs(lt[v]) < 1e-12

    def test_cotan_clamps_obtuse(self):
        # a very obtuse triangle pair: raw cotangent of the shared edge is
        # negative (checked directly), the clamped Laplacian keeps all
        # off-diagonals non-negative
        pos = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                        [0.5, 0.05, 0.0], [0.5, -0.05, 0.0]])
        faces = np.array([[0, 1, 2], [0, 3, 1]])
        mesh = TriMesh(pos, faces)

        def raw_cot(a, b, apex):
            u = pos[a] - pos[apex]
            v = pos[b] - pos[apex]
            return np.dot(u, v) / np.linalg.norm(np.cross(u, v))

        assert raw_cot(0, 1, 2) + raw_cot(0, 1, 3) < 0
        lap = build_laplacian(mesh, "cotan-clamped")
        dense = lap.mat.to_dense()
        off = dense - np.diag(np.diag(dense))
        assert off.min() >= 0.0
        assert np.allclose(np.diag(dense), -1.0)

    def test_cotan_pattern_symmetric(self, icosphere4):
        lap = build_laplacian(icosphere4, "cotan-clamped")
        dense = lap.mat.to_dense()
        assert np.array_equal(dense != 0, dense.T != 0)

    def test_isolated_vertex(self):
        pos = np.zeros((4, 3))
        pos[:3] = np.eye(3)
        mesh = TriMesh(pos, [[0, 1, 2]])
        with pytest.raises(IsolatedVertexError, match="isolated-vertex"):
            build_laplacian(mesh, "uniform")

    def test_sign_convention(self):
        # vertex outside a region with an inside neighbor sees positive Lt
        mesh = gen_periodic_grid(5, 5)
        lap = build_laplacian(mesh, "uniform")
        phi = np.zeros((1, 25))
        phi[0, 7] = 1.0
        lt = ft.spgemm(ft.SparseMat.from_dense(phi), lap.mat_t).to_dense()[0]
        for v in mesh.neighbors(7):
            assert lt[v] > 0


class TestIncidence:
    def test_column_count_property(self, icosphere4):
        m = icosphere4.incidence
        counts = np.diff(m.col_ptr.astype(int))
        assert np.all(counts == 3)

    def test_degree_via_incidence(self):
        mesh = gen_periodic_grid(5, 5)
        ones = ft.SparseMat.from_dense(np.ones((mesh.n_faces, 1)))
        deg = ft.spgemm(mesh.incidence, ones).to_dense().ravel()
        # each vertex of the torus grid touches 6 faces
        assert np.all(deg == 6)

    def test_non_manifold_warning(self):
        pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
                        [0, -1, 0.5]], dtype=float)
        faces = [[0, 1, 2], [0, 1, 3], [0, 1, 4]]
        with pytest.warns(RuntimeWarning, match="non-manifold"):
            TriMesh(pos, faces)
