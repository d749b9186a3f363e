import numpy as np
import pytest

import fieldtess as ft
from fieldtess.errors import (DuplicateSeedError, NumericalBlowupError,
                              ShapeError)
from fieldtess.field import (CouplingParams, LayeredField, StepWorkspace,
                             UNCLAIMED, band_vertex_fraction, evolve,
                             init_field, load_field, save_field, sharp_labels,
                             step)
from fieldtess.mesh import TriMesh, build_laplacian, gen_periodic_grid
from fieldtess.sparse import SparseMat

from _oracles import coupling_matrices, reference_step


@pytest.fixture(scope="module")
def grid9():
    return gen_periodic_grid(9, 9)


@pytest.fixture(scope="module")
def lap9(grid9):
    return build_laplacian(grid9, "uniform")


def star_mesh():
    """Five-vertex star: a degree-4 center with a closed fan around it."""
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]],
                   dtype=float)
    faces = [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]]
    return TriMesh(pos, faces)


class TestInit:
    def test_seed_claims_one_ring(self, grid9):
        fld = init_field(grid9, [40])
        rows, vals = fld.phi.column(40)
        assert list(rows) == [1] and vals[0] == 1.0
        claimed = [v for v in range(81) if fld.phi.get(1, v) == 1.0]
        assert len(claimed) == 7

    def test_base_mass_is_complement(self, grid9):
        fld = init_field(grid9, [40])
        assert fld.base_mass() == grid9.n_vertices - 7

    def test_shared_ring_vertex_split(self, grid9):
        # adjacent seeds: the ring vertices claimed by both end up 0.5/0.5
        s0, s1 = 40, 41
        fld = init_field(grid9, [s0, s1])
        shared = (set(int(v) for v in grid9.neighbors(s0)) | {s0}) \
            & (set(int(v) for v in grid9.neighbors(s1)) | {s1})
        assert shared
        v = shared.pop()
        assert fld.phi.get(1, v) == 0.5
        assert fld.phi.get(2, v) == 0.5

    def test_columns_sum_to_one(self, grid9):
        fld = init_field(grid9, [3, 40, 77])
        assert np.abs(fld.column_sums() - 1.0).max() < 1e-12

    def test_duplicate_seed(self, grid9):
        with pytest.raises(DuplicateSeedError, match="duplicate-seed"):
            init_field(grid9, [4, 4])


class TestStepOracle:
    """The engine must reproduce the literal dense update exactly."""

    def assert_matches_reference(self, mesh, lap, phi_dense, params):
        fld = LayeredField(SparseMat.from_dense(phi_dense),
                           np.arange(phi_dense.shape[0] - 1))
        out, stats = step(fld, lap, params)
        w_mat, a_mat, e_mat = coupling_matrices(
            phi_dense.shape[0], params.w, params.a, params.e, params.e_base)
        ref = reference_step(phi_dense, lap.mat.to_dense(),
                             w_mat, a_mat, e_mat, params.mu, params.dt)
        assert np.allclose(out.phi.to_dense(), ref, atol=1e-12)

    def test_star_mesh_hand_case(self):
        # one growing cell vs the base on the 5-vertex star
        mesh = star_mesh()
        lap = build_laplacian(mesh, "uniform")
        phi = np.zeros((2, 5))
        phi[1, 0] = 1.0
        phi[1, 1] = 0.4
        phi[0] = 1.0 - phi[1]
        self.assert_matches_reference(mesh, lap, phi,
                                      CouplingParams())

    def test_random_fields_match_reference(self, grid9, lap9):
        rng = np.random.default_rng(33)
        for trial in range(6):
            n_cells = int(rng.integers(1, 5))
            phi = np.zeros((n_cells + 1, 81))
            for r in range(1, n_cells + 1):
                support = rng.choice(81, size=rng.integers(3, 20),
                                     replace=False)
                phi[r, support] = rng.random(support.size)
            sums = phi.sum(axis=0)
            phi[0] = np.maximum(1.0 - sums, 0.0)
            phi /= phi.sum(axis=0, keepdims=True)
            params = CouplingParams(
                w=0.2, a=1.0, e=float(rng.uniform(0, 0.5)),
                e_base=float(rng.uniform(0, 0.5)),
                mu=float(rng.uniform(0.05, 0.4)), dt=float(rng.uniform(1, 5)))
            self.assert_matches_reference(grid9, lap9, phi, params)

    def test_multi_step_match(self, grid9, lap9):
        params = CouplingParams()
        fld = init_field(grid9, [20, 60])
        dense = fld.phi.to_dense()
        w_mat, a_mat, e_mat = coupling_matrices(3, params.w, params.a,
                                                params.e, params.e_base)
        lap_dense = lap9.mat.to_dense()
        cur = fld
        ws = StepWorkspace()
        for _ in range(5):
            cur, _ = step(cur, lap9, params, workspace=ws)
            dense = reference_step(dense, lap_dense, w_mat, a_mat, e_mat,
                                   params.mu, params.dt)
        assert np.allclose(cur.phi.to_dense(), dense, atol=1e-12)


class TestStepProperties:
    def test_sharp_single_cell_is_fixed_point(self, grid9, lap9):
        phi = np.zeros((2, 81))
        phi[1] = 1.0
        fld = LayeredField(SparseMat.from_dense(phi), np.array([0]))
        out, stats = step(fld, lap9, CouplingParams())
        assert stats.max_delta == 0.0
        assert np.array_equal(out.phi.to_dense(), phi)

    def test_mirror_symmetry(self):
        # two seeds placed symmetrically: swapping rows and mirroring the
        # grid leaves the field unchanged at every step
        mesh = gen_periodic_grid(8, 8)
        lap = build_laplacian(mesh, "uniform")
        sa, sb = 2, 6  # same row, mirrored around i=4 with wrap
        fld = init_field(mesh, [sa, sb])
        params = CouplingParams()
        cur = fld
        mirror = np.array([[(j * 8 + (8 - i) % 8)] for j in range(8)
                           for i in range(8)]).ravel()
        for _ in range(12):
            cur, _ = step(cur, lap, params)
            dense = cur.phi.to_dense()
            mirrored = dense[[0, 2, 1]][:, mirror]
            assert np.allclose(dense, mirrored, atol=1e-12)

    def test_partition_of_unity_and_range(self, grid9, lap9):
        fld = init_field(grid9, [11, 70])
        cur = fld
        ws = StepWorkspace()
        for _ in range(60):
            cur, _ = step(cur, lap9, CouplingParams(), workspace=ws)
            vals = cur.phi.values[:cur.phi.nnz]
            assert vals.min() >= 0.0 and vals.max() <= 1.0
            assert np.abs(cur.column_sums() - 1.0).max() < 1e-9

    def test_locality_one_ring_per_step(self, grid9, lap9):
        fld = init_field(grid9, [40])
        cur = fld
        for _ in range(10):
            before = {(int(r), int(c)) for r, c in
                      zip(cur.phi.row_idx[:cur.phi.nnz],
                          cur.phi.entry_columns())}
            cols_before = {c for _, c in before}
            dilated = set(cols_before)
            for c in cols_before:
                dilated.update(int(u) for u in grid9.neighbors(c))
            cur, _ = step(cur, lap9, CouplingParams())
            cols_after = set(int(c) for c in cur.phi.entry_columns())
            assert cols_after <= dilated

    def test_relabel_equivariance(self, grid9, lap9):
        seeds = [5, 33, 62]
        perm = [2, 0, 1]
        fld_a = init_field(grid9, seeds)
        fld_b = init_field(grid9, [seeds[p] for p in perm])
        params = CouplingParams()
        a, b = fld_a, fld_b
        for _ in range(8):
            a, _ = step(a, lap9, params)
            b, _ = step(b, lap9, params)
        da = a.phi.to_dense()
        db = b.phi.to_dense()
        assert np.allclose(da[1 + np.array(perm)], db[1:], atol=1e-14)

    def test_numerical_blowup_reported(self, grid9, lap9):
        fld = init_field(grid9, [40])
        bad = CouplingParams(a=float("inf"))
        with pytest.raises(NumericalBlowupError, match="numerical-blowup"):
            step(fld, lap9, bad)


class TestEvolve:
    def test_converged_input_returns_after_one_step(self, grid9, lap9):
        phi = np.zeros((2, 81))
        phi[1] = 1.0
        fld = LayeredField(SparseMat.from_dense(phi), np.array([0]))
        out, trace = evolve(fld, lap9, CouplingParams(), max_steps=50)
        assert len(trace) == 1 and trace[0].converged

    def test_four_symmetric_seeds_exhaust_base(self):
        mesh = gen_periodic_grid(50, 50)
        lap = build_laplacian(mesh, "uniform")
        seeds = [50 * 12 + 12, 50 * 12 + 37, 50 * 37 + 12, 50 * 37 + 37]
        fld = init_field(mesh, seeds)
        out, trace = evolve(fld, lap, CouplingParams(), max_steps=2500)
        assert trace[-1].converged
        assert trace[-1].base_mass < 1e-9 * mesh.n_vertices

    def test_input_field_stays_valid(self, grid9, lap9):
        fld = init_field(grid9, [40])
        before = fld.phi.to_dense()
        evolve(fld, lap9, CouplingParams(), max_steps=30)
        assert np.array_equal(fld.phi.to_dense(), before)

    def test_non_convergence_flagged(self, grid9, lap9):
        fld = init_field(grid9, [40, 44])
        out, trace = evolve(fld, lap9, CouplingParams(), max_steps=3)
        assert len(trace) == 3
        assert not trace[-1].converged

    def test_max_steps_validation(self, grid9, lap9):
        with pytest.raises(ShapeError):
            evolve(init_field(grid9, [0]), lap9, CouplingParams(),
                   max_steps=0)


class TestSharpLabels:
    def make_field(self, columns, n_rows, n_cols):
        dense = np.zeros((n_rows, n_cols))
        for col, entries in columns.items():
            for row, val in entries.items():
                dense[row, col] = val
        return LayeredField(SparseMat.from_dense(dense),
                            np.arange(n_rows - 1))

    def test_argmax(self):
        fld = self.make_field({0: {4: 0.9, 8: 0.1}}, 9, 2)
        labs = sharp_labels(fld)
        assert labs[0] == 3

    def test_base_dominates(self):
        fld = self.make_field({0: {0: 1.0}}, 9, 1)
        assert sharp_labels(fld)[0] == UNCLAIMED

    def test_tie_lowest_cell(self):
        fld = self.make_field({0: {3: 0.5, 6: 0.5}}, 9, 1)
        assert sharp_labels(fld)[0] == 2


class TestAblation:
    def test_band_fraction_drops_without_interaction(self):
        mesh = gen_periodic_grid(32, 32)
        lap = build_laplacian(mesh, "uniform")
        seeds = [32 * 8 + 8, 32 * 24 + 24]
        f1, t1 = evolve(init_field(mesh, seeds), lap, CouplingParams(),
                        max_steps=2500)
        f0, t0 = evolve(init_field(mesh, seeds), lap, CouplingParams(e=0.0),
                        max_steps=2500)
        assert band_vertex_fraction(f0) < band_vertex_fraction(f1)


class TestSnapshots:
    def test_round_trip(self, grid9, lap9, tmp_path):
        params = CouplingParams()
        fld, trace = evolve(init_field(grid9, [13, 57]), lap9, params,
                            max_steps=120)
        path = tmp_path / "field.txt"
        save_field(fld, params, path)
        back, back_params = load_field(path)
        assert back_params == params
        assert np.array_equal(back.seed_vertices, fld.seed_vertices)
        assert back.step_count == fld.step_count
        assert np.array_equal(back.phi.to_dense(), fld.phi.to_dense())

    def test_byte_stable(self, grid9, lap9, tmp_path):
        params = CouplingParams()
        fld, _ = evolve(init_field(grid9, [13, 57]), lap9, params,
                        max_steps=60)
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        save_field(fld, params, p1)
        save_field(fld, params, p2)
        assert p1.read_bytes() == p2.read_bytes()
