"""Lloyd-like relaxation: approximate centroids, back-projection, reseeding.

A cell's triangles are the faces with at least one vertex carrying the
cell's field; its centroid is the area-weighted average of their
barycenters.  The centroid is projected back onto the cell along the
area-weighted average normal, snapped to the nearest vertex of the hit
triangle, and used as the next seed.  A ray miss keeps the previous seed.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import sparse
from .errors import (DegenerateCellError, NullNormalError, ShapeError,
                     VanishedCellError)
from .field import StepWorkspace, evolve, init_field
from .sparse import spgemm, transpose


def faces_by_cell(field, mesh):
    """Face-membership product: (n_f x n_rows) matrix, one column per layer.

    Column ``r`` has a positive entry at face ``f`` exactly when some
    vertex of ``f`` carries layer ``r``; this is the transpose of the
    row-times-incidence product used to enumerate cell triangles.
    """
    return spgemm(mesh.incidence_t, transpose(field.phi))


def cell_triangles(field, mesh, cell, product=None):
    """Indices of faces with at least one vertex inside the cell."""
    row = field.cell_row(cell)
    if product is None:
        product = faces_by_cell(field, mesh)
    faces, _ = product.column(row)
    if faces.size == 0:
        raise VanishedCellError(f"vanished-cell: cell {cell} has no faces")
    return faces.astype(np.int64)


def approx_centroid(field, mesh, cell, faces=None):
    """Area-weighted average of the cell triangles' barycenters.

    Returns ``(point, normal)`` where the normal is the normalized
    area-weighted average of the face normals.  On periodic meshes the
    barycenters are unwrapped around the cell's current seed first.
    """
    if faces is None:
        faces = cell_triangles(field, mesh, cell)
    areas = mesh.face_area[faces]
    total = float(areas.sum())
    if total <= 0.0:
        raise DegenerateCellError(f"degenerate-cell: cell {cell} has zero area")
    barys = mesh.face_barycenter[faces]
    if mesh.periodic:
        ref = mesh.positions[field.seed_vertices[cell]]
        barys = ref + mesh.wrap_deltas(barys - ref)
    point = (areas[:, None] * barys).sum(axis=0) / total
    normal_sum = (areas[:, None] * mesh.face_normal[faces]).sum(axis=0)
    norm = float(np.linalg.norm(normal_sum))
    if norm <= 1e-12 * total:
        raise NullNormalError(f"null-normal: cell {cell} normals cancel")
    return point, normal_sum / norm


def backproject(point, normal, field, mesh, cell, faces=None):
    """Intersect the line ``point +- t*normal`` with the cell triangles.

    Among all hits the one with smallest ``|t|`` wins and the hit
    triangle's vertex nearest to the hit point is returned.  A miss
    returns None (the caller keeps the old seed).
    """
    if faces is None:
        faces = cell_triangles(field, mesh, cell)
    point = np.asarray(point, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    tri = mesh.faces[faces]
    p0 = mesh.positions[tri[:, 0]]
    if mesh.periodic:
        e1 = mesh.wrap_deltas(mesh.positions[tri[:, 1]] - p0)
        e2 = mesh.wrap_deltas(mesh.positions[tri[:, 2]] - p0)
        # shift each (coherent) triangle so its barycenter is the lattice
        # representative nearest to the query point
        bc = p0 + (e1 + e2) / 3.0
        p0 = p0 + (point + mesh.wrap_deltas(bc - point)) - bc
    else:
        e1 = mesh.positions[tri[:, 1]] - p0
        e2 = mesh.positions[tri[:, 2]] - p0
    p1 = p0 + e1
    p2 = p0 + e2

    h = np.cross(np.broadcast_to(normal, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, h)
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    ok = np.abs(det) > 1e-14 * np.maximum(scale, 1e-300)
    s = point - p0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.einsum("ij,ij->i", s, h) / det
        q = np.cross(s, e1)
        v = np.einsum("ij,j->i", q, normal) / det
        t = np.einsum("ij,ij->i", e2, q) / det
    eps = 1e-12
    hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1.0 + eps)
    if not hit.any():
        return None
    idx = np.flatnonzero(hit)
    best = idx[np.argmin(np.abs(t[idx]))]
    hp = point + t[best] * normal
    corners = np.stack([p0[best], p1[best], p2[best]])
    nearest = int(np.argmin(np.linalg.norm(corners - hp, axis=1)))
    return int(tri[best, nearest])


def cell_areas(field, mesh):
    """Field-weighted area per cell: sum of vertex_area * phi over vertices.

    Band vertices contribute fractionally to each incident cell.
    """
    phi = field.phi
    nnz = phi.nnz
    weights = phi.values[:nnz] * mesh.vertex_area[phi.entry_columns()]
    sums = np.zeros(phi.n_rows)
    np.add.at(sums, phi.row_idx[:nnz], weights)
    return sums[1:]


@dataclass
class LloydState:
    """Relaxation state: current seeds, field, and per-iteration history."""

    seeds: np.ndarray
    field: object = None
    iteration: int = 0
    history: list = dc_field(default_factory=list)

    def history_json(self):
        return self.history


def _record(state, mesh, trace, reseed_report):
    areas = cell_areas(state.field, mesh)
    state.history.append({
        "iteration": state.iteration,
        "seeds": [int(s) for s in state.seeds],
        "seed_positions": mesh.positions[state.seeds].tolist(),
        "cell_areas": areas.tolist(),
        "area_variance": float(np.var(areas)),
        "steps": len(trace),
        "converged": bool(trace[-1].converged) if trace else True,
        **reseed_report,
    })


def _reseed(state, mesh):
    """New seed per cell; misses and collisions keep deterministic fallbacks."""
    product = faces_by_cell(state.field, mesh)
    n_cells = state.field.n_cells
    candidates = np.array(state.seeds, dtype=np.int64)
    misses = 0
    for c in range(n_cells):
        old = int(state.seeds[c])
        try:
            faces = cell_triangles(state.field, mesh, c, product=product)
            point, normal = approx_centroid(state.field, mesh, c, faces=faces)
            hit = backproject(point, normal, state.field, mesh, c, faces=faces)
        except (VanishedCellError, DegenerateCellError, NullNormalError):
            hit = None
        if hit is None:
            misses += 1
            hit = old
        candidates[c] = hit

    taken = set()
    collisions = 0
    seeds = np.empty(n_cells, dtype=np.int64)
    phi = state.field.phi
    for c in range(n_cells):
        pick = int(candidates[c])
        if pick in taken:
            collisions += 1
            pick = int(state.seeds[c])
        if pick in taken:
            # the old seed was stolen by an earlier cell's centroid;
            # take the lowest free vertex still inside this cell
            nnz = phi.nnz
            mine = phi.entry_columns()[phi.row_idx[:nnz] == c + 1]
            free = [int(v) for v in np.sort(mine) if int(v) not in taken]
            if not free:
                raise VanishedCellError(
                    f"vanished-cell: no free vertex left for cell {c}")
            pick = free[0]
        taken.add(pick)
        seeds[c] = pick
    return seeds, {"reseed_misses": misses, "seed_collisions": collisions}


def lloyd_iterate(state, mesh, lap, params, n_iter, max_steps=1000, tol=1e-4):
    """Run ``n_iter`` relaxation iterations (plus the initial evolve).

    Every iteration evolves the field to convergence, records seeds,
    per-cell areas and their variance, then reseeds at the back-projected
    centroids.  ``n_iter`` iterations therefore record ``n_iter + 1``
    convergence passes.
    """
    if n_iter < 1:
        raise ShapeError("n_iter must be >= 1")
    ws = StepWorkspace()
    if state.field is None:
        state.field = init_field(mesh, state.seeds)
    if state.field.step_count == 0:
        state.field, trace = evolve(state.field, lap, params,
                                    max_steps=max_steps, tol=tol,
                                    workspace=ws)
    else:
        trace = []
    if not state.history:
        _record(state, mesh, trace,
                {"reseed_misses": 0, "seed_collisions": 0})
    for _ in range(n_iter):
        seeds, report = _reseed(state, mesh)
        state.seeds = seeds
        state.iteration += 1
        state.field = init_field(mesh, seeds)
        state.field, trace = evolve(state.field, lap, params,
                                    max_steps=max_steps, tol=tol,
                                    workspace=ws)
        _record(state, mesh, trace, report)
    return state
