"""Cell adjacency by sparse products, curation, and dual-mesh construction.

Two cells are preliminarily adjacent when they share a thresholded vertex
(vertex-level product) or merely travel the same triangle (face-level
product).  Face-only candidates are confirmed by intersecting the two
cells' threshold isolines inside the shared triangles, with a guard that
drops intersections whose cells already share two confirmed neighbors
(which would make the dual non-manifold).  The dual triangulation is then
read off the curated adjacency by ring intersection.
"""

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import NonManifoldError, ShapeError
from .sparse import SparseMat, spgemm, transpose


@dataclass
class AdjacencyMatrix:
    """Binary, symmetric, zero-diagonal cell adjacency with provenance.

    ``provenance`` maps the (i, j), i < j pair to how the entry was
    established ('vertex-shared' or 'triangle-confirmed'); ``dropped``
    lists rejected candidate pairs with the reason.  ``junction_triples``
    (when curated) holds every cell triple that demonstrably meets on a
    common face; cells can be pairwise adjacent through separate walls
    without ever meeting at a point, and only evidenced triples may
    become dual triangles.
    """

    mat: SparseMat
    provenance: dict = dc_field(default_factory=dict)
    dropped: list = dc_field(default_factory=list)
    junction_triples: set = None

    @property
    def n_cells(self):
        return self.mat.n_rows

    def neighbors(self, i):
        rows, _ = self.mat.column(i)
        return rows.astype(np.int64)

    def pairs(self):
        """Upper-triangle (i, j) pairs present in the matrix."""
        cols = self.mat.entry_columns()
        rows = self.mat.row_idx[:self.mat.nnz].astype(np.int64)
        keep = rows < cols
        return list(zip(rows[keep].tolist(), cols[keep].tolist()))


def _check_threshold(threshold):
    if not 0.0 < threshold < 0.5:
        raise ShapeError("threshold must lie strictly between 0 and 0.5")


def threshold_rows(field, threshold):
    """Binary cells x vertices matrix: 1 where phi >= threshold (base dropped)."""
    _check_threshold(threshold)
    phi = field.phi
    nnz = phi.nnz
    rows = phi.row_idx[:nnz].astype(np.int64)
    cols = phi.entry_columns()
    vals = phi.values[:nnz]
    keep = (rows >= 1) & (vals >= threshold)
    return SparseMat.from_triplets(phi.n_rows - 1, phi.n_cols,
                                   rows[keep] - 1, cols[keep],
                                   np.ones(int(keep.sum())))


def _boolean_offdiag(product):
    """Binarize a symmetric product and clear its diagonal."""
    nnz = product.nnz
    rows = product.row_idx[:nnz].astype(np.int64)
    cols = product.entry_columns()
    keep = (rows != cols) & (product.values[:nnz] != 0)
    return SparseMat.from_triplets(product.n_rows, product.n_cols,
                                   rows[keep], cols[keep],
                                   np.ones(int(keep.sum())))


def vertex_adjacency(field, threshold=0.25):
    """Cells adjacent through a shared thresholded vertex."""
    pb = threshold_rows(field, threshold)
    mat = _boolean_offdiag(spgemm(pb, transpose(pb)))
    adj = AdjacencyMatrix(mat)
    adj.provenance = {pair: "vertex-shared" for pair in adj.pairs()}
    return adj


def triangle_adjacency(field, mesh, threshold=0.25):
    """Cells whose thresholded regions touch the same triangle."""
    pb = threshold_rows(field, threshold)
    b = spgemm(pb, mesh.incidence)
    mat = _boolean_offdiag(spgemm(b, transpose(b)))
    return AdjacencyMatrix(mat)


# -- isoline confirmation ---------------------------------------------------

_EMBED = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _isoline_segment(values, threshold):
    """Level-set segment of a linear field over the reference triangle.

    Returns a (2, 2) array of barycentric-embedding endpoints, or None
    when the level set does not cross the triangle transversally.
    """
    rel = values - threshold
    pts = []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        if rel[a] * rel[b] < 0.0:
            s = rel[a] / (rel[a] - rel[b])
            if not np.isfinite(s):
                return None
            pts.append(_EMBED[a] + s * (_EMBED[b] - _EMBED[a]))
    if len(pts) != 2:
        return None
    return np.asarray(pts)


def _orient(a, b, c):
    d = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if d > 0.0:
        return 1
    if d < 0.0:
        return -1
    return 0


def _on_segment(a, b, c):
    # collinear point c within the bounding box of segment ab
    return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))


def segments_intersect(p, q):
    """Exact-sign segment intersection test (touching counts)."""
    o1 = _orient(p[0], p[1], q[0])
    o2 = _orient(p[0], p[1], q[1])
    o3 = _orient(q[0], q[1], p[0])
    o4 = _orient(q[0], q[1], p[1])
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(p[0], p[1], q[0]):
        return True
    if o2 == 0 and _on_segment(p[0], p[1], q[1]):
        return True
    if o3 == 0 and _on_segment(q[0], q[1], p[0]):
        return True
    if o4 == 0 and _on_segment(q[0], q[1], p[1]):
        return True
    return False


def confirm_candidates(field, mesh, a_v, a_t, threshold=0.25):
    """Curate the adjacency: keep A_v, confirm or drop A_t-only pairs.

    A candidate pair survives only if its two threshold isolines cross
    inside some shared triangle AND the pair does not already share two
    confirmed common neighbors (ascending (row, col) processing order).
    """
    _check_threshold(threshold)
    pb = threshold_rows(field, threshold)
    b = spgemm(pb, mesh.incidence)
    faces_of_cell = transpose(b)            # column c: faces touching cell c

    confirmed = set(a_v.pairs())
    neigh = {c: set() for c in range(a_v.n_cells)}
    for (i, j) in confirmed:
        neigh[i].add(j)
        neigh[j].add(i)

    provenance = {pair: "vertex-shared" for pair in confirmed}
    dropped = []
    candidates = sorted(set(a_t.pairs()) - confirmed)
    phi = field.phi
    for (i, j) in candidates:
        fi, _ = faces_of_cell.column(i)
        fj, _ = faces_of_cell.column(j)
        shared = np.intersect1d(fi, fj)
        crossing = False
        for f in shared:
            if mesh.face_area[f] <= 0.0:
                warnings.warn(f"skipping degenerate face {f} during isoline "
                              "confirmation", RuntimeWarning, stacklevel=2)
                continue
            verts = mesh.faces[f]
            vi = np.array([phi.get(i + 1, v) for v in verts])
            vj = np.array([phi.get(j + 1, v) for v in verts])
            if not (np.isfinite(vi).all() and np.isfinite(vj).all()):
                warnings.warn(f"skipping face {f}: non-finite interpolation",
                              RuntimeWarning, stacklevel=2)
                continue
            si = _isoline_segment(vi, threshold)
            sj = _isoline_segment(vj, threshold)
            if si is None or sj is None:
                continue
            if segments_intersect(si, sj):
                crossing = True
                break
        if not crossing:
            dropped.append((i, j, "no-intersection"))
            continue
        if len(neigh[i] & neigh[j]) >= 2:
            dropped.append((i, j, "manifold-guard"))
            continue
        confirmed.add((i, j))
        provenance[(i, j)] = "triangle-confirmed"
        neigh[i].add(j)
        neigh[j].add(i)

    rows, cols = [], []
    for (i, j) in confirmed:
        rows += [i, j]
        cols += [j, i]
    mat = SparseMat.from_triplets(a_v.n_cells, a_v.n_cells, rows, cols,
                                  np.ones(len(rows)))
    triples = set()
    for f in range(b.n_cols):
        cells, _ = b.column(f)
        if cells.size >= 3:
            cl = sorted(int(c) for c in cells)
            for x in range(len(cl)):
                for y in range(x + 1, len(cl)):
                    for z in range(y + 1, len(cl)):
                        triples.add((cl[x], cl[y], cl[z]))
    return AdjacencyMatrix(mat, provenance=provenance, dropped=dropped,
                           junction_triples=triples)


# -- dual construction --------------------------------------------------------


@dataclass
class DualMesh:
    """One vertex per cell, consistently oriented triangles."""

    positions: np.ndarray
    triangles: np.ndarray
    spurious_removed: list = dc_field(default_factory=list)

    def referenced_vertices(self):
        return np.unique(self.triangles) if self.triangles.size else \
            np.zeros(0, dtype=np.int64)

    def edges(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self):
        return (self.referenced_vertices().size - self.edges().shape[0]
                + self.triangles.shape[0])


def edge_use_counts(triangles):
    """Map undirected edge -> number of incident triangles."""
    counts = {}
    for tri in triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
            counts[key] = counts.get(key, 0) + 1
    return counts


def is_consistently_oriented(triangles):
    """True when no directed edge is traversed twice."""
    seen = set()
    for tri in triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = (int(tri[a]), int(tri[b]))
            if key in seen:
                return False
            seen.add(key)
    return True


def _orient_triangles(tris):
    """Propagate a consistent winding by breadth-first search."""
    tris = [list(t) for t in tris]
    edge_map = {}
    for t_id, tri in enumerate(tris):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
            edge_map.setdefault(key, []).append(t_id)
    visited = [False] * len(tris)
    for start in range(len(tris)):
        if visited[start]:
            continue
        visited[start] = True
        queue = [start]
        while queue:
            t_id = queue.pop()
            tri = tris[t_id]
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                for other in edge_map[key]:
                    if other == t_id or visited[other]:
                        continue
                    o = tris[other]
                    o_dir = {(o[0], o[1]), (o[1], o[2]), (o[2], o[0])}
                    # neighbors must traverse the shared edge oppositely
                    if (tri[a], tri[b]) in o_dir:
                        tris[other] = [o[0], o[2], o[1]]
                    visited[other] = True
                    queue.append(other)
    return np.asarray(tris, dtype=np.int32)


def build_dual(adj, positions, cell_normals=None):
    """Dual triangulation of a curated adjacency matrix.

    For each cell the neighbor ring is reduced by popping one neighbor
    and intersecting its neighbors with the remaining ring; every common
    element closes a triangle.  A spurious outer triangle around a
    three-neighbor cell is removed only when one of its edges is
    over-shared (so a closed tetrahedral configuration survives).  When
    ``cell_normals`` is given, the globally consistent orientation is
    flipped so that the majority of triangle normals align with them.
    """
    mat = adj.mat if isinstance(adj, AdjacencyMatrix) else adj
    triples = getattr(adj, "junction_triples", None)
    positions = np.asarray(positions, dtype=np.float64)
    n = mat.n_rows
    neigh = [set(mat.column(i)[0].tolist()) for i in range(n)]

    tri_set = set()
    for i in range(n):
        ring = sorted(neigh[i])
        while ring:
            j = ring.pop(0)
            for k in ring:
                if k in neigh[j]:
                    tri_set.add(tuple(sorted((i, j, k))))
    if triples is not None:
        # pairwise adjacency alone cannot distinguish three cells meeting
        # at a junction from three cells chained through separate walls;
        # keep only triples that demonstrably share a face
        tri_set &= triples

    spurious = []
    for i in range(n):
        if len(neigh[i]) != 3:
            continue
        a, b, c = sorted(neigh[i])
        if b in neigh[a] and c in neigh[a] and c in neigh[b]:
            outer = (a, b, c)
            if outer not in tri_set:
                continue
            counts = edge_use_counts(np.asarray(sorted(tri_set)))
            over = any(counts.get((min(u, v), max(u, v)), 0) > 2
                       for u, v in ((a, b), (b, c), (a, c)))
            if over:
                tri_set.discard(outer)
                spurious.append(outer)

    triangles = np.asarray(sorted(tri_set), dtype=np.int32).reshape(-1, 3)

    counts = edge_use_counts(triangles)
    bad_edges = [e for e, c in counts.items() if c > 2]
    if bad_edges:
        cells = sorted({v for e in bad_edges for v in e})
        raise NonManifoldError(
            f"non-manifold-residual: {len(bad_edges)} edge(s) shared by "
            f"more than two dual triangles (cells {cells})", cells=cells)

    if triangles.size:
        triangles = _orient_triangles(triangles)
        if not is_consistently_oriented(triangles):
            warnings.warn("dual mesh could not be consistently oriented "
                          "(non-orientable configuration)", RuntimeWarning,
                          stacklevel=2)
        if cell_normals is not None:
            cell_normals = np.asarray(cell_normals, dtype=np.float64)
            e1 = positions[triangles[:, 1]] - positions[triangles[:, 0]]
            e2 = positions[triangles[:, 2]] - positions[triangles[:, 0]]
            tri_n = np.cross(e1, e2)
            ref = (cell_normals[triangles[:, 0]]
                   + cell_normals[triangles[:, 1]]
                   + cell_normals[triangles[:, 2]])
            score = float(np.einsum("ij,ij->i", tri_n, ref).sum())
            if score < 0:
                triangles = triangles[:, [0, 2, 1]]
    return DualMesh(positions=positions, triangles=triangles,
                    spurious_removed=spurious)
