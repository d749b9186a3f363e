"""Triangle meshes, synthetic generators, and the mesh Laplacian.

A :class:`TriMesh` is a plain indexed triangle mesh (no half-edges) with
precomputed face areas/normals/barycenters, lumped vertex areas, the
binary face-vertex incidence matrix, and sorted one-ring adjacency.
Periodic grids carry their lattice vectors so geometric quantities are
computed on unwrapped coordinates.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (IsolatedVertexError, MeshFormatError,
                     NonTriangularFaceError, ShapeError)
from .sparse import SparseMat, transpose


class TriMesh:
    """Indexed triangle mesh with derived quantities.

    Parameters
    ----------
    positions : (n_v, 3) float array
    faces : (n_f, 3) int array
        Vertex indices, consistently oriented.
    period_vectors : (2, 3) float array, optional
        Lattice vectors of a periodic (torus-topology) planar mesh.
        When given, per-face geometry uses unwrapped coordinates.
    """

    def __init__(self, positions, faces, period_vectors=None):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int32)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ShapeError("positions must be (n_v, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise NonTriangularFaceError("faces must be (n_f, 3)")
        n_v = self.positions.shape[0]
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= n_v):
            raise MeshFormatError("face index out of range")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2])
                  | (f[:, 0] == f[:, 2])):
            raise MeshFormatError("degenerate face (repeated vertex index)")
        self.period_vectors = (None if period_vectors is None else
                               np.asarray(period_vectors, dtype=np.float64))
        self._build_derived()

    # -- derived data ---------------------------------------------------

    def _build_derived(self):
        p, f = self.positions, self.faces
        e1 = self.wrap_deltas(p[f[:, 1]] - p[f[:, 0]])
        e2 = self.wrap_deltas(p[f[:, 2]] - p[f[:, 0]])
        cr = np.cross(e1, e2)
        norm = np.linalg.norm(cr, axis=1)
        self.face_area = 0.5 * norm
        with np.errstate(invalid="ignore", divide="ignore"):
            self.face_normal = np.where(norm[:, None] > 0,
                                        cr / np.where(norm == 0, 1,
                                                      norm)[:, None], 0.0)
        self.face_barycenter = p[f[:, 0]] + (e1 + e2) / 3.0

        n_v = p.shape[0]
        self.vertex_area = np.zeros(n_v)
        np.add.at(self.vertex_area, f.ravel(),
                  np.repeat(self.face_area / 3.0, 3))

        # binary face-vertex incidence, 3 unit entries per column
        n_f = f.shape[0]
        sorted_faces = np.sort(f, axis=1)
        self.incidence = SparseMat(
            n_v, n_f,
            np.arange(0, 3 * n_f + 1, 3, dtype=np.int32),
            sorted_faces.ravel().astype(np.int32),
            np.ones(3 * n_f), check=False)
        self.incidence_t = transpose(self.incidence)

        # undirected edges and sorted one-ring adjacency
        raw = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        raw.sort(axis=1)
        self.edges, edge_counts = np.unique(raw, axis=0, return_counts=True)
        if np.any(edge_counts > 2):
            warnings.warn(f"{int((edge_counts > 2).sum())} non-manifold "
                          "edge(s) (more than 2 incident faces); neighbors "
                          "are treated uniformly", RuntimeWarning,
                          stacklevel=3)
        both = np.concatenate([self.edges, self.edges[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        degree = np.bincount(both[:, 0], minlength=n_v)
        self.neighbor_ptr = np.zeros(n_v + 1, dtype=np.int64)
        np.cumsum(degree, out=self.neighbor_ptr[1:])
        self.neighbor_idx = both[:, 1].astype(np.int32)
        self.degree = degree

    # -- simple queries ---------------------------------------------------

    @property
    def n_vertices(self):
        return self.positions.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @property
    def periodic(self):
        return self.period_vectors is not None

    def neighbors(self, v):
        """Sorted one-ring vertex indices of ``v``."""
        return self.neighbor_idx[self.neighbor_ptr[v]:self.neighbor_ptr[v + 1]]

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    def mean_edge_length(self):
        d = self.wrap_deltas(self.positions[self.edges[:, 1]]
                             - self.positions[self.edges[:, 0]])
        return float(np.linalg.norm(d, axis=1).mean())

    def bbox_diagonal(self):
        ext = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(np.linalg.norm(ext))

    # -- periodic wrapping -------------------------------------------------

    def wrap_deltas(self, deltas):
        """Shortest representatives of difference vectors under the lattice."""
        if self.period_vectors is None:
            return deltas
        deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
        basis = self.period_vectors[:, :2].T          # 2x2, lattice in xy
        coef = np.linalg.solve(basis, deltas[:, :2].T).T
        base = np.floor(coef + 0.5)
        best = None
        best_d = None
        for di in (-1.0, 0.0, 1.0):
            for dj in (-1.0, 0.0, 1.0):
                shift = (base + [di, dj]) @ self.period_vectors
                cand = deltas - shift
                d = np.einsum("ij,ij->i", cand, cand)
                if best is None:
                    best, best_d = cand, d
                else:
                    take = d < best_d
                    best[take] = cand[take]
                    best_d[take] = d[take]
        return best

    def wrapped_distance(self, points, ref):
        """Euclidean distance respecting periodicity, broadcasting over rows."""
        d = self.wrap_deltas(np.atleast_2d(points) - np.asarray(ref))
        return np.linalg.norm(d, axis=1)


# -- generators -----------------------------------------------------------


def gen_periodic_grid(nx, ny, spacing=1.0):
    """Equilateral triangulated grid with torus topology.

    Lattice basis (spacing, 0) and (spacing/2, spacing*sqrt(3)/2); every
    vertex has degree 6 and V - E + F = 0.  All faces are congruent
    equilateral triangles (computed on unwrapped coordinates), which makes
    front propagation isotropic under the uniform Laplacian.
    """
    if nx < 3 or ny < 3:
        raise MeshFormatError("size too small: periodic grid needs nx, ny >= 3")
    s = float(spacing)
    a1 = np.array([s, 0.0, 0.0])
    a2 = np.array([0.5 * s, 0.5 * np.sqrt(3.0) * s, 0.0])
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    positions = ii.reshape(-1, 1) * a1 + jj.reshape(-1, 1) * a2

    def vid(i, j):
        return (j % ny) * nx + (i % nx)

    faces = []
    for j in range(ny):
        for i in range(nx):
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v01 = vid(i, j + 1)
            v11 = vid(i + 1, j + 1)
            # split along the short diagonal so every face is equilateral
            faces.append((v00, v10, v01))
            faces.append((v10, v11, v01))
    period = np.stack([nx * a1, ny * a2])
    return TriMesh(positions, np.asarray(faces, dtype=np.int32),
                   period_vectors=period)


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
], dtype=np.float64)
_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def gen_icosphere(subdiv):
    """Unit icosphere by midpoint subdivision of the icosahedron.

    ``subdiv`` between 0 and 7; vertices are normalized onto the unit
    sphere after every subdivision pass.
    """
    if not 0 <= subdiv <= 7:
        raise MeshFormatError("subdiv must be in [0, 7]")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = _ICO_FACES.tolist()
    for _ in range(subdiv):
        cache = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for (i, j, k) in faces:
            a = midpoint(i, j)
            b = midpoint(j, k)
            c = midpoint(k, i)
            new_faces += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = new_faces
    positions = np.asarray(verts)
    positions /= np.linalg.norm(positions, axis=1)[:, None]
    return TriMesh(positions, np.asarray(faces, dtype=np.int32))


# -- file input/output ------------------------------------------------------


def load_mesh(path, fmt=None):
    """Load an OBJ or OFF triangle mesh.

    ``fmt`` defaults to the file extension.  OBJ reads only ``v``/``f``
    records (texture/normal references are stripped); OFF reads the ASCII
    variant.  Non-triangle faces are rejected.
    """
    if fmt is None:
        fmt = str(path).rsplit(".", 1)[-1].lower()
    if fmt == "obj":
        return _load_obj(path)
    if fmt == "off":
        return _load_off(path)
    raise MeshFormatError(f"unknown mesh format: {fmt!r}")


def _load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif tag == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    if len(idx) != 3:
                        raise NonTriangularFaceError(
                            f"non-triangular: line {lineno} has "
                            f"{len(idx)} vertices")
                    if any(i <= 0 for i in idx):
                        raise MeshFormatError(
                            f"line {lineno}: nonpositive OBJ index")
                    faces.append([i - 1 for i in idx])
            except (ValueError, IndexError) as exc:
                raise MeshFormatError(f"line {lineno}: {exc}") from exc
    if not verts:
        raise MeshFormatError("no vertices found")
    return TriMesh(np.asarray(verts), np.asarray(faces, dtype=np.int32)
                   if faces else np.zeros((0, 3), dtype=np.int32))


def _load_off(path):
    tokens = []
    line_of_token = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            for tok in line.split():
                tokens.append(tok)
                line_of_token.append(lineno)
    if not tokens or tokens[0].upper() != "OFF":
        raise MeshFormatError("line 1: missing OFF header")
    pos = 1

    def take(n, kind):
        nonlocal pos
        if pos + n > len(tokens):
            raise MeshFormatError(
                f"line {line_of_token[-1]}: truncated OFF file")
        out = []
        for t in range(n):
            tok = tokens[pos]
            try:
                out.append(kind(tok))
            except ValueError as exc:
                raise MeshFormatError(
                    f"line {line_of_token[pos]}: bad token {tok!r}") from exc
            pos += 1
        return out

    n_v, n_f, _ = take(3, int)
    verts = [take(3, float) for _ in range(n_v)]
    faces = []
    for _ in range(n_f):
        k = take(1, int)[0]
        if k != 3:
            raise NonTriangularFaceError(
                f"non-triangular: line {line_of_token[pos - 1]} "
                f"has {k} vertices")
        faces.append(take(3, int))
    return TriMesh(np.asarray(verts), np.asarray(faces, dtype=np.int32))


def write_obj(mesh_or_positions, path_or_faces, path=None, comments=()):
    """Write vertices/faces as ASCII OBJ (1-based indices).

    Accepts either ``write_obj(mesh, path)`` or
    ``write_obj(positions, faces, path)``.
    """
    if path is None:
        mesh, path = mesh_or_positions, path_or_faces
        positions, faces = mesh.positions, mesh.faces
    else:
        positions, faces = mesh_or_positions, path_or_faces
    with open(path, "w") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        for v in positions:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# -- Laplacian ----------------------------------------------------------------


@dataclass
class Laplacian:
    """Mesh Laplacian with its transpose precomputed once.

    Row sums vanish and the diagonal is normalized to -1 so the stable
    Euler step range does not depend on the mesh.  Off-diagonals are
    non-negative in both schemes, which keeps the sign-based front
    detection of the field engine exact.
    """

    mat: SparseMat
    mat_t: SparseMat
    scheme: str


def build_laplacian(mesh, scheme="uniform"):
    """Assemble the n_v x n_v Laplacian ``L`` and its transpose.

    ``uniform``: off-diagonal 1/deg(i) per neighbor, diagonal -1.
    ``cotan-clamped``: cotangent weights clamped at zero, rows rescaled
    to sum zero with diagonal -1.  Rows whose clamped weights all vanish
    fall back to uniform weights on their edges (applied symmetrically).
    """
    n_v = mesh.n_vertices
    degree = mesh.degree
    if np.any(degree == 0):
        v = int(np.flatnonzero(degree == 0)[0])
        raise IsolatedVertexError(f"isolated-vertex: vertex {v} has no edges")
    if scheme == "uniform":
        edges = mesh.edges
        w_i = 1.0 / degree[edges[:, 0]]
        w_j = 1.0 / degree[edges[:, 1]]
        rows = np.concatenate([edges[:, 0], edges[:, 1],
                               np.arange(n_v)])
        cols = np.concatenate([edges[:, 1], edges[:, 0],
                               np.arange(n_v)])
        vals = np.concatenate([w_i, w_j, -np.ones(n_v)])
    elif scheme == "cotan-clamped":
        vals_by_edge = _cotan_edge_weights(mesh)
        edges = mesh.edges
        keep = vals_by_edge > 0
        row_sum = np.zeros(n_v)
        np.add.at(row_sum, edges[keep, 0], vals_by_edge[keep])
        np.add.at(row_sum, edges[keep, 1], vals_by_edge[keep])
        dead = np.flatnonzero(row_sum == 0)
        if dead.size:
            # give every edge of a zero-weight vertex unit weight (both
            # endpoints, to keep the pattern symmetric) and re-sum
            dead_set = np.zeros(n_v, dtype=bool)
            dead_set[dead] = True
            bump = dead_set[edges[:, 0]] | dead_set[edges[:, 1]]
            vals_by_edge = np.where(bump, np.maximum(vals_by_edge, 1.0),
                                    vals_by_edge)
            keep = vals_by_edge > 0
            row_sum = np.zeros(n_v)
            np.add.at(row_sum, edges[keep, 0], vals_by_edge[keep])
            np.add.at(row_sum, edges[keep, 1], vals_by_edge[keep])
        e = edges[keep]
        wv = vals_by_edge[keep]
        rows = np.concatenate([e[:, 0], e[:, 1], np.arange(n_v)])
        cols = np.concatenate([e[:, 1], e[:, 0], np.arange(n_v)])
        vals = np.concatenate([wv / row_sum[e[:, 0]],
                               wv / row_sum[e[:, 1]],
                               -np.ones(n_v)])
    else:
        raise ShapeError(f"unknown Laplacian scheme: {scheme!r}")
    mat = SparseMat.from_triplets(n_v, n_v, rows, cols, vals)
    return Laplacian(mat=mat, mat_t=transpose(mat), scheme=scheme)


def _cotan_edge_weights(mesh):
    """Clamped cotangent weight per undirected mesh edge."""
    p, f = mesh.positions, mesh.faces
    edge_id = {tuple(e): k for k, e in enumerate(map(tuple, mesh.edges))}
    weights = np.zeros(mesh.n_edges)
    for face in f:
        pts = p[face]
        if mesh.periodic:
            pts = pts[0] + np.vstack([np.zeros(3),
                                      mesh.wrap_deltas(pts[1:] - pts[0])])
        for apex in range(3):
            i, j = face[(apex + 1) % 3], face[(apex + 2) % 3]
            u = pts[(apex + 1) % 3] - pts[apex]
            v = pts[(apex + 2) % 3] - pts[apex]
            cr = np.linalg.norm(np.cross(u, v))
            if cr <= 0:
                continue
            cot = float(np.dot(u, v)) / cr
            key = (i, j) if i < j else (j, i)
            weights[edge_id[key]] += 0.5 * cot
    return np.maximum(weights, 0.0)
