"""Independent dense reference implementations used as test oracles.

Everything here is deliberately naive (dense arrays, explicit loops) and
shares no code with the package kernels.
"""

import numpy as np


def dense_spgemm(a, b):
    return np.asarray(a) @ np.asarray(b)


def dense_skeleton(phi, lt):
    phi = np.asarray(phi)
    lt = np.asarray(lt)
    return (phi > 0) | ((phi == 0) & (lt > 0))


def dense_normalize_columns(a):
    a = np.asarray(a, dtype=float).copy()
    sums = a.sum(axis=0)
    for j in range(a.shape[1]):
        if sums[j] > 0:
            a[:, j] /= sums[j]
    return a


def coupling_matrices(n_rows, w, a, e, e_base):
    """Dense coupling matrices with the engine's base-layer conventions.

    Row/column 0 is the base layer: cells pay no pair penalty against it
    (w[cell, base] = 0) while the base is crowded out by cells
    (w[base, cell] = w); its band interaction is a signed driving force
    (e[cell, base] = +e_base, e[base, cell] = -e_base).
    """
    w_mat = np.full((n_rows, n_rows), w)
    a_mat = np.full((n_rows, n_rows), a)
    e_mat = np.full((n_rows, n_rows), e)
    np.fill_diagonal(w_mat, 0.0)
    np.fill_diagonal(a_mat, 0.0)
    np.fill_diagonal(e_mat, 0.0)
    w_mat[1:, 0] = 0.0
    w_mat[0, 1:] = w
    e_mat[1:, 0] = e_base
    e_mat[0, 1:] = -e_base
    return w_mat, a_mat, e_mat


def reference_step(phi, lap_dense, w_mat, a_mat, e_mat, mu, dt):
    """One literal field update on dense arrays (quadruple loop).

    Mirrors the published algorithm exactly: rows of interest per column,
    pairwise interaction sums over those rows, Euler update with
    clamping, then column normalization by the sum of nonzeros.  All
    updates read the pre-step field (the parallel formulation).
    """
    phi = np.asarray(phi, dtype=float)
    n_rows, n_v = phi.shape
    lt = phi @ lap_dense.T
    out = phi.copy()
    for i in range(n_v):
        col_phi = phi[:, i]
        col_lt = lt[:, i]
        irows = np.flatnonzero((col_phi > 0)
                               | ((col_phi == 0) & (col_lt > 0)))
        ni = irows.size
        if ni == 0:
            continue
        for j in irows:
            d = 0.0
            for k in irows:
                s = 0.0
                for l in irows:
                    s += (0.5 * (a_mat[j, l] - a_mat[k, l]) * col_lt[l]
                          + (w_mat[j, l] - w_mat[k, l]) * col_phi[l])
                d += -(mu / ni) * (s - e_mat[j, k]
                                   * np.sqrt(col_phi[j] * col_phi[k]))
            v = col_phi[j] + d * dt
            if v > 1.0:
                v = 1.0
            elif v <= 0.0:
                v = 0.0
            out[j, i] = v
    return dense_normalize_columns(out)


def graph_laplacian_dense(neighbors, n_v):
    """Uniform Laplacian (diagonal -1, off-diagonal 1/deg) as dense array."""
    lap = np.zeros((n_v, n_v))
    for i, nbrs in enumerate(neighbors):
        lap[i, i] = -1.0
        for j in nbrs:
            lap[i, j] = 1.0 / len(nbrs)
    return lap


def brute_force_cell_faces(phi_dense, faces, cell_row):
    """Faces with at least one vertex carrying the given layer."""
    carried = phi_dense[cell_row] > 0
    return [f for f, tri in enumerate(faces) if carried[tri].any()]


def brute_force_vertex_adjacency(phi_dense, threshold):
    """O(n_r^2 n_v) pairwise shared-thresholded-vertex scan."""
    cells = phi_dense[1:] >= threshold
    n = cells.shape[0]
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            if i != j and np.any(cells[i] & cells[j]):
                adj[i, j] = True
    return adj


def segment_intersect_shapely(p, q):
    from shapely.geometry import LineString
    return LineString(p).intersects(LineString(q))


def ray_hits(point, direction, tri_pts, eps=1e-12):
    """All line-triangle intersection parameters t (both directions)."""
    p0, p1, p2 = (np.asarray(x, dtype=float) for x in tri_pts)
    e1, e2 = p1 - p0, p2 - p0
    h = np.cross(direction, e2)
    det = np.dot(e1, h)
    if abs(det) < 1e-14:
        return None
    s = np.asarray(point) - p0
    u = np.dot(s, h) / det
    q = np.cross(s, e1)
    v = np.dot(direction, q) / det
    t = np.dot(e2, q) / det
    if u >= -eps and v >= -eps and u + v <= 1 + eps:
        return t
    return None
