"""Reference partition oracles and dual-mesh quality metrics.

The label oracles are deliberately simple exhaustive nearest-seed scans
(wrapped Euclidean on periodic grids, great-circle on the sphere) so the
engine's converged labels can be checked against an independent metric.
Triangle quality is the classic incircle/circumcircle ratio (1 is best).
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import _kernels
from .errors import ShapeError


def euclidean_voronoi_labels(mesh, seed_positions):
    """Nearest seed per vertex under (wrapped) Euclidean distance.

    Ties go to the lowest seed index.  ``seed_positions`` is (n_s, 3).
    """
    seed_positions = np.atleast_2d(np.asarray(seed_positions,
                                              dtype=np.float64))
    d = _euclidean_distances(mesh, seed_positions)
    return np.argmin(d, axis=1).astype(np.int64)


def _euclidean_distances(mesh, seed_positions):
    n_v = mesh.n_vertices
    out = np.empty((n_v, seed_positions.shape[0]))
    for k, s in enumerate(seed_positions):
        out[:, k] = mesh.wrapped_distance(mesh.positions, s)
    return out


def sphere_voronoi_labels(mesh, seed_vertices):
    """Nearest seed per vertex by great-circle distance on the unit sphere."""
    norms = np.linalg.norm(mesh.positions, axis=1)
    if np.abs(norms - 1.0).max() > 1e-6:
        raise ShapeError("non-spherical input: vertices must lie on the "
                         "unit sphere")
    d = _sphere_distances(mesh, seed_vertices)
    return np.argmin(d, axis=1).astype(np.int64)


def _sphere_distances(mesh, seed_vertices):
    seeds = np.asarray(seed_vertices, dtype=np.int64)
    dots = mesh.positions @ mesh.positions[seeds].T
    return np.arccos(np.clip(dots, -1.0, 1.0))


def margin_mask(mesh, seeds, metric="euclidean", factor=2.0):
    """Vertices whose two nearest-seed distances differ enough to trust.

    Excludes the ambiguous band where the gap between the closest and the
    second-closest seed is below ``factor`` mean edge lengths.  ``seeds``
    is positions for the Euclidean metric and vertex indices for the
    sphere metric.
    """
    if metric == "euclidean":
        d = _euclidean_distances(mesh, np.atleast_2d(seeds))
    elif metric == "sphere":
        d = _sphere_distances(mesh, seeds)
    else:
        raise ShapeError(f"unknown metric: {metric!r}")
    if d.shape[1] < 2:
        return np.ones(mesh.n_vertices, dtype=bool)
    part = np.partition(d, 1, axis=1)
    gap = part[:, 1] - part[:, 0]
    return gap >= factor * mesh.mean_edge_length()


def label_agreement(labels_a, labels_b, mask=None):
    """Fraction of agreeing labels among mask-passing vertices."""
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    if labels_a.shape != labels_b.shape:
        raise ShapeError("label arrays must have equal length")
    if mask is None:
        mask = np.ones(labels_a.shape, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return 1.0
    return float((labels_a[mask] == labels_b[mask]).sum()) / n


# -- triangle quality -------------------------------------------------------


@dataclass
class QualityReport:
    """Aggregate dual-mesh quality (Lloyd-iteration checkpoints).

    ``mean_quality``/``min_quality`` use q = 2 r_in / r_circ (equilateral
    triangles score 1); angle statistics are in degrees and
    ``pct_below_30`` counts angles strictly below 30 degrees.  Distances
    are percentages of the reference mesh's bounding-box diagonal.
    """

    mean_quality: float = float("nan")
    min_quality: float = float("nan")
    mean_min_angle: float = float("nan")
    min_angle: float = float("nan")
    pct_below_30: float = float("nan")
    n_triangles: int = 0
    n_degenerate: int = 0
    hausdorff_mean_pct: float = None
    hausdorff_rms_pct: float = None
    cell_area_histogram: list = None

    def to_json(self, **extra):
        d = asdict(self)
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)


def triangle_qualities(positions, triangles):
    """Per-triangle (quality, min_angle_deg) with degenerate triangles NaN."""
    p = np.asarray(positions, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    a = np.linalg.norm(p[t[:, 1]] - p[t[:, 2]], axis=1)
    b = np.linalg.norm(p[t[:, 0]] - p[t[:, 2]], axis=1)
    c = np.linalg.norm(p[t[:, 0]] - p[t[:, 1]], axis=1)
    cr = np.cross(p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 0]])
    area = 0.5 * np.linalg.norm(cr, axis=1)
    abc = a * b * c
    s = 0.5 * (a + b + c)
    with np.errstate(divide="ignore", invalid="ignore"):
        # q = 2 r_in / r_circ = 8 area^2 / (s * a * b * c)
        q = 8.0 * area * area / (s * abc)
        cos_a = np.clip((b * b + c * c - a * a) / (2 * b * c), -1, 1)
        cos_b = np.clip((a * a + c * c - b * b) / (2 * a * c), -1, 1)
        cos_c = np.clip((a * a + b * b - c * c) / (2 * a * b), -1, 1)
    angles = np.degrees(np.arccos(np.stack([cos_a, cos_b, cos_c], axis=1)))
    degenerate = (area <= 0) | (abc <= 0)
    q[degenerate] = np.nan
    angles[degenerate] = np.nan
    return q, angles


def triangle_quality(dual):
    """Quality statistics of a dual mesh (degenerate triangles excluded)."""
    q, angles = triangle_qualities(dual.positions, dual.triangles)
    good = ~np.isnan(q)
    n_deg = int((~good).sum())
    q = q[good]
    angles = angles[good]
    if q.size == 0:
        return QualityReport(n_triangles=0, n_degenerate=n_deg)
    min_angles = angles.min(axis=1)
    return QualityReport(
        mean_quality=float(q.mean()),
        min_quality=float(q.min()),
        mean_min_angle=float(min_angles.mean()),
        min_angle=float(min_angles.min()),
        pct_below_30=float((angles < 30.0).sum()) / angles.size * 100.0,
        n_triangles=int(q.size),
        n_degenerate=n_deg,
    )


def cell_area_histogram(areas, bins=32):
    """Counts over 32 bins spanning [0, 3 * mean cell area]."""
    areas = np.asarray(areas, dtype=np.float64)
    hi = 3.0 * float(areas.mean()) if areas.size else 1.0
    counts, edges = np.histogram(areas, bins=bins, range=(0.0, hi))
    return counts, edges


# -- sampled surface distance -------------------------------------------------


def sample_surface(mesh, n_samples, rng):
    """Uniform area-weighted samples on the mesh surface."""
    if mesh.n_faces == 0:
        raise ShapeError("empty mesh")
    area = mesh.face_area
    probs = area / area.sum()
    faces = rng.choice(mesh.n_faces, size=n_samples, p=probs)
    r1 = np.sqrt(rng.random(n_samples))
    r2 = rng.random(n_samples)
    f = mesh.faces[faces]
    p0 = mesh.positions[f[:, 0]]
    if mesh.periodic:
        e1 = mesh.wrap_deltas(mesh.positions[f[:, 1]] - p0)
        e2 = mesh.wrap_deltas(mesh.positions[f[:, 2]] - p0)
    else:
        e1 = mesh.positions[f[:, 1]] - p0
        e2 = mesh.positions[f[:, 2]] - p0
    u = (1.0 - r1)[:, None]
    v = (r1 * r2)[:, None]
    return p0 + u * e1 + v * e2


def directed_surface_distance(mesh_a, mesh_b, samples=2000, rng_seed=0):
    """Distances from area-uniform samples on A to the surface of B."""
    if samples < 1:
        raise ShapeError("need at least one sample")
    rng = np.random.default_rng(rng_seed)
    pts = sample_surface(mesh_a, samples, rng)
    f = mesh_b.faces
    tri_a = np.ascontiguousarray(mesh_b.positions[f[:, 0]])
    tri_b = np.ascontiguousarray(mesh_b.positions[f[:, 1]])
    tri_c = np.ascontiguousarray(mesh_b.positions[f[:, 2]])
    out = np.empty(samples)
    _kernels.point_triangle_distances(np.ascontiguousarray(pts),
                                      tri_a, tri_b, tri_c, out)
    return out


def hausdorff(mesh_a, mesh_b, samples=2000, rng_seed=0):
    """Symmetric sampled surface distance as % of A's bbox diagonal.

    Mean and per-sample RMS are computed in both directions and the
    larger direction is reported (the 'max of directional means'
    symmetrization).
    """
    if samples < 1000:
        raise ShapeError("hausdorff needs at least 1000 samples")
    d_ab = directed_surface_distance(mesh_a, mesh_b, samples, rng_seed)
    d_ba = directed_surface_distance(mesh_b, mesh_a, samples, rng_seed + 1)
    diag = mesh_a.bbox_diagonal()
    if diag == 0:
        raise ShapeError("degenerate reference mesh")
    mean = max(float(d_ab.mean()), float(d_ba.mean()))
    rms = max(float(np.sqrt((d_ab ** 2).mean())),
              float(np.sqrt((d_ba ** 2).mean())))
    return 100.0 * mean / diag, 100.0 * rms / diag
