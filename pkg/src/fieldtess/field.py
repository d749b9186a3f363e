"""Layered-field evolution: initialization, Euler stepping, convergence.

The field is one sparse row per cell plus a base layer (row 0) holding
unclaimed territory, stacked as a (n_cells + 1) x n_vertices CSC matrix.
One step runs the pipeline

    Lt = Phi @ L^T  ->  interest skeleton  ->  expand  ->  update  ->
    normalize + compact

where the update applies the time derivative of the coupled-front model
with uniform couplings (pair penalty ``w``, gradient coupling ``a``, band
interaction ``e``, mobility ``mu``) collapsed into per-column aggregates,
then clamps to [0, 1].  Columns always sum to one after normalization
(partition of unity) and the nonzero pattern can only grow by one vertex
ring per step.
"""

import json
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import sparse
from .errors import DuplicateSeedError, NumericalBlowupError, ShapeError
from .sparse import SparseMat, Skeleton, SpgemmScratch, ensure_capacity
from . import _kernels

UNCLAIMED = -1

BASE_EXHAUSTION_PER_VERTEX = 1e-9


@dataclass
class CouplingParams:
    """Scalar couplings of the update rule (diagonal-zero convention).

    ``w`` penalizes overlap of distinct cells and ``a`` scales the
    field-Laplacian exchange (the default a/w ratio is 5).  ``e`` is the
    symmetric band interaction between two cell fronts; it must stay
    below roughly 3w or the mixed band invades the pure phases.

    The base layer is passive: cells pay no pair penalty against it, the
    base is crowded out by every cell present, and ``e_base`` acts as a
    signed driving force (cells gain the mass the base loses), which is
    what makes seeds consume unclaimed territory instead of dying by
    curvature.  ``mu`` is calibrated so that the paper's global time
    step of 5 stays in the smooth sub-ballistic regime where fronts
    propagate isotropically.
    """

    w: float = 0.2
    a: float = 1.0
    e: float = 0.3
    e_base: float = 0.2
    mu: float = 0.2
    dt: float = 5.0

    def validate(self):
        if min(self.w, self.a, self.mu, self.dt) <= 0:
            raise ShapeError("w, a, mu, dt must be positive")
        if self.e < 0 or self.e_base < 0:
            raise ShapeError("e, e_base must be non-negative")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass
class StepStats:
    """Per-step diagnostics; durations in seconds."""

    max_delta: float
    nnz_phi: int
    base_mass: float
    spgemm_time: float = 0.0
    skeleton_time: float = 0.0
    expand_time: float = 0.0
    update_time: float = 0.0
    normalize_time: float = 0.0
    realloc_count: int = 0
    converged: bool = False

    @property
    def total_time(self):
        return (self.spgemm_time + self.skeleton_time + self.expand_time
                + self.update_time + self.normalize_time)


class LayeredField:
    """The sparse multi-layer field: base layer row 0, cells rows 1..n."""

    def __init__(self, phi, seed_vertices, step_count=0):
        self.phi = phi
        self.seed_vertices = np.asarray(seed_vertices, dtype=np.int64)
        self.step_count = int(step_count)

    @property
    def n_cells(self):
        return self.phi.n_rows - 1

    @property
    def n_vertices(self):
        return self.phi.n_cols

    def copy(self):
        return LayeredField(self.phi.copy(), self.seed_vertices.copy(),
                            self.step_count)

    def base_mass(self):
        nnz = self.phi.nnz
        mask = self.phi.row_idx[:nnz] == 0
        return float(self.phi.values[:nnz][mask].sum())

    def column_sums(self):
        sums = np.zeros(self.n_vertices)
        np.add.at(sums, self.phi.entry_columns(),
                  self.phi.values[:self.phi.nnz])
        return sums

    def cell_row(self, cell):
        """Row index in ``phi`` for 0-based cell id ``cell``."""
        if not 0 <= cell < self.n_cells:
            raise ShapeError(f"cell {cell} out of range")
        return cell + 1

    def __repr__(self):
        return (f"LayeredField({self.n_cells} cells, {self.n_vertices} "
                f"vertices, nnz={self.phi.nnz}, steps={self.step_count})")


def init_field(mesh, seeds):
    """Seed the field: each seed claims itself plus its one-ring.

    The base layer is 1 on unclaimed vertices and 0 on claimed ones;
    vertices claimed by several seeds are split equally so every column
    sums to one.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.size != np.unique(seeds).size:
        raise DuplicateSeedError("duplicate-seed: seed list has repeats")
    if seeds.size and (seeds.min() < 0 or seeds.max() >= mesh.n_vertices):
        raise ShapeError("seed vertex index out of range")
    n_r = seeds.size
    n_v = mesh.n_vertices
    rows, cols = [], []
    for k, s in enumerate(seeds):
        claimed = np.concatenate([[s], mesh.neighbors(s)])
        rows.append(np.full(claimed.size, k + 1, dtype=np.int64))
        cols.append(claimed.astype(np.int64))
    c_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    c_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    claim_count = np.bincount(c_cols, minlength=n_v)
    c_vals = 1.0 / claim_count[c_cols]
    free = np.flatnonzero(claim_count == 0)
    phi = SparseMat.from_triplets(
        n_r + 1, n_v,
        np.concatenate([c_rows, np.zeros(free.size, dtype=np.int64)]),
        np.concatenate([c_cols, free]),
        np.concatenate([c_vals, np.ones(free.size)]))
    return LayeredField(phi, seeds)


class StepWorkspace:
    """Reusable buffers for the step pipeline.

    The interest skeleton and the field-Laplacian product are preallocated
    once and enlarged by 20% on overflow; reallocations are counted so the
    timing harness can correlate step-time spikes with memory growth.
    """

    def __init__(self):
        self.scratch = SpgemmScratch()
        self.lt = None
        self.skel = None
        self.phi_hat = None
        self.phi_old = None
        self.lt_hat = None
        self.phi_out = None
        self.deltas = None
        self.sums = None
        self.counts = None
        self.base_mass_col = None
        self.nan_col = None

def _grow_values(arr, needed):
    if arr is None or arr.size < needed:
        size = needed if arr is None else max(needed, int(arr.size * 1.2) + 1)
        return np.empty(size), True
    return arr, False


def step(field, lap, params, workspace=None):
    """One explicit Euler step; returns a new field and its statistics.

    When a shared :class:`StepWorkspace` is passed, the input field's
    storage is recycled as a later output buffer: every field except the
    most recent becomes invalid.  Without a workspace each call is fully
    independent.
    """
    params.validate()
    ws = workspace if workspace is not None else StepWorkspace()
    phi = field.phi
    n_v = phi.n_cols
    if lap.mat.n_rows != n_v:
        raise ShapeError("Laplacian size does not match field")
    reallocs = 0
    if ws.deltas is None or ws.deltas.size < n_v:
        ws.deltas = np.empty(n_v)
        ws.sums = np.empty(n_v)
        ws.counts = np.empty(n_v, dtype=np.int64)
        ws.base_mass_col = np.empty(n_v)
        ws.nan_col = np.zeros(n_v, dtype=np.int64)

    t0 = time.perf_counter()
    if ws.lt is None:
        ws.lt = SparseMat.empty(phi.n_rows, n_v)
    r0 = ws.lt.realloc_count + ws.scratch.realloc_count
    ws.lt = sparse.spgemm(phi, lap.mat_t, out=ws.lt, scratch=ws.scratch)
    reallocs += ws.lt.realloc_count + ws.scratch.realloc_count - r0
    t1 = time.perf_counter()

    r0 = 0 if ws.skel is None else ws.skel.realloc_count
    ws.skel = sparse.build_skeleton(phi, ws.lt, out=ws.skel)
    reallocs += ws.skel.realloc_count - r0
    nnz_s = ws.skel.nnz
    t2 = time.perf_counter()

    ws.phi_hat, g1 = _grow_values(ws.phi_hat, nnz_s)
    ws.lt_hat, g2 = _grow_values(ws.lt_hat, nnz_s)
    ws.phi_old, g3 = _grow_values(ws.phi_old, nnz_s)
    reallocs += int(g1) + int(g2) + int(g3)
    sparse.expand_to_skeleton(phi, ws.skel, out_values=ws.phi_hat)
    sparse.expand_to_skeleton(ws.lt, ws.skel, out_values=ws.lt_hat)
    ws.phi_old[:nnz_s] = ws.phi_hat[:nnz_s]
    t3 = time.perf_counter()

    ws.nan_col[:n_v] = 0
    _kernels.update_kernel(ws.skel.col_ptr, ws.skel.row_idx,
                           ws.phi_hat, ws.lt_hat,
                           params.w, params.a, params.e, params.e_base,
                           params.mu, params.dt, ws.deltas, ws.nan_col)
    bad = np.flatnonzero(ws.nan_col[:n_v])
    if bad.size:
        raise NumericalBlowupError(bad[0], field.step_count + 1)
    t4 = time.perf_counter()

    _kernels.column_sums_counts(ws.skel.col_ptr, ws.phi_hat,
                                ws.sums, ws.counts)
    out_colptr = np.zeros(n_v + 1, dtype=np.int64)
    np.cumsum(ws.counts[:n_v], out=out_colptr[1:])
    nnz_out = int(out_colptr[-1])
    out_buf = ws.phi_out
    if out_buf is None or out_buf.values is phi.values:
        out_buf = SparseMat.empty(phi.n_rows, n_v, nnz_out)
    r0 = out_buf.realloc_count
    ensure_capacity(out_buf, nnz_out)
    reallocs += out_buf.realloc_count - r0
    new_phi = SparseMat(phi.n_rows, n_v, out_colptr.astype(sparse.INDEX),
                        out_buf.row_idx, out_buf.values, check=False)
    _kernels.normalize_compact(ws.skel.col_ptr, ws.skel.row_idx,
                               ws.phi_hat, ws.phi_old, ws.sums,
                               new_phi.col_ptr, new_phi.row_idx,
                               new_phi.values, ws.base_mass_col, ws.deltas)
    base_mass = float(ws.base_mass_col[:n_v].sum())
    max_delta = float(ws.deltas[:n_v].max()) if n_v else 0.0
    t5 = time.perf_counter()

    # the buffer just written belongs to the returned field from now on;
    # the input buffer becomes the next reusable output slot
    ws.phi_out = phi if workspace is not None else None

    new_field = LayeredField(new_phi, field.seed_vertices,
                             field.step_count + 1)
    stats = StepStats(max_delta=max_delta, nnz_phi=nnz_out,
                      base_mass=base_mass,
                      spgemm_time=t1 - t0, skeleton_time=t2 - t1,
                      expand_time=t3 - t2, update_time=t4 - t3,
                      normalize_time=t5 - t4,
                      realloc_count=reallocs)
    return new_field, stats


def evolve(field, lap, params, max_steps=1000, tol=1e-4, workspace=None,
           on_step=None):
    """Step until converged or ``max_steps``; returns the stats trace.

    Convergence: the largest per-entry change of a step falls below
    ``tol`` and the base layer is exhausted (total mass below
    1e-9 per vertex).  Non-convergence is flagged on the last stats
    record, not raised.

    The caller's input field stays valid; intermediate fields recycle two
    alternating buffers, so only the returned field (and copies) may be
    used afterwards.
    """
    if max_steps < 1:
        raise ShapeError("max_steps must be >= 1")
    ws = workspace if workspace is not None else StepWorkspace()
    base_threshold = BASE_EXHAUSTION_PER_VERTEX * field.n_vertices
    trace = []
    current = field
    first_input = field.phi
    for _ in range(max_steps):
        current, stats = step(current, lap, params, workspace=ws)
        if ws.phi_out is first_input:
            # never recycle the caller's own field storage
            ws.phi_out = None
        if on_step is not None:
            on_step(current, stats)
        stats.converged = (stats.max_delta < tol
                           and stats.base_mass < base_threshold)
        trace.append(stats)
        if stats.converged:
            break
    return current, trace


def sharp_labels(field):
    """Per-vertex argmax cell id; ties take the lowest cell id.

    Vertices where the base layer strictly dominates every cell get
    ``UNCLAIMED`` (-1).  Cell ids are 0-based (row index minus one).
    """
    phi = field.phi
    nnz = phi.nnz
    rows = phi.row_idx[:nnz].astype(np.int64)
    vals = phi.values[:nnz]
    cols = phi.entry_columns()
    n_v = phi.n_cols

    base_vals = np.zeros(n_v)
    is_base = rows == 0
    base_vals[cols[is_base]] = vals[is_base]

    cell_sel = ~is_base
    c_cols = cols[cell_sel]
    c_rows = rows[cell_sel]
    c_vals = vals[cell_sel]
    labels = np.full(n_v, UNCLAIMED, dtype=np.int64)
    best = np.zeros(n_v)
    if c_cols.size:
        order = np.lexsort((c_rows, -c_vals, c_cols))
        first = np.ones(order.size, dtype=bool)
        sorted_cols = c_cols[order]
        first[1:] = sorted_cols[1:] != sorted_cols[:-1]
        pick = order[first]
        labels[c_cols[pick]] = c_rows[pick] - 1
        best[c_cols[pick]] = c_vals[pick]
    labels[base_vals > best] = UNCLAIMED
    return labels


def band_vertex_fraction(field):
    """Fraction of vertices carrying two or more cell layers."""
    phi = field.phi
    nnz = phi.nnz
    rows = phi.row_idx[:nnz]
    cols = phi.entry_columns()[rows != 0]
    counts = np.bincount(cols, minlength=phi.n_cols)
    return float((counts >= 2).sum()) / max(phi.n_cols, 1)


# -- snapshots --------------------------------------------------------------


def save_field(field, params, path, extra_header=None):
    """Snapshot: one JSON header line, then the triplet body."""
    header = {
        "seeds": [int(s) for s in field.seed_vertices],
        "step_count": field.step_count,
        "params": params.to_dict(),
    }
    if extra_header:
        header.update(extra_header)
    phi = field.phi
    cols = phi.entry_columns()
    with open(path, "w") as fh:
        fh.write(f"#FIELD {json.dumps(header, sort_keys=True)}\n")
        fh.write(f"{phi.n_rows} {phi.n_cols} {phi.nnz}\n")
        for k in range(phi.nnz):
            fh.write(f"{phi.row_idx[k]} {cols[k]} {float(phi.values[k])!r}\n")


def load_field(path):
    """Read a snapshot written by :func:`save_field`.

    Returns ``(field, params)``.
    """
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#FIELD "):
        raise ShapeError(f"{path}: not a field snapshot")
    header = json.loads(first[len("#FIELD "):])
    phi = sparse.read_triplets(path)
    params = CouplingParams.from_dict(header["params"])
    fld = LayeredField(phi, np.asarray(header["seeds"], dtype=np.int64),
                       header.get("step_count", 0))
    return fld, params
