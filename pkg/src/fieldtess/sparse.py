"""Compressed-sparse-column matrices and the small kernel set used everywhere.

The whole engine runs on five operations: sparse product, transpose,
interest-skeleton construction, expansion of a matrix onto a skeleton
pattern, and column normalization.  Matrices are kept canonical at every
public boundary: sorted strictly-increasing rows per column, no duplicate
positions, and no explicit zeros except inside skeleton-expanded matrices.

Buffers are capacity-managed: ``ensure_capacity`` grows the entry storage
by at least 20% so repeated growth costs O(log) reallocations, and each
reallocation is counted for the timing harness.
"""

import math
import warnings

import numpy as np
from numba import get_num_threads

from . import _kernels
from .errors import NegativeFieldError, PatternViolationError, ShapeError

INDEX = np.int32
GROWTH = 1.2


class SparseMat:
    """CSC matrix: 32-bit indices, 64-bit values, explicit capacity.

    Parameters
    ----------
    n_rows, n_cols : int
        Matrix shape.
    col_ptr : (n_cols+1,) int32
        Offsets into ``row_idx``/``values``; ``col_ptr[-1]`` is nnz.
    row_idx : int32
        Row index per entry, strictly increasing within each column.
        May be longer than nnz (spare capacity).
    values : float64
        Entry values, same length as ``row_idx``.
    """

    __slots__ = ("n_rows", "n_cols", "col_ptr", "row_idx", "values",
                 "realloc_count")

    def __init__(self, n_rows, n_cols, col_ptr, row_idx, values, check=True):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.col_ptr = np.ascontiguousarray(col_ptr, dtype=INDEX)
        self.row_idx = np.ascontiguousarray(row_idx, dtype=INDEX)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.realloc_count = 0
        if self.row_idx.size != self.values.size:
            raise ShapeError("row_idx and values must have equal length")
        if check:
            self.validate()

    # -- construction -------------------------------------------------

    @classmethod
    def empty(cls, n_rows, n_cols, capacity=0):
        return cls(n_rows, n_cols,
                   np.zeros(n_cols + 1, dtype=INDEX),
                   np.empty(capacity, dtype=INDEX),
                   np.empty(capacity, dtype=np.float64), check=False)

    @classmethod
    def identity(cls, n):
        return cls(n, n, np.arange(n + 1, dtype=INDEX),
                   np.arange(n, dtype=INDEX), np.ones(n), check=False)

    @classmethod
    def from_triplets(cls, n_rows, n_cols, rows, cols, vals, sum_dups=True):
        """Build a canonical matrix from (row, col, value) triplets.

        Duplicate positions are summed.  Explicit zeros present in the
        input are kept (pattern-preserving), zeros arising from duplicate
        cancellation are kept as well.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.size == cols.size == vals.size):
            raise ShapeError("triplet arrays must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows
                          or cols.min() < 0 or cols.max() >= n_cols):
            raise ShapeError("triplet index out of range")
        order = np.lexsort((rows, cols))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            keys = cols * np.int64(n_rows) + rows
            first = np.ones(rows.size, dtype=bool)
            first[1:] = keys[1:] != keys[:-1]
            if not first.all():
                if not sum_dups:
                    raise ShapeError("duplicate triplet position")
                starts = np.flatnonzero(first)
                vals = np.add.reduceat(vals, starts)
                rows, cols = rows[starts], cols[starts]
        col_ptr = np.zeros(n_cols + 1, dtype=np.int64)
        np.add.at(col_ptr, cols + 1, 1)
        np.cumsum(col_ptr, out=col_ptr)
        return cls(n_rows, n_cols, col_ptr.astype(INDEX),
                   rows.astype(INDEX), vals, check=False)

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_triplets(dense.shape[0], dense.shape[1],
                                 rows, cols, dense[rows, cols])

    # -- views and helpers --------------------------------------------

    @property
    def nnz(self):
        return int(self.col_ptr[self.n_cols])

    @property
    def capacity(self):
        return self.row_idx.size

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def column(self, j):
        """(rows, values) views of column ``j``."""
        p0, p1 = self.col_ptr[j], self.col_ptr[j + 1]
        return self.row_idx[p0:p1], self.values[p0:p1]

    def get(self, i, j):
        """Value at (i, j); 0.0 when the position is not stored."""
        rows, vals = self.column(j)
        k = np.searchsorted(rows, i)
        if k < rows.size and rows[k] == i:
            return float(vals[k])
        return 0.0

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols))
        nnz = self.nnz
        cols = np.repeat(np.arange(self.n_cols),
                         np.diff(self.col_ptr.astype(np.int64)))
        out[self.row_idx[:nnz], cols] = self.values[:nnz]
        return out

    def entry_columns(self):
        """Column index of every stored entry (length nnz)."""
        return np.repeat(np.arange(self.n_cols, dtype=np.int64),
                         np.diff(self.col_ptr.astype(np.int64)))

    def copy(self):
        nnz = self.nnz
        return SparseMat(self.n_rows, self.n_cols, self.col_ptr.copy(),
                         self.row_idx[:nnz].copy(), self.values[:nnz].copy(),
                         check=False)

    def validate(self):
        cp = self.col_ptr
        if cp.size != self.n_cols + 1 or (cp.size and cp[0] != 0):
            raise ShapeError("bad col_ptr header")
        if np.any(np.diff(cp) < 0):
            raise ShapeError("col_ptr must be non-decreasing")
        nnz = self.nnz
        if nnz > self.capacity:
            raise ShapeError("nnz exceeds capacity")
        ri = self.row_idx[:nnz]
        if nnz and (ri.min() < 0 or ri.max() >= self.n_rows):
            raise ShapeError("row index out of range")
        for j in range(self.n_cols):
            col = ri[cp[j]:cp[j + 1]]
            if col.size > 1 and np.any(np.diff(col) <= 0):
                raise ShapeError(f"rows not strictly increasing in column {j}")

    def __repr__(self):
        return (f"SparseMat({self.n_rows}x{self.n_cols}, nnz={self.nnz}, "
                f"capacity={self.capacity})")


class Skeleton:
    """Sparse pattern without values: the per-column rows of interest."""

    __slots__ = ("n_rows", "n_cols", "col_ptr", "row_idx", "realloc_count")

    def __init__(self, n_rows, n_cols, col_ptr, row_idx):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.col_ptr = np.ascontiguousarray(col_ptr, dtype=INDEX)
        self.row_idx = np.ascontiguousarray(row_idx, dtype=INDEX)
        self.realloc_count = 0

    @property
    def nnz(self):
        return int(self.col_ptr[self.n_cols])

    @property
    def capacity(self):
        return self.row_idx.size

    def column(self, j):
        return self.row_idx[self.col_ptr[j]:self.col_ptr[j + 1]]

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols), dtype=bool)
        cols = np.repeat(np.arange(self.n_cols),
                         np.diff(self.col_ptr.astype(np.int64)))
        out[self.row_idx[:self.nnz], cols] = True
        return out


def ensure_capacity(mat, needed):
    """Grow ``mat``'s entry storage to at least ``needed``.

    Growth jumps to at least 1.2x the previous capacity so a sequence of
    overflows costs logarithmically many reallocations; each reallocation
    increments ``mat.realloc_count``.
    """
    needed = int(needed)
    cap = mat.capacity
    if cap >= needed:
        return mat
    new_cap = max(needed, int(math.ceil(cap * GROWTH)))
    row_idx = np.empty(new_cap, dtype=INDEX)
    values = np.empty(new_cap, dtype=np.float64)
    nnz = mat.nnz
    row_idx[:nnz] = mat.row_idx[:nnz]
    values[:nnz] = mat.values[:nnz]
    mat.row_idx = row_idx
    mat.values = values
    mat.realloc_count += 1
    return mat


def _grow(arr, needed, dtype):
    if arr is None or arr.size < needed:
        size = needed if arr is None else max(needed,
                                              int(math.ceil(arr.size * GROWTH)))
        return np.empty(size, dtype=dtype), True
    return arr, False


class SpgemmScratch:
    """Per-worker dense accumulators reused across spgemm calls."""

    def __init__(self):
        self.n_rows = 0
        self.n_chunks = 0
        self.marker = None
        self.accum = None
        self.touched = None
        self.rows_pad = None
        self.vals_pad = None
        self.stamp = 0
        self.realloc_count = 0

    def prepare(self, n_rows, n_chunks):
        if (self.marker is None or self.n_rows < n_rows
                or self.n_chunks < n_chunks):
            self.n_rows = max(n_rows, self.n_rows)
            self.n_chunks = max(n_chunks, self.n_chunks)
            self.marker = np.full((self.n_chunks, self.n_rows), -1,
                                  dtype=np.int64)
            self.accum = np.empty((self.n_chunks, self.n_rows))
            self.touched = np.empty((self.n_chunks, self.n_rows), dtype=INDEX)
            self.stamp = 0

    def pad(self, needed):
        self.rows_pad, grew_r = _grow(self.rows_pad, needed, INDEX)
        self.vals_pad, grew_v = _grow(self.vals_pad, needed, np.float64)
        self.realloc_count += int(grew_r) + int(grew_v)


def _chunk_bounds(n_cols):
    n_chunks = max(1, min(get_num_threads(), n_cols)) if n_cols else 1
    return np.linspace(0, n_cols, n_chunks + 1).astype(np.int64)


def spgemm(a, b, out=None, scratch=None):
    """Sparse product ``C = A @ B`` in canonical CSC form.

    Accumulates per output column into a dense scratch vector that is
    reset sparsely (stamp trick), which matches the column-major access
    pattern of the field engine and parallelizes per column.

    Parameters
    ----------
    a, b : SparseMat
    out : SparseMat, optional
        Reusable output buffer; grown via :func:`ensure_capacity`.
    scratch : SpgemmScratch, optional
        Reusable accumulators (allocated fresh when omitted).
    """
    if a.n_cols != b.n_rows:
        raise ShapeError(
            f"shape mismatch: {a.shape} @ {b.shape}")
    n_rows, n_cols = a.n_rows, b.n_cols
    if scratch is None:
        scratch = SpgemmScratch()
    chunk_bounds = _chunk_bounds(n_cols)
    scratch.prepare(n_rows, chunk_bounds.size - 1)

    bounds = np.empty(n_cols, dtype=np.int64)
    _kernels.spgemm_bounds(b.col_ptr, b.row_idx, a.col_ptr, bounds)
    pad_ptr = np.zeros(n_cols + 1, dtype=np.int64)
    np.cumsum(bounds, out=pad_ptr[1:])
    scratch.pad(int(pad_ptr[-1]))

    counts = np.empty(n_cols, dtype=np.int64)
    _kernels.spgemm_numeric(a.col_ptr, a.row_idx, a.values,
                            b.col_ptr, b.row_idx, b.values,
                            pad_ptr, scratch.rows_pad, scratch.vals_pad,
                            counts, chunk_bounds, scratch.marker,
                            scratch.accum, scratch.touched, scratch.stamp)
    scratch.stamp += n_cols

    col_ptr = np.zeros(n_cols + 1, dtype=np.int64)
    np.cumsum(counts, out=col_ptr[1:])
    nnz = int(col_ptr[-1])
    if out is None:
        out = SparseMat.empty(n_rows, n_cols, nnz)
    else:
        if out.n_rows != n_rows or out.n_cols != n_cols:
            raise ShapeError("output buffer has wrong shape")
        ensure_capacity(out, nnz)
    out.col_ptr = col_ptr.astype(INDEX)
    _kernels.compact_padded(pad_ptr, counts, out.col_ptr,
                            scratch.rows_pad, scratch.vals_pad,
                            out.row_idx, out.values)
    return out


def transpose(a):
    """Exact transpose; output is canonical."""
    nnz = a.nnz
    t_colptr = np.zeros(a.n_rows + 1, dtype=INDEX)
    t_rowidx = np.empty(nnz, dtype=INDEX)
    t_vals = np.empty(nnz)
    _kernels.transpose_kernel(a.n_rows, a.col_ptr, a.row_idx, a.values,
                              t_colptr, t_rowidx, t_vals)
    return SparseMat(a.n_cols, a.n_rows, t_colptr, t_rowidx, t_vals,
                     check=False)


def build_skeleton(phi, lt, out=None):
    """Rows of interest per column: ``phi > 0`` or (``phi == 0`` and ``lt > 0``).

    Built with a prefix sum over per-column counts so the fill pass can
    run fully in parallel.
    """
    if phi.shape != lt.shape:
        raise ShapeError(
            f"shape mismatch: {phi.shape} vs {lt.shape}")
    n_cols = phi.n_cols
    counts = np.empty(n_cols, dtype=np.int64)
    _kernels.skeleton_count(phi.col_ptr, phi.row_idx, phi.values,
                            lt.col_ptr, lt.row_idx, lt.values, counts)
    col_ptr = np.zeros(n_cols + 1, dtype=np.int64)
    np.cumsum(counts, out=col_ptr[1:])
    nnz = int(col_ptr[-1])
    if out is None:
        out = Skeleton(phi.n_rows, n_cols, col_ptr.astype(INDEX),
                       np.empty(nnz, dtype=INDEX))
    else:
        out.col_ptr = col_ptr.astype(INDEX)
        out.row_idx, grew = _grow(out.row_idx, nnz, INDEX)
        out.realloc_count += int(grew)
    _kernels.skeleton_fill(phi.col_ptr, phi.row_idx, phi.values,
                           lt.col_ptr, lt.row_idx, lt.values,
                           out.col_ptr, out.row_idx)
    return out


def expand_to_skeleton(a, skel, out_values=None):
    """Re-express ``a`` on the skeleton pattern, explicit zeros elsewhere.

    Every nonzero of ``a`` must lie inside the skeleton; a violation
    raises :class:`PatternViolationError`.
    """
    if (a.n_rows, a.n_cols) != (skel.n_rows, skel.n_cols):
        raise ShapeError(
            f"shape mismatch: {a.shape} vs ({skel.n_rows}, {skel.n_cols})")
    nnz = skel.nnz
    if out_values is None or out_values.size < nnz:
        out_values = np.empty(nnz)
    bad_col = np.full(skel.n_cols, -1, dtype=np.int64)
    _kernels.expand_kernel(a.col_ptr, a.row_idx, a.values,
                           skel.col_ptr, skel.row_idx, out_values, bad_col)
    offenders = np.flatnonzero(bad_col >= 0)
    if offenders.size:
        j = int(offenders[0])
        raise PatternViolationError(
            f"pattern-violation: nonzero at ({bad_col[j]}, {j}) "
            "outside the skeleton")
    return SparseMat(skel.n_rows, skel.n_cols, skel.col_ptr,
                     skel.row_idx[:nnz], out_values[:nnz], check=False)


def normalize_columns(a):
    """Scale each positive-sum column to unit sum.

    Requires non-negative entries.  Zero-sum columns are left untouched
    and reported through a warning; the pattern is preserved (explicit
    zeros are not dropped here).
    """
    nnz = a.nnz
    vals = a.values[:nnz]
    if nnz and vals.min() < 0:
        raise NegativeFieldError("negative-field: negative entry in input")
    sums = np.zeros(a.n_cols)
    cols = a.entry_columns()
    np.add.at(sums, cols, vals)
    zero_cols = np.flatnonzero((sums == 0)
                               & (np.diff(a.col_ptr.astype(np.int64)) > 0))
    if zero_cols.size:
        warnings.warn(f"normalize_columns: {zero_cols.size} zero-sum "
                      f"column(s) left untouched (first: {zero_cols[0]})",
                      RuntimeWarning, stacklevel=2)
    scale = np.where(sums > 0, 1.0 / np.where(sums > 0, sums, 1.0), 1.0)
    return SparseMat(a.n_rows, a.n_cols, a.col_ptr.copy(),
                     a.row_idx[:nnz].copy(), vals * scale[cols], check=False)


# -- text triplet interchange ------------------------------------------


def write_triplets(mat, path, comments=()):
    """Write ``rows cols nnz`` then one ``row col value`` line per entry."""
    nnz = mat.nnz
    cols = mat.entry_columns()
    with open(path, "w") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(f"{mat.n_rows} {mat.n_cols} {nnz}\n")
        for k in range(nnz):
            fh.write(f"{mat.row_idx[k]} {cols[k]} {float(mat.values[k])!r}\n")


def read_triplets(path):
    """Read the triplet format written by :func:`write_triplets`."""
    header = None
    rows, cols, vals = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if header is None:
                if len(parts) != 3:
                    raise ShapeError(f"line {lineno}: bad triplet header")
                header = tuple(int(x) for x in parts)
                continue
            if len(parts) != 3:
                raise ShapeError(f"line {lineno}: bad triplet entry")
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            vals.append(float(parts[2]))
    if header is None:
        raise ShapeError("empty triplet file")
    n_rows, n_cols, nnz = header
    if len(rows) != nnz:
        raise ShapeError(f"header says {nnz} entries, found {len(rows)}")
    return SparseMat.from_triplets(n_rows, n_cols, rows, cols, vals)
