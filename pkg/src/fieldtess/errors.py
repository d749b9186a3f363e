"""Exception types raised across the package.

Every error carries a short machine-readable ``code`` so callers (and the
command line front end) can map failures to exit codes without parsing
messages.
"""


class TessError(Exception):
    """Base class for all package errors."""

    code = "error"


class ShapeError(TessError):
    code = "shape"


class PatternViolationError(TessError):
    code = "pattern-violation"


class NegativeFieldError(TessError):
    code = "negative-field"


class MeshFormatError(TessError):
    """Unparseable mesh file; message includes the offending line number."""

    code = "parse"


class NonTriangularFaceError(MeshFormatError):
    code = "non-triangular"


class IsolatedVertexError(TessError):
    code = "isolated-vertex"


class DuplicateSeedError(TessError):
    code = "duplicate-seed"


class NumericalBlowupError(TessError):
    """NaN produced during a field update; reports column and step."""

    code = "numerical-blowup"

    def __init__(self, column, step):
        self.column = int(column)
        self.step = int(step)
        super().__init__(f"numerical-blowup at column {column}, step {step}")


class VanishedCellError(TessError):
    code = "vanished-cell"


class DegenerateCellError(TessError):
    code = "degenerate-cell"


class NullNormalError(TessError):
    code = "null-normal"


class NonManifoldError(TessError):
    """Dual mesh still has an over-shared edge after adjacency curation."""

    code = "non-manifold-residual"

    def __init__(self, message, cells=()):
        self.cells = list(cells)
        super().__init__(message)
