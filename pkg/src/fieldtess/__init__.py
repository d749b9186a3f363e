"""Voronoi-like tessellation of triangle meshes by layered field evolution.

Cells grow as concurrently evolving scalar fields (one sparse layer per
cell) under an explicit Euler scheme; boundaries are narrow bands rather
than lines.  Lloyd-like relaxation and a Delaunay-like dual mesh are
obtained from the same sparse-matrix machinery.
"""

from .errors import TessError
from .sparse import (SparseMat, Skeleton, spgemm, transpose, build_skeleton,
                     expand_to_skeleton, normalize_columns, ensure_capacity)
from .mesh import (TriMesh, Laplacian, load_mesh, write_obj,
                   gen_periodic_grid, gen_icosphere, build_laplacian)
from .field import (CouplingParams, StepStats, LayeredField, UNCLAIMED,
                    init_field, step, evolve, sharp_labels,
                    band_vertex_fraction, save_field, load_field)
from .lloyd import (LloydState, cell_triangles, approx_centroid, backproject,
                    lloyd_iterate, cell_areas)
from .dual import (AdjacencyMatrix, DualMesh, vertex_adjacency,
                   triangle_adjacency, confirm_candidates, build_dual)
from .analysis import (QualityReport, euclidean_voronoi_labels,
                       sphere_voronoi_labels, triangle_quality, hausdorff,
                       label_agreement, margin_mask)

__version__ = "0.1.0"
