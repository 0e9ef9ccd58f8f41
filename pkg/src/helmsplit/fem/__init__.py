"""Curved Lagrange finite elements for the truncated Helmholtz problem."""
from .assembly import (
    AssembledSystem,
    Coefficients,
    Field,
    adjoint_solve,
    assemble,
    assemble_stiffness_mass,
    boundary_trace_matrix,
    galerkin_solve,
    load_volume,
)
from .evaluate import (
    H1kProjector,
    PointLocator,
    evaluate_at,
    h1k_norm,
    interpolate,
    l2_h1_errors,
    norms_against,
    prolong,
)
from .mesh import Mesh, build_mesh, build_torus_mesh
from .space import FeSpace
