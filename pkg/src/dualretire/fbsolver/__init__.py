"""Free-boundary solver for the stationary dual variational inequality."""

from .classify import Region, classify_regions, retirement_boundary
from .operator import (
    assemble_system,
    complementarity_residual,
    log_derivatives,
    minimax_theta2,
    stationary_operator,
)
from .solve import (
    SolutionField,
    SolverConfig,
    derivative_fields,
    discrete_residual,
    minimax_v,
    operator_residual,
    solve,
    solve_post_retirement,
)

__all__ = [
    "Region",
    "SolutionField",
    "SolverConfig",
    "assemble_system",
    "classify_regions",
    "complementarity_residual",
    "derivative_fields",
    "discrete_residual",
    "log_derivatives",
    "minimax_theta2",
    "minimax_v",
    "operator_residual",
    "retirement_boundary",
    "solve",
    "solve_post_retirement",
    "stationary_operator",
]
