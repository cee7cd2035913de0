"""Dual-formulation solver for optimal consumption, leisure, portfolio and
retirement timing under a partially hedgeable stochastic wage."""

from .conjugate import ConjugateResult, LeisureRegime, dual_running_payoff, dual_utility
from .errors import (
    ConfigError,
    DegeneracyWarning,
    NonConvergenceError,
    RangeError,
    TopologyWarning,
    WellPosednessError,
)
from .fbsolver import (
    Region,
    SolutionField,
    SolverConfig,
    retirement_boundary,
    solve,
    solve_post_retirement,
)
from .grid import DualGrid
from .model import (
    MarketParams,
    MertonConstants,
    ModelParams,
    PreferenceParams,
    WageParams,
    gamma_eff,
    inverse_marginal,
    leisure_threshold,
    merton_dual,
    merton_value,
    validate_params,
)
from .primal import (
    PrimalSolution,
    primal_value,
    recover_policy,
    retirement_boundary_wealth,
)
from .simcheck import (
    PathBundle,
    StrategySpec,
    budget_check,
    duality_gap,
    kernel_check,
    payoff_estimate,
    roll_strategy,
    simulate,
    z_consistency,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConjugateResult",
    "DegeneracyWarning",
    "DualGrid",
    "LeisureRegime",
    "MarketParams",
    "MertonConstants",
    "ModelParams",
    "NonConvergenceError",
    "PathBundle",
    "PreferenceParams",
    "PrimalSolution",
    "RangeError",
    "Region",
    "SolutionField",
    "SolverConfig",
    "StrategySpec",
    "TopologyWarning",
    "WageParams",
    "__version__",
    "budget_check",
    "dual_running_payoff",
    "dual_utility",
    "duality_gap",
    "gamma_eff",
    "inverse_marginal",
    "kernel_check",
    "leisure_threshold",
    "merton_dual",
    "merton_value",
    "payoff_estimate",
    "primal_value",
    "recover_policy",
    "retirement_boundary",
    "retirement_boundary_wealth",
    "roll_strategy",
    "simulate",
    "solve",
    "solve_post_retirement",
    "validate_params",
    "z_consistency",
]
