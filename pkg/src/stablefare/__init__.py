"""Joint traveler-route assignment and stable fare allocation."""

from .assignment import SolverOptions, brute_force_assignment, solve_assignment
from .core import (
    OPERATOR_OPTIMAL,
    USER_OPTIMAL,
    Objective,
    allocation_gap,
    check_stability,
    compute_prices,
    convex_combination,
    enumerate_coalitions,
    feasibility_scan,
    solve_allocation,
)
from .model import CostParams, CostRule, Network, Route, UserGroup, ValidationError, validate_instance

__all__ = [
    "OPERATOR_OPTIMAL",
    "USER_OPTIMAL",
    "CostParams",
    "CostRule",
    "Network",
    "Objective",
    "Route",
    "SolverOptions",
    "UserGroup",
    "ValidationError",
    "allocation_gap",
    "brute_force_assignment",
    "check_stability",
    "compute_prices",
    "convex_combination",
    "enumerate_coalitions",
    "feasibility_scan",
    "solve_allocation",
    "solve_assignment",
    "validate_instance",
]

__version__ = "0.1.0"
