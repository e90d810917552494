"""Bracketing the distance from a point to the global optima of combined quadratics.

Typical use::

    from projgm import compute_bounds
    report = compute_bounds(instance)
    report.p_low, report.p_up
"""

__version__ = "0.1.0"

from .api import compute_bounds
from .baseline import BaselineResult, keshavarz
from .core import (
    BoundsReport,
    InfeasibleBasis,
    InfeasiblePoint,
    KktPoint,
    Mode,
    Polytope,
    ProblemInstance,
    QuadraticFunction,
    SimplexWeights,
    SingularCurvature,
    SolverFailure,
    to_center_form,
    validate,
)
from .lower import LowerOptions, lower_bound
from .optima import check_feasibility, kappa, kappa_c, membership_residual, sample_optima, selection
from .upper import SearchOptions, objective_and_gradient, upper_bound

__all__ = [
    "__version__",
    "compute_bounds",
    "BaselineResult",
    "keshavarz",
    "BoundsReport",
    "InfeasibleBasis",
    "InfeasiblePoint",
    "KktPoint",
    "Mode",
    "Polytope",
    "ProblemInstance",
    "QuadraticFunction",
    "SimplexWeights",
    "SingularCurvature",
    "SolverFailure",
    "to_center_form",
    "validate",
    "LowerOptions",
    "lower_bound",
    "check_feasibility",
    "kappa",
    "kappa_c",
    "membership_residual",
    "sample_optima",
    "selection",
    "SearchOptions",
    "objective_and_gradient",
    "upper_bound",
]
