"""One-call bracketing of the squared distance to the optima set."""

from __future__ import annotations

import numpy as np

from .core import BoundsReport, ProblemInstance
from .lower import LowerOptions, lower_bound
from .upper import SearchOptions, upper_bound

__all__ = ["compute_bounds"]


def compute_bounds(
    instance: ProblemInstance,
    search: SearchOptions | None = None,
    lower: LowerOptions | None = None,
) -> BoundsReport:
    """Run the bi-level upper bound, then the moment lower bound.

    Raises whatever the stages raise (:class:`~projgm.core.SolverFailure`,
    :class:`~projgm.core.InfeasibleBasis`); the command line interface
    calls the stages separately to emit partial results instead.
    """
    up = upper_bound(instance, search)
    low = lower_bound(instance, lower)
    cert = low.certificate
    extracted = (cert.extracted_x, cert.extracted_alpha) if cert.certified else None
    stats = {
        "upper": {"converged_starts": up.converged_starts, **up.stats},
        "lower": dict(low.stats),
    }
    return BoundsReport(
        p_low=low.p_low,
        p_up=up.p_up,
        alpha_up=up.alpha,
        x_up=np.asarray(up.x),
        rank1_certified=cert.certified,
        extracted=extracted,
        solver_stats=stats,
        mode=instance.mode,
    )
