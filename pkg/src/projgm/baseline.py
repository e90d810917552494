"""Relaxed-KKT residual baseline.

Instead of searching for the optimum nearest to ``y``, the baseline asks
which weights make ``y`` itself look most optimal: it minimises the
violation of the optimality conditions at ``x = y``. The imputed weights
are then pushed back through the solution map so the result is a genuine
member of the optima set, comparable with the bi-level witness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conic
from .core import ProblemInstance, SimplexWeights, SolverFailure
from .optima import kappa, kappa_c, selection

__all__ = ["BaselineResult", "keshavarz"]


@dataclass(frozen=True)
class BaselineResult:
    alpha_hat: SimplexWeights
    residual: float
    x_hat: np.ndarray
    distance_sq: float
    mu: np.ndarray
    lam: np.ndarray


def keshavarz(
    instance: ProblemInstance,
    stationarity_weight: float = 1.0,
    complementarity_weight: float = 1.0,
    options: conic.SolverOptions | None = None,
) -> BaselineResult:
    """Minimum KKT-violation weights at ``y`` and the optimum they generate.

    Solves the convex QP

        min  w_s ||sum_j alpha_j grad f_j(y) + A_eq^T lam + A^T mu||^2
             + w_c sum_k (mu_k (b_k - A_k y))^2
        s.t. alpha in the simplex, mu >= 0

    and regenerates ``x_hat = kappa(alpha_hat)`` (or the selection of
    ``kappa^c(alpha_hat)`` nearest to ``y``). ``residual`` is the square
    root of the optimal value.
    """
    y = instance.y
    P = instance.polytope
    m = instance.m
    G = (instance.Qs @ y + instance.phis).T  # column j = grad f_j(y)
    blocks = [G]
    q = r = 0
    if P is not None:
        q, r = P.q, P.r
        if q:
            blocks.append(P.A_eq.T)
        if r:
            blocks.append(P.A.T)
    H = np.hstack(blocks)  # columns: alpha, lam, mu
    nv = H.shape[1]
    W = stationarity_weight * (H.T @ H)
    if r:
        slack = P.b - P.A @ y
        W[m + q :, m + q :] += complementarity_weight * np.diag(slack**2)
    prog = conic.ConicProgram()
    a = prog.add_nonneg(m)
    lam = prog.add_free(q)
    mu = prog.add_nonneg(r)
    order = np.concatenate([a, lam, mu])
    prog.add_eq({int(i): 1.0 for i in a}, 1.0)
    quad = [
        (int(order[i]), int(order[j]), 2.0 * W[i, j])
        for i in range(nv)
        for j in range(nv)
        if W[i, j] != 0.0
    ]
    prog.set_objective({}, quadratic=quad)
    sol = conic.solve(prog, options)
    if not sol.optimal:
        raise SolverFailure(
            "baseline QP did not converge",
            {"status": sol.status.value, "iterations": sol.iterations, **sol.residuals},
        )
    alpha = SimplexWeights.project(sol.value(a))
    mu_v = np.maximum(sol.value(mu), 0.0) if r else np.zeros(r)
    lam_v = sol.value(lam) if q else np.zeros(q)
    v = np.concatenate([alpha.alpha, lam_v, mu_v])
    # from the residual vectors, not v^T W v, which squares the round-off
    value = stationarity_weight * float(np.sum((H @ v) ** 2))
    if r:
        value += complementarity_weight * float(np.sum((mu_v * slack) ** 2))
    residual = float(np.sqrt(value))
    if P is None:
        x_hat = kappa(instance, alpha)
    else:
        _, face = kappa_c(instance, alpha)
        x_hat = selection(face, y)
    return BaselineResult(alpha, residual, x_hat, float(np.sum((y - x_hat) ** 2)), mu_v, lam_v)
