"""Upper bounds on the squared distance by bi-level local search.

Every candidate is generated as the optimum of some combined cost, so its
squared distance to ``y`` is an upper bound on ``p*`` by construction.
Without constraints the outer objective ``F(alpha) = ||kappa(alpha) - y||^2``
is smooth and is minimised by projected gradient descent from several
starts. With constraints ``F^c(alpha) = ||s(kappa^c(alpha)) - y||^2`` need
not be differentiable, so the search is a simplex grid followed by
derivative-free refinement.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import conic
from .core import ProblemInstance, SimplexWeights, SolverFailure, as_alpha
from .densela import solve_spd
from .optima import combined, kappa, kappa_c, kkt_point, selection

__all__ = [
    "SearchOptions",
    "UpperBoundResult",
    "objective_and_gradient",
    "constrained_objective",
    "multistart_points",
    "simplex_grid",
    "upper_bound",
    "upper_bound_unconstrained",
    "upper_bound_constrained",
]


@dataclass(frozen=True)
class SearchOptions:
    """Knobs of the bi-level search.

    ``grid_resolution`` is the spacing of the simplex grid used in
    constrained mode; ``refine_sweeps`` is the number of coordinate-wise
    golden-section passes around the best grid point.
    """

    multistarts: int = 16
    max_iters: int = 500
    step_init: float = 1.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    grad_tol: float = 1e-9
    seed: int = 0
    grid_resolution: float = 0.05
    refine_sweeps: int = 2
    golden_evals: int = 30

    def __post_init__(self):
        if self.multistarts < 1:
            raise ValueError("multistarts must be >= 1")
        for name in ("max_iters", "step_init", "armijo_c", "grad_tol", "grid_resolution"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.grid_resolution > 1:
            raise ValueError("grid_resolution must lie in (0, 1]")


@dataclass(frozen=True)
class UpperBoundResult:
    p_up: float
    alpha: SimplexWeights
    x: np.ndarray
    trace: list = field(default_factory=list)
    converged_starts: int = 0
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    stats: dict = field(default_factory=dict)


def objective_and_gradient(instance: ProblemInstance, alpha) -> tuple[float, np.ndarray]:
    """``F(alpha) = ||kappa(alpha) - y||^2`` and its gradient in ``alpha``.

    Differentiating ``Q_alpha kappa = -phi_alpha`` gives
    ``d kappa / d alpha_j = -Q_alpha^{-1} grad f_j(kappa)``, hence
    ``dF/d alpha_j = -2 w^T grad f_j(kappa)`` with ``w = Q_alpha^{-1}(kappa - y)``.
    In center form ``-grad f_j(kappa) = Q_j (x_j^f - kappa)``.
    """
    a = as_alpha(alpha)
    Q, _ = combined(instance, a)
    x = kappa(instance, a)
    d = x - instance.y
    w = solve_spd(Q, d)
    grads = instance.Qs @ x + instance.phis  # row j = grad f_j(x)
    return float(d @ d), -2.0 * grads @ w


def multistart_points(m: int, multistarts: int, seed: int) -> np.ndarray:
    """Vertices, then the barycenter, then flat-Dirichlet draws.

    The Dirichlet draws come from ``numpy.random.default_rng(seed)`` so a
    larger ``multistarts`` extends the list without changing its prefix.
    """
    pts = [np.eye(m), np.full((1, m), 1.0 / m)]
    extra = multistarts - m - 1
    if extra > 0:
        pts.append(np.random.default_rng(seed).dirichlet(np.ones(m), size=extra))
    return np.vstack(pts)


def _pgd(instance: ProblemInstance, alpha0: np.ndarray, opts: SearchOptions):
    """Projected gradient descent with Armijo backtracking from ``alpha0``.

    The first trial step is ``step_init``; later ones use the
    Barzilai-Borwein ratio ``s^T s / s^T (g_new - g_old)`` of the last
    accepted step, which is then backtracked as usual.
    """
    a = conic.project_simplex(alpha0)
    F, g = objective_and_gradient(instance, a)
    t = opts.step_init
    for it in range(opts.max_iters):
        if np.linalg.norm(a - conic.project_simplex(a - g)) <= opts.grad_tol:
            return a, F, it, True
        while True:
            cand = conic.project_simplex(a - t * g)
            step = cand - a
            Fc, gc = objective_and_gradient(instance, cand)
            if Fc <= F + opts.armijo_c * (g @ step):
                break
            t *= opts.backtrack
            if t < 1e-20:
                # no descent left at machine precision: a stationary point
                return a, F, it, True
        if F - Fc <= 4.0 * np.finfo(float).eps * max(1.0, F):
            # the decrease is lost in round-off: stationary to machine precision
            return (cand, Fc, it + 1, True) if Fc < F else (a, F, it + 1, True)
        s_k, g_k = step, gc - g
        a, F, g = cand, Fc, gc
        # Barzilai-Borwein trial step for the next iteration
        curv = s_k @ g_k
        t = float(np.clip((s_k @ s_k) / curv, 1e-10, 1e10)) if curv > 0 else opts.step_init
    return a, F, opts.max_iters, False


def upper_bound_unconstrained(instance: ProblemInstance, options: SearchOptions | None = None) -> UpperBoundResult:
    """Best projected-gradient local minimum of ``F`` over the multistarts.

    Ties are broken by the lowest start index.
    """
    opts = options or SearchOptions()
    if instance.constrained:
        raise ValueError("use upper_bound_constrained for constrained instances")
    starts = multistart_points(instance.m, opts.multistarts, opts.seed)
    best = None
    trace = []
    converged = 0
    iters = 0
    for k, a0 in enumerate(starts):
        a, F, it, ok = _pgd(instance, a0, opts)
        iters += it
        converged += ok
        trace.append(F)
        if best is None or F < best[1]:
            best = (a, F)
    alpha = SimplexWeights(best[0])
    x = kappa(instance, alpha)
    p_up = float(np.sum((instance.y - x) ** 2))
    stats = {"starts": len(starts), "iterations": iters}
    return UpperBoundResult(p_up, alpha, x, trace, converged, stats=stats)


def constrained_objective(instance: ProblemInstance, alpha):
    """``F^c(alpha)`` with the selected point and its multipliers."""
    point, face = kappa_c(instance, alpha)
    x = selection(face, instance.y)
    return float(np.sum((instance.y - x) ** 2)), x, point


def simplex_grid(m: int, resolution: float) -> np.ndarray:
    """All weights with entries in ``{0, h, 2h, ..., 1}``, ``h = 1/round(1/resolution)``.

    Rows are in lexicographic order of their integer numerators.
    """
    K = max(1, int(round(1.0 / resolution)))
    rows = []
    for cut in itertools.combinations(range(K + m - 1), m - 1):
        bars = (-1,) + cut + (K + m - 1,)
        rows.append([bars[i + 1] - bars[i] - 1 for i in range(m)])
    return np.asarray(rows, dtype=float) / K


def _golden(f, lo: float, hi: float, evals: int):
    """Golden-section minimisation of ``f`` on ``[lo, hi]``; returns ``(t, f(t))``."""
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max(evals - 2, 0)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def upper_bound_constrained(instance: ProblemInstance, options: SearchOptions | None = None) -> UpperBoundResult:
    """Grid search of ``F^c`` followed by derivative-free refinement.

    The grid cell around the best grid point is refined by coordinate-wise
    golden-section searches along ``e_j - e_ref`` (``ref`` the heaviest
    weight), then by a Nelder-Mead polish in the first ``m - 1`` weights.
    Cells whose subproblem fails are counted and skipped.
    """
    opts = options or SearchOptions()
    if not instance.constrained:
        raise ValueError("upper_bound_constrained needs a constrained instance")
    m = instance.m
    grid = simplex_grid(m, opts.grid_resolution)
    h = 1.0 / max(1, int(round(1.0 / opts.grid_resolution)))
    failed = 0
    evals = 0
    best = None  # (F, alpha, x, point)

    def evaluate(a):
        nonlocal failed, evals, best
        evals += 1
        try:
            F, x, point = constrained_objective(instance, a)
        except SolverFailure:
            failed += 1
            return np.inf
        if best is None or F < best[0]:
            best = (F, a.copy(), x, point)
        return F

    trace = []
    for a in grid:
        trace.append(evaluate(a))
    if best is None:
        raise SolverFailure("every grid cell failed", {"cells": len(grid)})
    center = best[1].copy()

    for _ in range(opts.refine_sweeps if m > 1 else 0):
        for j in range(m):
            a = best[1]
            ref = int(np.argmax(a))
            if j == ref:
                continue
            d = np.zeros(m)
            d[j], d[ref] = 1.0, -1.0
            # stay on the simplex and inside the grid cell around the center
            lo = max(-a[j], center[j] - h - a[j], a[ref] - center[ref] - h)
            hi = min(a[ref], center[j] + h - a[j], a[ref] - (center[ref] - h))
            if hi - lo <= 1e-15:
                continue
            _golden(lambda t: evaluate(np.clip(a + t * d, 0.0, None)), lo, hi, opts.golden_evals)

    if m > 1:
        def reduced(z):
            return evaluate(conic.project_simplex(np.append(z, 1.0 - np.sum(z))))

        minimize(
            reduced,
            best[1][:-1],
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-15, "maxfev": 200 * m},
        )

    F, a, x, point = best
    alpha = SimplexWeights.project(a)
    member = kkt_point(instance, x, alpha, point.mu, point.lam)
    p_up = float(np.sum((instance.y - x) ** 2))
    stats = {"grid_points": len(grid), "evaluations": evals, "failed_cells": failed, "membership": member.residual}
    return UpperBoundResult(p_up, alpha, x, trace, len(grid) - failed, point.mu, point.lam, stats)


def upper_bound(instance: ProblemInstance, options: SearchOptions | None = None) -> UpperBoundResult:
    if instance.constrained:
        return upper_bound_constrained(instance, options)
    return upper_bound_unconstrained(instance, options)
