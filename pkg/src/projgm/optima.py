"""Sets of global optima generated by convex combinations of the basis.

For weights ``alpha`` on the simplex the combined cost is
``f_alpha = sum_j alpha_j f_j`` with curvature ``Q_alpha`` and linear term
``phi_alpha``. Without constraints its minimiser is ``kappa(alpha) =
-Q_alpha^{-1} phi_alpha``; over a polytope the minimisers form a face
described by :class:`OptimalFace`, from which :func:`selection` picks the
point nearest to the test point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conic
from .core import (
    MEMBERSHIP_TOL,
    InfeasiblePoint,
    KktPoint,
    Polytope,
    ProblemInstance,
    SimplexWeights,
    SingularCurvature,
    SolverFailure,
    as_alpha,
)
from .densela import NotPositiveDefinite, eig_sym, solve_spd

__all__ = [
    "OptimalFace",
    "CompactnessBound",
    "FeasibilityResult",
    "combined",
    "kappa",
    "kappa_c",
    "selection",
    "kkt_residuals",
    "kkt_point",
    "membership_residual",
    "check_feasibility",
    "feasibility_scale",
    "compactness_bound",
    "sample_optima",
    "segment_alphas",
]

ACTIVE_TOL = 1e-9
SINGULAR_TOL = 1e-10


def combined(instance: ProblemInstance, alpha) -> tuple[np.ndarray, np.ndarray]:
    """``(Q_alpha, phi_alpha)`` for the weighted cost."""
    a = as_alpha(alpha)
    return np.tensordot(a, instance.Qs, axes=1), a @ instance.phis


def kappa(instance: ProblemInstance, alpha) -> np.ndarray:
    """Unique minimiser of ``f_alpha`` over R^n."""
    Q, phi = combined(instance, alpha)
    try:
        return solve_spd(Q, -phi)
    except NotPositiveDefinite as exc:
        raise SingularCurvature(f"combined curvature is singular: {exc}") from exc


@dataclass(frozen=True)
class OptimalFace:
    """Solution set of ``min_{x in X} f_alpha(x)``.

    The set is ``{x in X : face_matrix x = face_rhs}``; the rows pin the
    components of ``x`` in the range of ``Q_alpha`` and the value of
    ``phi_alpha^T x``. For nonsingular ``Q_alpha`` the face is the anchor alone.
    """

    anchor: np.ndarray
    face_matrix: np.ndarray
    face_rhs: np.ndarray
    polytope: Polytope | None
    singleton: bool

    def residual(self, x) -> float:
        x = np.asarray(x, dtype=float)
        r = float(np.max(np.abs(self.face_matrix @ x - self.face_rhs), initial=0.0))
        if self.polytope is not None:
            r = max(r, self.polytope.violation(x))
        return r


def _face(Q: np.ndarray, phi: np.ndarray, anchor: np.ndarray, polytope) -> OptimalFace:
    w, V = np.linalg.eigh(Q)
    scale = max(1.0, float(np.max(np.abs(w))))
    rng = w > SINGULAR_TOL * scale
    if np.all(rng):
        return OptimalFace(anchor, np.eye(anchor.size), anchor.copy(), polytope, True)
    rows = [V[:, rng].T]
    N = V[:, ~rng]
    phi_null = N @ (N.T @ phi)
    if np.linalg.norm(phi_null) > SINGULAR_TOL * max(1.0, np.linalg.norm(phi)):
        rows.append((phi_null / np.linalg.norm(phi_null))[None, :])
    F = np.vstack(rows)
    return OptimalFace(anchor, F, F @ anchor, polytope, False)


def kkt_residuals(instance: ProblemInstance, x, alpha, mu=None, lam=None) -> dict:
    """Violations of first-order optimality for ``(x, alpha[, mu, lam])``.

    Keys: ``stationarity`` (max-norm of the Lagrangian gradient), ``primal``
    (constraint violation), ``complementarity`` (max |mu_k (A_k x - b_k)|),
    ``dual`` (negative part of mu) and ``simplex`` (distance of alpha from
    the simplex constraints).
    """
    x = np.asarray(x, dtype=float)
    a = as_alpha(alpha)
    Q, phi = combined(instance, a)
    grad = Q @ x + phi
    res = {
        "simplex": float(max(np.max(-a, initial=0.0), abs(a.sum() - 1.0))),
    }
    P = instance.polytope
    if P is None:
        res.update(stationarity=float(np.max(np.abs(grad))), primal=0.0, complementarity=0.0, dual=0.0)
        return res
    mu = np.zeros(P.r) if mu is None else np.asarray(mu, dtype=float)
    lam = np.zeros(P.q) if lam is None else np.asarray(lam, dtype=float)
    if P.q:
        grad = grad + P.A_eq.T @ lam
    if P.r:
        grad = grad + P.A.T @ mu
        slack = P.A @ x - P.b
        comp = float(np.max(np.abs(mu * slack)))
        dual = float(np.max(-mu, initial=0.0))
    else:
        comp = dual = 0.0
    res.update(
        stationarity=float(np.max(np.abs(grad))),
        primal=P.violation(x),
        complementarity=comp,
        dual=max(dual, 0.0),
    )
    return res


def kkt_point(instance: ProblemInstance, x, alpha, mu=None, lam=None) -> KktPoint:
    P = instance.polytope
    if mu is None:
        mu = np.zeros(P.r if P is not None else 0)
    if lam is None:
        lam = np.zeros(P.q if P is not None else 0)
    a = as_alpha(alpha)
    weights = alpha if isinstance(alpha, SimplexWeights) else SimplexWeights.project(a)
    return KktPoint(
        np.asarray(x, dtype=float).copy(),
        weights,
        np.asarray(mu, dtype=float).copy(),
        np.asarray(lam, dtype=float).copy(),
        kkt_residuals(instance, x, a, mu, lam),
    )


def membership_residual(instance: ProblemInstance, point, alpha=None, mu=None, lam=None) -> float:
    """Largest violation among the equations defining the optima set.

    ``point`` is either a :class:`KktPoint` or an ``x`` vector accompanied by
    ``alpha`` (and multipliers in constrained mode). Zero means membership.
    """
    if isinstance(point, KktPoint):
        return max(kkt_residuals(instance, point.x, point.alpha, point.mu, point.lam).values())
    return max(kkt_residuals(instance, point, alpha, mu, lam).values())


def kappa_c(instance: ProblemInstance, alpha, options: conic.SolverOptions | None = None):
    """Minimise ``f_alpha`` over the polytope.

    Returns ``(KktPoint, OptimalFace)``. Strictly convex combinations go
    through the exact active-set QP; singular curvature falls back to ADMM.
    """
    P = instance.polytope
    if P is None:
        raise ValueError("kappa_c needs a constrained instance")
    a = as_alpha(alpha)
    Q, phi = combined(instance, a)
    lam_min = float(np.linalg.eigvalsh(Q)[0])
    if lam_min > SINGULAR_TOL * max(1.0, float(np.max(np.abs(Q)))):
        try:
            x, lam, mu = conic.solve_qp(Q, phi, P.A_eq, P.b_eq, P.A, P.b)
        except conic.InfeasibleQP as exc:
            raise SolverFailure(f"kappa_c QP failed: {exc}") from exc
    else:
        x, lam, mu = _qp_admm(Q, phi, P, options)
    point = kkt_point(instance, x, a, mu, lam)
    return point, _face(Q, phi, x, P)


def _qp_admm(Q, phi, P: Polytope, options):
    n = phi.size
    prog = conic.ConicProgram()
    xi = prog.add_free(n)
    for row, rhs in zip(P.A_eq, P.b_eq):
        prog.add_eq(dict(zip(xi, row)), rhs)
    for row, rhs in zip(P.A, P.b):
        prog.add_le(dict(zip(xi, row)), rhs)
    quad = [(int(xi[i]), int(xi[j]), Q[i, j]) for i in range(n) for j in range(n) if Q[i, j] != 0.0]
    prog.set_objective(dict(zip(xi, phi)), quadratic=quad)
    sol = conic.solve(prog, options)
    if not sol.optimal:
        raise SolverFailure(
            "kappa_c QP did not converge",
            {"status": sol.status.value, "iterations": sol.iterations, **sol.residuals},
        )
    return sol.value(xi), sol.eq_duals, np.maximum(sol.ineq_duals, 0.0)


def selection(face: OptimalFace, y) -> np.ndarray:
    """Point of the optimal face nearest to ``y``."""
    y = np.asarray(y, dtype=float)
    if face.singleton:
        return face.anchor.copy()
    P = face.polytope
    n = y.size
    C_eq, d_eq = face.face_matrix, face.face_rhs
    C_in = d_in = None
    if P is not None:
        C_eq = np.vstack([P.A_eq, C_eq]) if P.q else C_eq
        d_eq = np.concatenate([P.b_eq, d_eq]) if P.q else d_eq
        C_in, d_in = P.A, P.b
    try:
        x, _, _ = conic.solve_qp(np.eye(n), -y, C_eq, d_eq, C_in, d_in)
    except conic.InfeasibleQP as exc:
        raise SolverFailure(f"selection QP failed: {exc}") from exc
    return x


@dataclass(frozen=True)
class FeasibilityResult:
    exactly_optimal: bool
    alpha: SimplexWeights | None
    mu: np.ndarray | None
    lam: np.ndarray | None
    residual: float
    scale: float


def feasibility_scale(instance: ProblemInstance) -> float:
    qmax = max(float(np.max(np.sum(np.abs(f.Q), axis=1))) for f in instance.basis)
    return 1.0 + qmax * (1.0 + float(np.linalg.norm(instance.y)))


def check_feasibility(
    instance: ProblemInstance, tol: float = 1e-7, options: conic.SolverOptions | None = None
) -> FeasibilityResult:
    """Decide whether ``y`` is a global optimum of some combined cost.

    Minimises the norm of the (Lagrangian) gradient at ``x = y`` over the
    simplex weights, and in constrained mode over multipliers of the
    constraints active at ``y`` (``mu_k = 0`` for inactive rows, so
    complementarity holds exactly). ``y`` counts as exactly optimal when the
    minimum is at most ``tol * scale``.

    Raises
    ------
    InfeasiblePoint
        If ``y`` lies outside the polytope by more than 1e-9.
    """
    y = instance.y
    grads = (instance.Qs @ y + instance.phis).T  # n x m, column j = grad f_j(y)
    P = instance.polytope
    blocks = [grads]
    active = np.zeros(0, dtype=int)
    if P is not None:
        if P.violation(y) > ACTIVE_TOL:
            raise InfeasiblePoint(f"y violates the constraints by {P.violation(y):.3e}")
        if P.r:
            active = np.flatnonzero(P.A @ y >= P.b - ACTIVE_TOL)
            blocks.append(P.A[active].T)
        if P.q:
            blocks.append(P.A_eq.T)
    H = np.hstack(blocks)
    m, k = instance.m, len(active)
    prog = conic.ConicProgram()
    a = prog.add_nonneg(m)
    mu = prog.add_nonneg(k)
    lam = prog.add_free(H.shape[1] - m - k)
    prog.add_eq({int(i): 1.0 for i in a}, 1.0)
    HtH = H.T @ H
    nv = H.shape[1]
    quad = [(i, j, 2.0 * HtH[i, j]) for i in range(nv) for j in range(nv) if HtH[i, j] != 0.0]
    prog.set_objective({}, quadratic=quad)
    sol = conic.solve(prog, options)
    if not sol.optimal:
        raise SolverFailure(
            "feasibility program did not converge",
            {"status": sol.status.value, "iterations": sol.iterations, **sol.residuals},
        )
    v = sol.x
    alpha = SimplexWeights.project(v[a])
    v = np.concatenate([alpha.alpha, np.maximum(v[mu], 0.0), v[lam]])
    residual = float(np.linalg.norm(H @ v))
    scale = feasibility_scale(instance)
    mu_full = lam_full = None
    if P is not None:
        mu_full = np.zeros(P.r)
        mu_full[active] = v[m : m + k]
        lam_full = v[m + k :]
    return FeasibilityResult(residual <= tol * scale, alpha, mu_full, lam_full, residual, scale)


@dataclass(frozen=True)
class CompactnessBound:
    R: float
    Lambda: float
    radius: float


def compactness_bound(instance: ProblemInstance) -> CompactnessBound:
    """Ball ``||x|| <= R / Lambda`` containing every unconstrained optimum.

    ``Lambda`` is the smallest eigenvalue over the basis curvatures (the
    smallest eigenvalue of an affine symmetric family is concave, so its
    minimum over the simplex sits at a vertex). ``R`` bounds
    ``||sum_j alpha_j Q_j x_j^f||``, i.e. ``max_j ||Q_j x_j^f|| = max_j ||phi_j||``.
    """
    if instance.constrained:
        raise ValueError("compactness bound applies to unconstrained instances")
    R = max(float(np.linalg.norm(f.phi)) for f in instance.basis)
    Lam = min(float(eig_sym(f.Q).values[0]) for f in instance.basis)
    return CompactnessBound(R, Lam, R / Lam if Lam > 0 else np.inf)


def segment_alphas(alpha0, alpha1, steps: int = 101) -> np.ndarray:
    """Weights ``alpha0 t + alpha1 (1 - t)`` for ``t`` on a uniform grid of [0, 1]."""
    t = np.linspace(0.0, 1.0, steps)[:, None]
    return t * as_alpha(alpha0)[None, :] + (1.0 - t) * as_alpha(alpha1)[None, :]


def sample_optima(instance: ProblemInstance, count: int, seed: int, alphas=None):
    """Sample pairs ``(alpha, x)`` of the optima set.

    Weights are drawn from a flat Dirichlet distribution with
    ``numpy.random.default_rng(seed)`` unless ``alphas`` is given. In
    constrained mode ``x`` is the selection nearest to ``y``.
    """
    if alphas is None:
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = np.random.default_rng(seed)
        alphas = rng.dirichlet(np.ones(instance.m), size=count)
    out = []
    for a in np.atleast_2d(alphas):
        w = SimplexWeights.project(a) if abs(np.sum(a) - 1) > 1e-12 or np.any(a < 0) else SimplexWeights(a)
        if instance.constrained:
            point, face = kappa_c(instance, w)
            x = selection(face, instance.y)
        else:
            x = kappa(instance, w)
        out.append((w, x))
    return out
