"""Moment-matrix lower bounds on the squared distance to the optima set.

The moment matrix ``M`` lifts the monomials ``(1, x, alpha[, mu])``; for a
true optimum it equals the rank-one matrix ``v v^T`` with ``v = (1, x, alpha[,
mu])``. Replacing every product by the matching entry of ``M`` and requiring
``M`` to be PSD gives a convex relaxation whose value bounds ``p*`` from
below. The relaxation is tightened with products of simplex (and multiplier
sign) constraints that every lift satisfies.

Constraint tally (unconstrained, ``n`` states, ``m`` weights):
``2 + n + m`` equalities (normalisation, simplex sum, lifted gradient rows,
row sums of the weight block) and ``2m + 2m(m-1)`` inequalities (weight
signs, diagonal caps, and for each pair ``i < j`` the sign, two first-moment
caps and the 1/4 cap). For ``(n, m) = (2, 3)`` that is 7 + 18 = 25.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .core import (
    InfeasibleBasis,
    Polytope,
    ProblemInstance,
    QuadraticFunction,
    SimplexWeights,
    SingularCurvature,
    SolverFailure,
)
from .densela import eig_sym
from .optima import kappa, kappa_c, kkt_residuals

__all__ = [
    "MomentLayout",
    "MomentMatrix",
    "LmiProgram",
    "LowerOptions",
    "Rank1Certificate",
    "LowerBoundResult",
    "assemble_unconstrained_lmi",
    "assemble_constrained_lmi",
    "assemble_lmi",
    "lower_bound",
    "certify_rank1",
    "lift",
    "constraint_violation",
]


@dataclass(frozen=True)
class MomentLayout:
    """Row/column positions of ``1``, ``x``, ``alpha`` and ``mu`` inside ``M``."""

    n: int
    m: int
    r: int = 0

    @property
    def order(self) -> int:
        return 1 + self.n + self.m + self.r

    @property
    def one(self) -> int:
        return 0

    @property
    def x(self) -> np.ndarray:
        return np.arange(1, 1 + self.n)

    @property
    def alpha(self) -> np.ndarray:
        return np.arange(1 + self.n, 1 + self.n + self.m)

    @property
    def mu(self) -> np.ndarray:
        return np.arange(1 + self.n + self.m, self.order)


@dataclass(frozen=True)
class MomentMatrix:
    """Solved moment matrix plus the multiplier values kept outside it.

    ``mu_first`` carries ``M_{mu 1}`` when the relaxation was solved with the
    multiplier block projected out (see :func:`assemble_projected_constrained_lmi`);
    the layout then has ``r = 0``.
    """

    layout: MomentLayout
    values: np.ndarray
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu_first: np.ndarray | None = None

    def _blk(self, rows, cols):
        return self.values[np.ix_(np.atleast_1d(rows), np.atleast_1d(cols))]

    @property
    def M_1x(self):
        return self.values[0, self.layout.x]

    @property
    def M_1alpha(self):
        return self.values[0, self.layout.alpha]

    @property
    def M_mu1(self):
        if self.mu_first is not None:
            return self.mu_first
        return self.values[self.layout.mu, 0]

    @property
    def M_xx(self):
        return self._blk(self.layout.x, self.layout.x)

    @property
    def M_xalpha(self):
        return self._blk(self.layout.x, self.layout.alpha)

    @property
    def M_alphaalpha(self):
        return self._blk(self.layout.alpha, self.layout.alpha)

    @property
    def M_xmu(self):
        return self._blk(self.layout.x, self.layout.mu)

    @property
    def M_mumu(self):
        return self._blk(self.layout.mu, self.layout.mu)

    @property
    def M_mualpha(self):
        return self._blk(self.layout.mu, self.layout.alpha)


@dataclass
class LmiProgram:
    """A conic program plus the bookkeeping needed to read ``M`` back."""

    program: conic.ConicProgram
    block: conic.PsdBlock
    layout: MomentLayout
    lam: np.ndarray
    counts: dict
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def entry(self, i: int, j: int) -> int:
        return self.block.index(i, j)


@dataclass(frozen=True)
class LowerOptions:
    tol: float = 1e-8
    max_iter: int = 50000
    over_relaxation: float = 1.6
    rank1_threshold: float = 1e-6
    membership_tol: float = 1e-6
    valid_constraints: bool = True
    mu_bound: tuple | float | None = None
    # swap a higher-rank optimum for the rank-one lift of its first moments
    # when that lift is feasible and attains the same value
    rank_one_selection: bool = True
    # solve on the face of M cut out by the simplex rows (same feasible set)
    face_reduction: bool = True
    # without a cap on M_{mu mu}, solve the equivalent program with the
    # multiplier block projected out
    project_multipliers: bool = True
    # the moment programs are small and dense: the interior-point method
    # usually finishes in a few dozen steps where ADMM needs tens of thousands
    strategy: str = "interior-first"

    def solver_options(self) -> conic.SolverOptions:
        return conic.SolverOptions(
            tol=self.tol, max_iter=self.max_iter, over_relaxation=self.over_relaxation, strategy=self.strategy
        )


def _objective(lmi: LmiProgram, y: np.ndarray):
    L = lmi.layout
    terms = {}
    for i, xi in enumerate(L.x):
        terms[lmi.entry(xi, xi)] = 1.0
        terms[lmi.entry(0, xi)] = -2.0 * y[i]
    lmi.program.set_objective(terms, constant=float(y @ y))


def _simplex_and_valid(lmi: LmiProgram, valid: bool):
    prog, L, e = lmi.program, lmi.layout, lmi.entry
    a = L.alpha
    counts = lmi.counts
    prog.add_eq({e(0, 0): 1.0}, 1.0)
    prog.add_eq({e(0, j): 1.0 for j in a}, 1.0)
    for j in a:
        prog.add_ge({e(0, j): 1.0}, 0.0)
    counts["eq"] += 2
    counts["ineq"] += L.m
    if not valid:
        return
    for i in a:
        terms = {e(0, i): 1.0}
        for j in a:
            terms[e(i, j)] = terms.get(e(i, j), 0.0) - 1.0
        prog.add_eq(terms, 0.0)
        prog.add_le({e(i, i): 1.0, e(0, i): -1.0}, 0.0)
    counts["eq"] += L.m
    counts["ineq"] += L.m
    for i, j in itertools.combinations(a, 2):
        prog.add_ge({e(i, j): 1.0}, 0.0)
        prog.add_le({e(i, j): 1.0, e(0, i): -1.0}, 0.0)
        prog.add_le({e(i, j): 1.0, e(0, j): -1.0}, 0.0)
        prog.add_le({e(i, j): 1.0}, 0.25)
        counts["ineq"] += 4


def _stationarity(lmi: LmiProgram, instance: ProblemInstance, extra=None):
    """Rows ``sum_j (Q_j M_{x alpha_j} + phi_j M_{alpha_j 1}) [+ multiplier terms] = 0``."""
    L, e = lmi.layout, lmi.entry
    Qs, phis = instance.Qs, instance.phis
    for row in range(L.n):
        terms: dict[int, float] = {}
        for j, aj in enumerate(L.alpha):
            for k, xk in enumerate(L.x):
                if Qs[j, row, k] != 0.0:
                    idx = e(xk, aj)
                    terms[idx] = terms.get(idx, 0.0) + Qs[j, row, k]
            if phis[j, row] != 0.0:
                idx = e(0, aj)
                terms[idx] = terms.get(idx, 0.0) + phis[j, row]
        if extra is not None:
            for idx, c in extra(row):
                terms[idx] = terms.get(idx, 0.0) + c
        lmi.program.add_eq(terms, 0.0)
        lmi.counts["eq"] += 1


def assemble_unconstrained_lmi(instance: ProblemInstance, valid_constraints: bool = True) -> LmiProgram:
    """Relaxation over ``M`` of order ``1 + n + m`` for the unconstrained problem."""
    if instance.constrained:
        raise ValueError("use assemble_constrained_lmi for constrained instances")
    layout = MomentLayout(instance.n, instance.m)
    prog = conic.ConicProgram()
    block = prog.add_psd(layout.order)
    lmi = LmiProgram(prog, block, layout, np.zeros(0, dtype=int), {"eq": 0, "ineq": 0})
    _objective(lmi, instance.y)
    _simplex_and_valid(lmi, valid_constraints)
    _stationarity(lmi, instance)
    return lmi


def assemble_constrained_lmi(
    instance: ProblemInstance, valid_constraints: bool = True, mu_bound=None
) -> LmiProgram:
    """Relaxation over ``M`` of order ``1 + n + m + r`` and free equality multipliers.

    ``mu_bound`` optionally caps ``M_{mu_k mu_k}`` (scalar or one value per
    inequality); no cap is imposed by default.
    """
    P = instance.polytope
    if P is None:
        raise ValueError("constrained assembly needs a polytope")
    layout = MomentLayout(instance.n, instance.m, P.r)
    prog = conic.ConicProgram()
    block = prog.add_psd(layout.order)
    lam = prog.add_free(P.q)
    lmi = LmiProgram(prog, block, layout, lam, {"eq": 0, "ineq": 0})
    e = lmi.entry
    _objective(lmi, instance.y)
    _simplex_and_valid(lmi, valid_constraints)

    def multiplier_terms(row):
        for l in range(P.q):
            if P.A_eq[l, row] != 0.0:
                yield int(lam[l]), P.A_eq[l, row]
        for k, mk in enumerate(layout.mu):
            if P.A[k, row] != 0.0:
                yield e(0, mk), P.A[k, row]

    _stationarity(lmi, instance, multiplier_terms)
    x = layout.x
    for l in range(P.q):
        prog.add_eq({e(0, xi): P.A_eq[l, i] for i, xi in enumerate(x)}, P.b_eq[l])
        lmi.counts["eq"] += 1
    for k, mk in enumerate(layout.mu):
        prog.add_le({e(0, xi): P.A[k, i] for i, xi in enumerate(x)}, P.b[k])
        prog.add_ge({e(0, mk): 1.0}, 0.0)
        lmi.counts["ineq"] += 2
    if P.r:
        terms: dict[int, float] = {}
        for k, mk in enumerate(layout.mu):
            terms[e(0, mk)] = terms.get(e(0, mk), 0.0) - P.b[k]
            for i, xi in enumerate(x):
                if P.A[k, i] != 0.0:
                    terms[e(xi, mk)] = terms.get(e(xi, mk), 0.0) + P.A[k, i]
        prog.add_eq(terms, 0.0)
        lmi.counts["eq"] += 1
    if valid_constraints:
        for k, l in itertools.combinations(layout.mu, 2):
            prog.add_ge({e(k, l): 1.0}, 0.0)
            lmi.counts["ineq"] += 1
        for mk in layout.mu:
            for ai in layout.alpha:
                prog.add_ge({e(mk, ai): 1.0}, 0.0)
                prog.add_le({e(mk, ai): 1.0, e(0, mk): -1.0}, 0.0)
                lmi.counts["ineq"] += 2
    if mu_bound is not None:
        bounds = np.broadcast_to(np.asarray(mu_bound, dtype=float), (P.r,))
        for bk, mk in zip(bounds, layout.mu):
            if np.isfinite(bk):
                prog.add_le({e(mk, mk): 1.0}, float(bk))
                lmi.counts["ineq"] += 1
    return lmi


def assemble_projected_constrained_lmi(instance: ProblemInstance, valid_constraints: bool = True) -> LmiProgram:
    """Constrained relaxation with the multiplier rows and columns of ``M`` projected out.

    Keeps ``M`` over ``(1, x, alpha)`` and a nonnegative vector standing for
    ``M_{mu 1}``; the lifted complementarity row and the rows of ``M``
    indexed by ``mu`` are dropped. Any feasible point of
    :func:`assemble_constrained_lmi` maps to a feasible point here with the
    same objective, so the value is a valid lower bound. Conversely, with
    no cap on ``M_{mu mu}`` the dropped entries can be chosen as large as
    needed to satisfy the single complementarity row, so both programs have
    the same infimum; the full program just does not attain it in general,
    which stalls first-order solvers.
    """
    P = instance.polytope
    if P is None:
        raise ValueError("constrained assembly needs a polytope")
    layout = MomentLayout(instance.n, instance.m)
    prog = conic.ConicProgram()
    block = prog.add_psd(layout.order)
    lam = prog.add_free(P.q)
    mu = prog.add_nonneg(P.r)
    lmi = LmiProgram(prog, block, layout, lam, {"eq": 0, "ineq": 0}, mu)
    e = lmi.entry
    _objective(lmi, instance.y)
    _simplex_and_valid(lmi, valid_constraints)

    def multiplier_terms(row):
        for l in range(P.q):
            if P.A_eq[l, row] != 0.0:
                yield int(lam[l]), P.A_eq[l, row]
        for k in range(P.r):
            if P.A[k, row] != 0.0:
                yield int(mu[k]), P.A[k, row]

    _stationarity(lmi, instance, multiplier_terms)
    for l in range(P.q):
        prog.add_eq({e(0, xi): P.A_eq[l, i] for i, xi in enumerate(layout.x)}, P.b_eq[l])
        lmi.counts["eq"] += 1
    for k in range(P.r):
        prog.add_le({e(0, xi): P.A[k, i] for i, xi in enumerate(layout.x)}, P.b[k])
        lmi.counts["ineq"] += 1
    return lmi


def assemble_lmi(instance: ProblemInstance, options: LowerOptions | None = None) -> LmiProgram:
    """The program :func:`lower_bound` solves for ``instance`` under ``options``."""
    opts = options or LowerOptions()
    if instance.constrained:
        if opts.mu_bound is None and opts.project_multipliers:
            return assemble_projected_constrained_lmi(instance, opts.valid_constraints)
        return assemble_constrained_lmi(instance, opts.valid_constraints, opts.mu_bound)
    return assemble_unconstrained_lmi(instance, opts.valid_constraints)


def face_basis(layout: MomentLayout) -> np.ndarray:
    """Basis ``B`` with ``M = B S B^T`` for every ``M`` meeting the simplex rows.

    The simplex equality and the row-sum valid equalities force
    ``v^T M v = 1 - 2 sum_j M_{1 alpha_j} + sum_ij M_{alpha_i alpha_j} = 0`` for
    ``v = e_1 - sum_j e_{alpha_j}``, hence ``M v = 0``. ``B`` spans the
    complement of ``v`` by writing the last weight as one minus the others.
    """
    k = layout.order
    last = int(layout.alpha[-1])
    keep = [i for i in range(k) if i != last]
    B = np.zeros((k, k - 1))
    for col, i in enumerate(keep):
        B[i, col] = 1.0
    B[last, 0] = 1.0
    for col, i in enumerate(keep):
        if i in layout.alpha:
            B[last, col] = -1.0
    return B


def _solve(lmi: LmiProgram, opts: LowerOptions) -> conic.ConicSolution:
    if opts.valid_constraints and opts.face_reduction:
        return conic.solve_on_face(lmi.program, lmi.block, face_basis(lmi.layout), opts.solver_options())
    return conic.solve(lmi.program, opts.solver_options())


def lift(layout: MomentLayout, x, alpha, mu=None) -> np.ndarray:
    """Rank-one moment matrix ``v v^T`` of ``v = (1, x, alpha[, mu])``."""
    parts = [np.ones(1), np.asarray(x, float), np.asarray(alpha, float)]
    if layout.r:
        parts.append(np.asarray(mu, float))
    v = np.concatenate(parts)
    return np.outer(v, v)


def constraint_violation(lmi: LmiProgram, M: np.ndarray, lam=None) -> dict:
    """Largest violation of the equalities / inequalities / PSD cone at ``M``."""
    x = np.zeros(lmi.program.num_vars)
    iu = np.triu_indices(lmi.layout.order)
    x[lmi.block.offset : lmi.block.offset + lmi.block.size] = M[iu]
    if lmi.lam.size:
        x[lmi.lam] = np.asarray(lam, dtype=float)
    eq = max((abs(sum(c * x[i] for i, c in t) - rhs) for t, rhs in lmi.program.equalities), default=0.0)
    ineq = max((sum(c * x[i] for i, c in t) - rhs for t, rhs in lmi.program.inequalities), default=0.0)
    psd = -min(float(np.linalg.eigvalsh(M)[0]), 0.0)
    return {"eq": float(eq), "ineq": float(max(ineq, 0.0)), "psd": psd}


@dataclass(frozen=True)
class Rank1Certificate:
    singular_ratio: float
    certified: bool
    extracted_x: np.ndarray
    extracted_alpha: SimplexWeights
    extracted_mu: np.ndarray
    membership: float


@dataclass(frozen=True)
class LowerBoundResult:
    p_low: float
    moment: MomentMatrix
    certificate: Rank1Certificate
    objective: float
    dual_objective: float
    stats: dict


def certify_rank1(M: MomentMatrix, instance: ProblemInstance, options: LowerOptions | None = None) -> Rank1Certificate:
    """Check whether ``M`` is numerically rank one and read off ``(x, alpha[, mu])``."""
    opts = options or LowerOptions()
    L = M.layout
    w = np.maximum(eig_sym(M.values).values[::-1], 0.0)
    ratio = float(w[1] / w[0]) if w.size > 1 and w[0] > 0 else (0.0 if w.size == 1 else np.inf)
    scale = M.values[0, 0] if M.values[0, 0] > 0 else 1.0
    x = M.values[0, L.x] / scale
    alpha = SimplexWeights.project(M.values[0, L.alpha] / scale)
    mu = np.maximum(np.asarray(M.M_mu1, dtype=float) / scale, 0.0)
    lam = M.lam if instance.constrained else None
    res = kkt_residuals(instance, x, alpha, mu if instance.constrained else None, lam)
    member = max(res.values())
    certified = ratio <= opts.rank1_threshold and member <= opts.membership_tol
    return Rank1Certificate(ratio, bool(certified), x, alpha, mu, float(member))


def lower_bound(instance: ProblemInstance, options: LowerOptions | None = None) -> LowerBoundResult:
    """Solve the enriched moment relaxation.

    ``p_low`` is the smaller of the primal and dual objective values at the
    returned solution, clamped at zero. Raises :class:`InfeasibleBasis` when
    the solver certifies infeasibility and :class:`SolverFailure` when it
    stops without converging.
    """
    opts = options or LowerOptions()
    # Solve with y moved to the origin: the objective becomes sum_i M_{x_i x_i}
    # with no ||y||^2 constant to cancel, so the solver's relative stopping
    # test measures the bound itself rather than the size of y.
    lmi = assemble_lmi(_translate(instance), opts)
    sol = _solve(lmi, opts)
    stats = {
        "status": sol.status.value,
        "method": sol.method,
        "iterations": sol.iterations,
        "primal_residual": sol.residuals["primal"],
        "dual_residual": sol.residuals["dual"],
        "gap": sol.residuals["gap"],
        "constraints": dict(lmi.counts),
        "psd_order": lmi.layout.order,
        "multipliers_projected": bool(lmi.mu.size) or (instance.constrained and lmi.layout.r == 0),
    }
    if sol.status is conic.Status.INFEASIBLE:
        raise InfeasibleBasis("moment relaxation is infeasible", sol.certificate)
    if not sol.optimal:
        raise SolverFailure("moment relaxation did not converge", stats)
    moment = MomentMatrix(
        lmi.layout,
        _untranslate(lmi.layout, sol.matrix(lmi.block), instance.y),
        sol.value(lmi.lam) if lmi.lam.size else np.zeros(0),
        sol.value(lmi.mu) if stats["multipliers_projected"] else None,
    )
    cert = certify_rank1(moment, instance, opts)
    p_low = max(min(sol.objective, sol.dual_objective), 0.0)
    if not cert.certified and opts.rank_one_selection:
        selected = _rank_one_optimum(instance, moment, cert, p_low, opts)
        if selected is not None:
            moment = selected
            cert = certify_rank1(moment, instance, opts)
            stats["rank_one_selection"] = True
    return LowerBoundResult(p_low, moment, cert, sol.objective, sol.dual_objective, stats)


def _translate(instance: ProblemInstance) -> ProblemInstance:
    """The same problem in coordinates ``x - y``, so the test point is the origin."""
    y = instance.y
    basis = [QuadraticFunction(f.Q, f.phi + f.Q @ y) for f in instance.basis]
    P = instance.polytope
    if P is not None:
        P = Polytope(P.A_eq, P.b_eq - P.A_eq @ y, P.A, P.b - P.A @ y)
    return ProblemInstance(basis, np.zeros_like(y), P)


def _untranslate(layout: MomentLayout, M: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Map a moment matrix of ``(1, x - y, ...)`` back to one of ``(1, x, ...)``."""
    T = np.eye(layout.order)
    T[layout.x, 0] = y
    return T @ M @ T.T


def _rank_one_optimum(instance, moment: MomentMatrix, cert: Rank1Certificate, p_low: float, opts: LowerOptions):
    """Rank-one optimal ``M`` built from the first moments of a solver optimum.

    The optimal set of the relaxation is generally not a single matrix: the
    weight block ``M_{alpha alpha}`` can sit anywhere between ``a a^T`` and
    ``diag(a)`` without changing the objective, and interior-point methods
    return a point in the relative interior of that set. When the first
    moments ``(x, alpha[, mu])`` form a member of the optima set, their lift
    is feasible, and its value ``||y - x||^2`` matches ``p_low``, that lift is
    an optimal solution of rank one. If the first moments miss membership
    only by solver accuracy, the member ``kappa(alpha)`` (or the KKT point of
    ``kappa_c(alpha)``) is tried instead. The lift is checked against the
    full program (multiplier block included) and returned in its layout.
    Returns ``None`` when every candidate fails a check.
    """
    alpha = np.asarray(cert.extracted_alpha)
    candidates = []
    if cert.membership <= opts.membership_tol:
        candidates.append((cert.extracted_x, cert.extracted_mu, moment.lam))
    try:
        if instance.constrained:
            point, _ = kappa_c(instance, alpha)
            candidates.append((point.x, point.mu, point.lam))
        else:
            candidates.append((kappa(instance, alpha), None, moment.lam))
    except (SingularCurvature, SolverFailure, np.linalg.LinAlgError):
        pass
    if instance.constrained:
        full = assemble_constrained_lmi(instance, opts.valid_constraints, opts.mu_bound)
    else:
        full = assemble_unconstrained_lmi(instance, opts.valid_constraints)
    for x, mu, lam in candidates:
        value = float(np.sum((instance.y - x) ** 2))
        if abs(value - p_low) > opts.rank1_threshold * (1.0 + p_low):
            continue
        M = lift(full.layout, x, alpha, mu if instance.constrained else None)
        # lam enters the constraints linearly, so it carries over
        viol = constraint_violation(full, M, lam)
        if max(viol.values()) <= opts.membership_tol:
            return MomentMatrix(full.layout, M, np.asarray(lam, dtype=float))
    return None
