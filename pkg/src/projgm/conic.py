"""Convex solvers for the small LP / QP / SDP instances used by the bounds.

:func:`solve` is an operator-splitting (ADMM) method for

    minimize    1/2 x^T P x + c^T x + const
    subject to  A x in C

where ``C`` is a product of points (equalities), intervals (inequalities and
sign constraints) and positive semidefinite cones. Each iteration solves one
linear system with a cached Cholesky factor and projects onto ``C``; PSD
blocks are projected through an eigendecomposition. Programs without PSD
blocks are finished with an active-set polish step, which recovers vertex
solutions to machine precision.

:func:`solve_qp` is a dense dual active-set method (Goldfarb-Idnani) for
strictly convex QPs. It is exact and much faster than ADMM on the tiny QPs
that the upper bound evaluates thousands of times.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._ipm import interior_point
from .densela import packed_index, packed_size

__all__ = [
    "Status",
    "SolverOptions",
    "PsdBlock",
    "ConicProgram",
    "ConicSolution",
    "LayoutError",
    "InfeasibleQP",
    "solve",
    "solve_on_face",
    "solve_qp",
    "project_simplex",
]

_SQRT2 = np.sqrt(2.0)


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


class LayoutError(ValueError):
    pass


class InfeasibleQP(ArithmeticError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 50000
    over_relaxation: float = 1.6
    rho: float = 0.1
    sigma: float = 1e-6
    check_every: int = 10
    adapt_every: int = 50
    infeasibility_after: int = 500
    infeasibility_tol: float = 1e-6
    polish: bool = True
    scaling_iters: int = 10
    adapt_threshold: float = 5.0
    # rho changes void the fixed-point convergence guarantee; after this many
    # the iteration runs on with a fixed rho
    max_adaptations: int = 20
    # second-order fallback for linear programs that ADMM cannot finish
    interior_fallback: bool = True
    interior_max_iter: int = 100
    # "admm": ADMM, then the interior-point fallback; "interior-first": the
    # interior-point method, then ADMM warm-started from its best iterate
    strategy: str = "admm"

    def __post_init__(self):
        if self.strategy not in ("admm", "interior-first"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class PsdBlock:
    """A symmetric matrix variable; entry ``(i, j)`` is variable ``index(i, j)``."""

    order: int
    offset: int

    def index(self, i: int, j: int) -> int:
        return self.offset + packed_index(i, j, self.order)

    @property
    def size(self) -> int:
        return packed_size(self.order)


def _terms(terms) -> list[tuple[int, float]]:
    if isinstance(terms, dict):
        items = terms.items()
    else:
        items = terms
    out: dict[int, float] = {}
    for idx, coef in items:
        idx = int(idx)
        out[idx] = out.get(idx, 0.0) + float(coef)
    return sorted(out.items())


class ConicProgram:
    """Variable layout plus affine objective and constraints.

    Variables are declared in blocks (free, nonnegative, PSD); every method
    returns the integer indices of the new variables. Constraint and
    objective functionals are given as ``{index: coefficient}`` mappings (or
    iterables of pairs). Inequalities read ``functional <= rhs``.
    """

    def __init__(self):
        self.num_vars = 0
        self.free_blocks: list[np.ndarray] = []
        self.nonneg: list[int] = []
        self.psd_blocks: list[PsdBlock] = []
        self.equalities: list[tuple[list[tuple[int, float]], float]] = []
        self.inequalities: list[tuple[list[tuple[int, float]], float]] = []
        self.objective: list[tuple[int, float]] = []
        self.constant = 0.0
        self.quadratic: list[tuple[int, int, float]] = []

    def _new(self, size: int) -> np.ndarray:
        idx = np.arange(self.num_vars, self.num_vars + size)
        self.num_vars += size
        return idx

    def add_free(self, size: int) -> np.ndarray:
        idx = self._new(size)
        self.free_blocks.append(idx)
        return idx

    def add_nonneg(self, size: int) -> np.ndarray:
        idx = self._new(size)
        self.nonneg.extend(int(i) for i in idx)
        return idx

    def add_psd(self, order: int) -> PsdBlock:
        if order < 1:
            raise LayoutError("PSD block order must be >= 1")
        block = PsdBlock(order, self.num_vars)
        self._new(block.size)
        self.psd_blocks.append(block)
        return block

    def _check(self, terms):
        for idx, _ in terms:
            if not 0 <= idx < self.num_vars:
                raise LayoutError(f"functional references undeclared variable {idx}")
        return terms

    def add_eq(self, terms, rhs: float) -> int:
        self.equalities.append((self._check(_terms(terms)), float(rhs)))
        return len(self.equalities) - 1

    def add_le(self, terms, rhs: float) -> int:
        self.inequalities.append((self._check(_terms(terms)), float(rhs)))
        return len(self.inequalities) - 1

    def add_ge(self, terms, rhs: float) -> int:
        return self.add_le([(i, -c) for i, c in _terms(terms)], -rhs)

    def set_objective(self, terms, constant: float = 0.0, quadratic=None):
        """Objective ``c^T x + constant + 1/2 sum P_ij x_i x_j``.

        ``quadratic`` is an iterable of ``(i, j, P_ij)`` for the upper and lower
        triangle alike (symmetrised on assembly).
        """
        self.objective = self._check(_terms(terms))
        self.constant = float(constant)
        self.quadratic = []
        for i, j, v in quadratic or ():
            if not (0 <= i < self.num_vars and 0 <= j < self.num_vars):
                raise LayoutError("quadratic term references undeclared variable")
            self.quadratic.append((int(i), int(j), float(v)))

    @property
    def num_constraints(self) -> int:
        return len(self.equalities) + len(self.inequalities)


@dataclass
class ConicSolution:
    status: Status
    x: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    objective: float
    dual_objective: float
    residuals: dict
    iterations: int
    certificate: dict | None = None
    polished: bool = False
    method: str = "admm"
    _program: ConicProgram | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, idx):
        return self.x[np.asarray(idx)]

    def matrix(self, block: PsdBlock) -> np.ndarray:
        iu = np.triu_indices(block.order)
        M = np.zeros((block.order, block.order))
        M[iu] = self.x[block.offset : block.offset + block.size]
        return M + np.triu(M, 1).T


class _Assembled:
    """Dense ADMM data for a program: rows ordered eq | box | psd blocks."""

    def __init__(self, prog: ConicProgram):
        nv = prog.num_vars
        n_eq = len(prog.equalities)
        n_in = len(prog.inequalities)
        n_nn = len(prog.nonneg)
        n_psd = sum(b.size for b in prog.psd_blocks)
        m = n_eq + n_in + n_nn + n_psd
        A = np.zeros((m, nv))
        lo = np.full(m, -np.inf)
        hi = np.full(m, np.inf)
        row = 0
        for terms, rhs in prog.equalities:
            for i, c in terms:
                A[row, i] = c
            lo[row] = hi[row] = rhs
            row += 1
        for terms, rhs in prog.inequalities:
            for i, c in terms:
                A[row, i] = c
            hi[row] = rhs
            row += 1
        for i in prog.nonneg:
            A[row, i] = 1.0
            lo[row] = 0.0
            row += 1
        self.psd_slices = []
        for block in prog.psd_blocks:
            start = row
            iu, ju = np.triu_indices(block.order)
            for k, (i, j) in enumerate(zip(iu, ju)):
                A[row, block.offset + k] = 1.0 if i == j else _SQRT2
                row += 1
            self.psd_slices.append((slice(start, row), block.order, iu, ju))
        self.A = A
        self.lo = lo
        self.hi = hi
        self.n_eq = n_eq
        self.n_in = n_in
        self.n_box = n_eq + n_in + n_nn
        self.box = slice(0, self.n_box)
        self.is_eq = np.zeros(m, dtype=bool)
        self.is_eq[:n_eq] = True
        P = np.zeros((nv, nv))
        for i, j, v in prog.quadratic:
            P[i, j] += 0.5 * v
            P[j, i] += 0.5 * v
        self.P = P
        self.c = np.zeros(nv)
        for i, v in prog.objective:
            self.c[i] += v
        self.constant = prog.constant

    def project(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[self.box] = np.clip(v[self.box], self.lo[self.box], self.hi[self.box])
        for sl, order, iu, ju in self.psd_slices:
            out[sl] = _psd_project_svec(v[sl], order, iu, ju)
        return out

    def support(self, y: np.ndarray) -> float:
        """Support function of C at ``y`` (``inf`` when unbounded)."""
        yb = y[self.box]
        total = 0.0
        pos = yb > 0
        neg = yb < 0
        if np.any(np.isinf(self.hi[self.box][pos])) or np.any(np.isinf(self.lo[self.box][neg])):
            return np.inf
        total += float(self.hi[self.box][pos] @ yb[pos] + self.lo[self.box][neg] @ yb[neg])
        for sl, order, iu, ju in self.psd_slices:
            S = _smat(y[sl], order, iu, ju)
            if np.linalg.eigvalsh(S)[-1] > 1e-9 * max(1.0, np.abs(S).max()):
                return np.inf
        return total


def _smat(v, order, iu, ju):
    S = np.zeros((order, order))
    vals = np.where(iu == ju, v, v / _SQRT2)
    S[iu, ju] = vals
    S[ju, iu] = vals
    return S


def _psd_project_svec(v, order, iu, ju):
    S = _smat(v, order, iu, ju)
    w, V = np.linalg.eigh(S)
    if w[0] >= 0.0:
        return v.copy()
    pos = w > 0
    P = (V[:, pos] * w[pos]) @ V[:, pos].T
    return np.where(iu == ju, P[iu, ju], _SQRT2 * P[iu, ju])


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _equilibrate(data: _Assembled, iters: int):
    """Ruiz equilibration of the KKT matrix ``[[P, A^T], [A, 0]]``.

    Returns the scaled copy plus ``(D, E, cost)`` with ``x = D x_s``,
    ``z = z_s / E`` and ``y = E y_s / cost``. Rows of one PSD block share a
    single factor so that the scaled cone is the cone itself.
    """
    m, nv = data.A.shape
    D = np.ones(nv)
    E = np.ones(m)
    A = data.A.copy()
    P = data.P.copy()
    for _ in range(iters):
        col = np.maximum(np.max(np.abs(A), axis=0, initial=0.0), np.max(np.abs(P), axis=0, initial=0.0))
        row = np.max(np.abs(A), axis=1, initial=0.0)
        for sl, *_ in data.psd_slices:
            row[sl] = np.max(row[sl])
        d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        e = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
        P = d[:, None] * P * d[None, :]
        A = e[:, None] * A * d[None, :]
        D *= d
        E *= e
    c = D * data.c
    pnorm = np.mean(np.max(np.abs(P), axis=0)) if nv else 0.0
    cost = 1.0 / np.clip(max(pnorm, _inf_norm(c)), 1e-4, 1e4)
    scaled = copy.copy(data)
    scaled.A = A
    scaled.P = cost * P
    scaled.c = cost * c
    scaled.lo = E * data.lo
    scaled.hi = E * data.hi
    return scaled, D, E, cost


def solve(program: ConicProgram, options: SolverOptions | None = None, **overrides) -> ConicSolution:
    """Solve a :class:`ConicProgram` by over-relaxed ADMM.

    Returns a :class:`ConicSolution` whose ``status`` is ``Optimal`` when
    primal residual, dual residual and duality gap all meet ``tol``
    (absolute plus relative), ``Infeasible`` when a separating dual ray was
    found, and ``MaxIterations`` otherwise. Callers must inspect ``status``.
    """
    opts = options or SolverOptions()
    if overrides:
        opts = SolverOptions(**{**opts.__dict__, **overrides})
    data = _Assembled(program)
    sdata, D, E, cost = _equilibrate(data, opts.scaling_iters)
    A, P, c = sdata.A, sdata.P, sdata.c
    m, nv = A.shape
    tol = opts.tol
    alpha = opts.over_relaxation

    def unscale(xs, zs, ys):
        return D * xs, zs / E, E * ys / cost

    x = np.zeros(nv)
    z = sdata.project(np.zeros(m))
    y = np.zeros(m)
    rho_base = opts.rho
    interior_first = opts.strategy == "interior-first" and not program.quadratic
    if interior_first:
        measure = lambda xv, yv: _residuals(data, xv, data.project(data.A @ xv), yv)["converged_at"]  # noqa: E731
        ipm = interior_point(program, tol, opts.interior_max_iter, measure, _equality_repair(data))
        if ipm.converged:
            return _finish(program, data, Status.OPTIMAL, ipm.x, data.project(data.A @ ipm.x), ipm.row_duals,
                           ipm.iterations, None, "interior-point", opts, rho_base)
        if ipm.score <= 1e-3 and np.all(np.isfinite(ipm.x)) and np.all(np.isfinite(ipm.row_duals)):
            # warm start in the equilibrated variables; a poor iterate (for
            # instance from an infeasible program) would only slow ADMM's
            # own infeasibility detection, so those start cold
            x = ipm.x / D
            z = sdata.project(E * (data.A @ ipm.x))
            y = ipm.row_duals * cost / E
        ipm_iterations = ipm.iterations

    def rho_vec(base):
        r = np.full(m, base)
        r[data.is_eq] = 1e3 * base
        return r

    rho = rho_vec(rho_base)

    def factor(rho):
        K = P + opts.sigma * np.eye(nv) + (A.T * rho) @ A
        return cho_factor(K)

    fac = factor(rho)

    def step(x, z, y):
        x_tilde = cho_solve(fac, opts.sigma * x - c + A.T @ (rho * z - y))
        z_tilde = A @ x_tilde
        x_next = alpha * x_tilde + (1 - alpha) * x
        z_hat = alpha * z_tilde + (1 - alpha) * z
        z_next = sdata.project(z_hat + y / rho)
        y_next = y + rho * (z_hat - z_next)
        return x_next, z_next, y_next

    status = Status.MAX_ITERATIONS
    certificate = None
    res = {}
    it = 0
    adaptations = 0
    for it in range(1, opts.max_iter + 1):
        y_prev = y
        x, z, y = step(x, z, y)
        dy = y - y_prev

        if it % opts.check_every:
            continue
        res = _residuals(data, *unscale(x, z, y))
        if res["converged_at"] <= tol:
            status = Status.OPTIMAL
            break
        if it >= opts.infeasibility_after:
            cert = _infeasibility(data, E * dy, opts.infeasibility_tol)
            if cert is not None:
                status = Status.INFEASIBLE
                certificate = cert
                break
        if it % opts.adapt_every == 0 and adaptations < opts.max_adaptations:
            ratio = np.sqrt(res["prim_rel"] / max(res["dual_rel"], 1e-300))
            new_base = float(np.clip(rho_base * ratio, 1e-6, 1e6))
            if new_base > opts.adapt_threshold * rho_base or new_base < rho_base / opts.adapt_threshold:
                rho_base = new_base
                rho = rho_vec(rho_base)
                fac = factor(rho)
                adaptations += 1

    x, z, y = unscale(x, z, y)
    method = "admm"
    if interior_first:
        it += ipm_iterations
        method = "interior-point+admm"
    elif status is Status.MAX_ITERATIONS and opts.interior_fallback and not program.quadratic:
        measure = lambda xv, yv: _residuals(data, xv, data.project(data.A @ xv), yv)["converged_at"]  # noqa: E731
        ipm = interior_point(program, tol, opts.interior_max_iter, measure, _equality_repair(data))
        if ipm.converged:
            x, y = ipm.x, ipm.row_duals
            z = data.project(data.A @ x)
            status = Status.OPTIMAL
            method = "interior-point"
            it += ipm.iterations
    return _finish(program, data, status, x, z, y, it, certificate, method, opts, rho_base)


def _finish(program, data, status, x, z, y, it, certificate, method, opts, rho_base) -> ConicSolution:
    """Polish (linear programs only), score and package a solution in original variables."""
    P = data.P
    res = _residuals(data, x, z, y)
    polished = False
    if not data.psd_slices and opts.polish and status is not Status.INFEASIBLE:
        rho = np.full(len(data.lo), rho_base)
        rho[data.is_eq] = 1e3 * rho_base
        pol = _polish(data, x, z, y, rho)
        if pol is not None:
            px, pz, py, pres = pol
            if pres["converged_at"] <= max(opts.tol, res["converged_at"]):
                x, z, y, res = px, pz, py, pres
                polished = True
                if res["converged_at"] <= opts.tol:
                    status = Status.OPTIMAL

    pobj = float(0.5 * x @ P @ x + data.c @ x + data.constant)
    dobj = float(-0.5 * x @ P @ x - _support_finite(data, y) + data.constant)
    return ConicSolution(
        status=status,
        x=x,
        eq_duals=y[: data.n_eq].copy(),
        ineq_duals=y[data.n_eq : data.n_eq + data.n_in].copy(),
        objective=pobj,
        dual_objective=dobj,
        residuals={k: res[k] for k in ("primal", "dual", "gap")},
        iterations=it,
        certificate=certificate,
        polished=polished,
        method=method,
        _program=program,
    )


def solve_on_face(
    program: ConicProgram, block: PsdBlock, B, options: SolverOptions | None = None, **overrides
) -> ConicSolution:
    """Solve ``program`` with PSD ``block`` restricted to ``{B S B^T : S PSD}``.

    When every feasible value of the block is known to vanish on the
    orthogonal complement of ``range(B)`` (a linear consequence of the
    constraints), the restriction changes nothing about the feasible set
    but removes a direction along which no point is strictly feasible.
    Both solvers converge much faster on the restricted program. The
    returned solution is expressed in the variables of ``program``; rows
    that become identically zero are dropped and report zero multipliers.
    """
    B = np.asarray(B, dtype=float)
    if B.shape[0] != block.order:
        raise LayoutError("face basis has the wrong number of rows")
    if any(i in range(block.offset, block.offset + block.size) or j in range(block.offset, block.offset + block.size)
           for i, j, _ in program.quadratic):
        raise LayoutError("quadratic terms on a restricted block are not supported")
    reduced = ConicProgram()
    expand: dict[int, list[tuple[int, float]]] = {}
    new_block = None
    kinds = sorted(
        [(int(idx[0]), "free", len(idx)) for idx in program.free_blocks if len(idx)]
        + [(i, "nonneg", 1) for i in program.nonneg]
        + [(b.offset, "psd", b) for b in program.psd_blocks]
    )
    for start, kind, info in kinds:
        if kind == "free":
            for old, new in zip(range(start, start + info), reduced.add_free(info)):
                expand[old] = [(int(new), 1.0)]
        elif kind == "nonneg":
            expand[start] = [(int(reduced.add_nonneg(1)[0]), 1.0)]
        elif info == block:
            k = B.shape[1]
            new_block = reduced.add_psd(k)
            iu, ju = np.triu_indices(block.order)
            au, bu = np.triu_indices(k)
            # M_ij = sum_{a<=b} (B_ia B_jb + B_ib B_ja) S_ab, halved on the diagonal
            T = B[iu][:, au] * B[ju][:, bu] + B[iu][:, bu] * B[ju][:, au]
            T[:, au == bu] *= 0.5
            for row, old in enumerate(range(block.offset, block.offset + block.size)):
                nz = np.flatnonzero(np.abs(T[row]) > 1e-15)
                expand[old] = [(new_block.offset + int(c), float(T[row, c])) for c in nz]
        else:
            nb = reduced.add_psd(info.order)
            for k in range(info.size):
                expand[info.offset + k] = [(nb.offset + k, 1.0)]

    def mapped(terms):
        out: dict[int, float] = {}
        for idx, c in terms:
            for new, w in expand[idx]:
                out[new] = out.get(new, 0.0) + c * w
        scale = max((abs(v) for v in out.values()), default=0.0)
        return {i: v for i, v in out.items() if abs(v) > 1e-14 * scale}

    eq_rows, in_rows = [], []
    for r, (terms, rhs) in enumerate(program.equalities):
        t = mapped(terms)
        if t or abs(rhs) > 1e-12:
            reduced.add_eq(t, rhs)
            eq_rows.append(r)
    for r, (terms, rhs) in enumerate(program.inequalities):
        t = mapped(terms)
        if t or rhs < 0:
            reduced.add_le(t, rhs)
            in_rows.append(r)
    reduced.set_objective(
        mapped(program.objective),
        program.constant,
        [(expand[i][0][0], expand[j][0][0], v) for i, j, v in program.quadratic],
    )
    sol = solve(reduced, options, **overrides)

    x = np.zeros(program.num_vars)
    for old, terms in expand.items():
        x[old] = sum(w * sol.x[new] for new, w in terms)
    eq_duals = np.zeros(len(program.equalities))
    eq_duals[eq_rows] = sol.eq_duals
    ineq_duals = np.zeros(len(program.inequalities))
    ineq_duals[in_rows] = sol.ineq_duals
    return ConicSolution(
        status=sol.status,
        x=x,
        eq_duals=eq_duals,
        ineq_duals=ineq_duals,
        objective=sol.objective,
        dual_objective=sol.dual_objective,
        residuals=sol.residuals,
        iterations=sol.iterations,
        certificate=sol.certificate,
        polished=sol.polished,
        method=sol.method,
        _program=program,
    )



def _equality_repair(data: _Assembled):
    """Minimum-norm correction that makes the equality rows hold exactly.

    Interior-point iterates approach the affine constraints only
    asymptotically; with large multipliers that residual dominates the
    duality gap. Projecting onto the equality rows removes it.
    """
    A_eq = data.A[: data.n_eq]
    if not len(A_eq):
        return None
    pinv = np.linalg.pinv(A_eq, rcond=1e-12)
    b_eq = data.lo[: data.n_eq]
    return lambda x: x + pinv @ (b_eq - A_eq @ x)


def _support_finite(data: _Assembled, y: np.ndarray) -> float:
    # support value with infinite bounds contributing nothing; y sits in the
    # normal cone of C up to the residuals, so this is the usual dual value
    yb = y[data.box]
    hi = np.where(np.isfinite(data.hi[data.box]), data.hi[data.box], 0.0)
    lo = np.where(np.isfinite(data.lo[data.box]), data.lo[data.box], 0.0)
    return float(hi @ np.maximum(yb, 0.0) + lo @ np.minimum(yb, 0.0))


def _residuals(data: _Assembled, x, z, y) -> dict:
    A, P, c = data.A, data.P, data.c
    Ax = A @ x
    Px = P @ x
    Aty = A.T @ y
    r_prim = _inf_norm(Ax - z)
    r_dual = _inf_norm(Px + c + Aty)
    pobj = 0.5 * x @ Px + c @ x
    dobj = -0.5 * x @ Px - _support_finite(data, y)
    gap = abs(pobj - dobj)
    prim_scale = max(_inf_norm(Ax), _inf_norm(z), 1.0)
    dual_scale = max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(c), 1.0)
    gap_scale = max(abs(pobj), abs(dobj), 1.0)
    return {
        "primal": r_prim,
        "dual": r_dual,
        "gap": float(gap),
        "prim_rel": r_prim / prim_scale,
        "dual_rel": r_dual / dual_scale,
        "converged_at": max(r_prim / prim_scale, r_dual / dual_scale, gap / gap_scale),
    }


def _infeasibility(data: _Assembled, dy: np.ndarray, eps: float):
    scale = _inf_norm(dy)
    if scale <= 1e-12:
        return None
    ray = dy / scale
    if _inf_norm(data.A.T @ ray) > eps:
        return None
    sup = data.support(ray)
    if sup < -eps:
        return {"ray": ray, "support": float(sup)}
    return None


def _polish(data: _Assembled, x, z, y, rho):
    """Guess the active set from (z, y), then solve the equality-constrained QP."""
    lo, hi = data.lo, data.hi
    lower = (z - lo < -y / rho) & np.isfinite(lo)
    upper = (hi - z < y / rho) & np.isfinite(hi)
    act = data.is_eq | lower | upper
    A_act = data.A[act]
    b_act = np.where(upper[act] | data.is_eq[act], hi[act], lo[act])
    nv = data.A.shape[1]
    k = A_act.shape[0]
    K = np.block([[data.P, A_act.T], [A_act, np.zeros((k, k))]])
    rhs = np.concatenate([-data.c, b_act])
    sol = np.linalg.lstsq(K, rhs, rcond=1e-12)[0]
    px = sol[:nv]
    py = np.zeros_like(y)
    py[act] = sol[nv:]
    # sign-infeasible multipliers mean the guess was wrong
    if np.any(py[upper & ~data.is_eq] < -1e-9) or np.any(py[lower & ~data.is_eq] > 1e-9):
        return None
    pz = data.project(data.A @ px)
    return px, pz, py, _residuals(data, px, pz, py)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("expected a nonempty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    cond = u - css / k > 0
    r = k[cond][-1]
    theta = css[r - 1] / r
    return np.maximum(v - theta, 0.0)


def solve_qp(G, a, C_eq=None, d_eq=None, C_in=None, d_in=None, tol: float = 1e-12, max_iter: int = 500):
    """Minimise ``1/2 x^T G x + a^T x`` s.t. ``C_eq x = d_eq``, ``C_in x <= d_in``.

    Dual active-set method of Goldfarb and Idnani with direct KKT solves;
    ``G`` must be positive definite. Dependent equality rows are tolerated.

    Returns ``(x, lam, mu)`` with ``G x + a + C_eq^T lam + C_in^T mu = 0``
    and ``mu >= 0``. Raises :class:`InfeasibleQP` when the constraints are
    inconsistent.
    """
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    n = a.size
    C_eq = np.zeros((0, n)) if C_eq is None else np.atleast_2d(np.asarray(C_eq, dtype=float))
    d_eq = np.zeros(0) if d_eq is None else np.atleast_1d(np.asarray(d_eq, dtype=float))
    C_in = np.zeros((0, n)) if C_in is None else np.atleast_2d(np.asarray(C_in, dtype=float))
    d_in = np.zeros(0) if d_in is None else np.atleast_1d(np.asarray(d_in, dtype=float))
    C_eq = C_eq.reshape(-1, n)
    C_in = C_in.reshape(-1, n)

    # reduce the equality system to independent rows
    E, e, keep = _independent_rows(C_eq, d_eq)
    q = E.shape[0]
    r = C_in.shape[0]

    def kkt(active):
        rows = np.vstack([E, C_in[active]]) if active else E
        k = rows.shape[0]
        K = np.block([[G, rows.T], [rows, np.zeros((k, k))]])
        return K, rows

    # start: equality-constrained minimiser
    K, rows = kkt([])
    sol = np.linalg.solve(K, np.concatenate([-a, e])) if q else np.linalg.solve(G, -a)
    x = sol[:n]
    u_eq = sol[n:] if q else np.zeros(0)
    active: list[int] = []
    u_in: dict[int, float] = {}
    if q and _inf_norm(E @ x - e) > 1e-8 * (1 + _inf_norm(e)):
        raise InfeasibleQP("equality constraints inconsistent")

    scale = 1.0 + _inf_norm(d_in) + (_inf_norm(C_in) * _inf_norm(x) if r else 0.0)
    for _ in range(max_iter):
        if r == 0:
            break
        slack = C_in @ x - d_in
        slack[active] = -np.inf
        p = int(np.argmax(slack))
        if slack[p] <= tol * scale:
            break
        u_p = 0.0
        while True:
            K, rows = kkt(active)
            rhs = np.concatenate([-C_in[p], np.zeros(rows.shape[0])])
            step = np.linalg.lstsq(K, rhs, rcond=None)[0]
            z = step[:n]
            du = step[n:]  # derivative of active multipliers (eq first)
            du_in = du[q:]
            s_p = C_in[p] @ x - d_in[p]
            nz = C_in[p] @ z
            t1 = -s_p / nz if nz < -1e-14 * (1 + _inf_norm(C_in[p]) ** 2) else np.inf
            t2, drop = np.inf, None
            for idx, k in enumerate(active):
                if du_in[idx] < -1e-14:
                    t = -u_in[k] / du_in[idx]
                    if t < t2:
                        t2, drop = t, k
            if not np.isfinite(t1) and not np.isfinite(t2):
                raise InfeasibleQP(f"inequality {p} cannot be satisfied")
            t = min(t1, t2)
            x = x + t * z
            u_eq = u_eq + t * du[:q]
            for idx, k in enumerate(active):
                u_in[k] += t * du_in[idx]
            u_p += t
            if t2 < t1:
                active.remove(drop)
                del u_in[drop]
                continue
            active.append(p)
            u_in[p] = u_p
            break
    else:
        raise InfeasibleQP("active-set iteration limit reached")

    lam = np.zeros(C_eq.shape[0])
    if q:
        # express the multipliers on the original (possibly redundant) rows
        lam[keep] = u_eq
    mu = np.zeros(r)
    for k, v in u_in.items():
        mu[k] = max(v, 0.0)
    return x, lam, mu


def _independent_rows(C, d, tol: float = 1e-10):
    if C.shape[0] == 0:
        return C, d, np.zeros(0, dtype=int)
    keep: list[int] = []
    basis = np.zeros((0, C.shape[1]))
    for i, row in enumerate(C):
        norm = np.linalg.norm(row)
        if norm <= tol:
            if abs(d[i]) > 1e-8:
                raise InfeasibleQP("zero equality row with nonzero right-hand side")
            continue
        if basis.shape[0]:
            coef = np.linalg.lstsq(basis.T, row, rcond=None)[0]
            if np.linalg.norm(basis.T @ coef - row) <= tol * norm * 1e2:
                continue
        keep.append(i)
        basis = np.vstack([basis, row])
    keep_arr = np.array(keep, dtype=int)
    return C[keep_arr], d[keep_arr], keep_arr
