"""Primal-dual interior-point method for linear conic programs.

Used by :func:`projgm.conic.solve` first under the ``"interior-first"``
strategy, and as the fallback when ADMM reaches its iteration limit on a
program with a linear objective. The method is the infeasible
path-following scheme with the Nesterov-Todd search direction and Mehrotra's
predictor-corrector, applied to the standard form

    minimize    <C, X> + c_l^T x_l
    subject to  A(X) + A_l x_l = b,   X PSD,   x_l >= 0.

Inequalities receive nonnegative slacks and free variables are split into a
difference of two nonnegative ones. The problems solved here have at most a
few hundred constraints, so everything is dense.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, qr

_SQRT2 = np.sqrt(2.0)


@dataclass
class IpmResult:
    converged: bool
    x: np.ndarray  # original variable vector
    row_duals: np.ndarray  # one per row of the ADMM layout (eq | ineq | nonneg | psd)
    iterations: int
    score: float = np.inf  # best value of the scoring metric


class _Standard:
    """Standard-form data built from a :class:`~projgm.conic.ConicProgram`."""

    def __init__(self, prog):
        n_eq, n_in = len(prog.equalities), len(prog.inequalities)
        self.m = n_eq + n_in
        self.blocks = prog.psd_blocks
        # LP columns: (original variable or -1 for a slack, sign)
        cols: list[tuple[int, float]] = [(int(i), 1.0) for i in prog.nonneg]
        psd_vars = set()
        for blk in self.blocks:
            psd_vars.update(range(blk.offset, blk.offset + blk.size))
        nonneg = set(prog.nonneg)
        self.free = [i for i in range(prog.num_vars) if i not in psd_vars and i not in nonneg]
        for i in self.free:
            cols.append((i, 1.0))
            cols.append((i, -1.0))
        self.n_split = 2 * len(self.free)
        self.n_nonneg = len(prog.nonneg)
        cols.extend((-1, 1.0) for _ in range(n_in))
        self.cols = cols
        lp_of: dict[int, list[tuple[int, float]]] = {}
        for k, (i, sgn) in enumerate(cols):
            if i >= 0:
                lp_of.setdefault(i, []).append((k, sgn))
        # variable -> (block number, i, j)
        self.where: dict[int, tuple[int, int, int]] = {}
        for b, blk in enumerate(self.blocks):
            iu, ju = np.triu_indices(blk.order)
            for k, (i, j) in enumerate(zip(iu, ju)):
                self.where[blk.offset + k] = (b, int(i), int(j))

        self.As = [np.zeros((self.m, blk.order, blk.order)) for blk in self.blocks]
        self.Al = np.zeros((self.m, len(cols)))
        self.b = np.zeros(self.m)

        def put(row, terms, target_mats, target_vec):
            for idx, c in terms:
                if idx in self.where:
                    b, i, j = self.where[idx]
                    if i == j:
                        target_mats[b][row, i, i] += c
                    else:
                        target_mats[b][row, i, j] += 0.5 * c
                        target_mats[b][row, j, i] += 0.5 * c
                else:
                    for k, sgn in lp_of[idx]:
                        target_vec[row, k] += sgn * c

        rows = list(prog.equalities) + list(prog.inequalities)
        for r, (terms, rhs) in enumerate(rows):
            put(r, terms, self.As, self.Al)
            self.b[r] = rhs
        for t in range(n_in):
            self.Al[n_eq + t, len(cols) - n_in + t] = 1.0
        Cs = [np.zeros((1, blk.order, blk.order)) for blk in self.blocks]
        cl = np.zeros((1, len(cols)))
        put(0, prog.objective, Cs, cl)
        self.Cs = [C[0] for C in Cs]
        self.cl = cl[0]
        self.n_eq, self.n_in = n_eq, n_in
        self.num_vars = prog.num_vars
        self._drop_dependent_equalities()

    def _drop_dependent_equalities(self):
        """Keep a maximal independent subset of the equality rows.

        The Schur complement is singular otherwise. Dropped rows get zero
        multipliers; ``self.rows`` maps the kept rows back to the original
        numbering.
        """
        n_eq = self.n_eq
        self.rows = np.arange(self.m)
        if n_eq == 0:
            return
        F = np.hstack([A[:n_eq].reshape(n_eq, -1) for A in self.As] + [self.Al[:n_eq]])
        _, R, piv = qr(F.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-10 * max(diag.max(initial=0.0), 1.0)))
        if rank == n_eq:
            return
        keep = np.concatenate([np.sort(piv[:rank]), np.arange(n_eq, self.m)])
        self.rows = keep
        self.As = [A[keep] for A in self.As]
        self.Al = self.Al[keep]
        self.b = self.b[keep]
        self.m = len(keep)

    def op(self, Xs, xl):
        out = self.Al @ xl
        for A, X in zip(self.As, Xs):
            out = out + np.einsum("kij,ij->k", A, X)
        return out

    def adj(self, y):
        return [np.einsum("k,kij->ij", y, A) for A in self.As], self.Al.T @ y


def _max_step(X, dX):
    """Largest ``t`` with ``X + t dX`` PSD (``inf`` if unbounded)."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Linv = np.linalg.inv(L)
    w = np.linalg.eigvalsh(Linv @ dX @ Linv.T)
    return np.inf if w[0] >= 0 else -1.0 / w[0]


def _max_step_lp(x, dx):
    neg = dx < 0
    return np.min(-x[neg] / dx[neg]) if np.any(neg) else np.inf


def _nt_scaling(X, Z):
    """Nesterov-Todd scaling ``W = G G^T`` with ``G^{-1} X G^{-T} = G^T Z G = diag(d)``."""
    L = np.linalg.cholesky(X)
    R = np.linalg.cholesky(Z)
    U, d, Vt = np.linalg.svd(R.T @ L)
    G = L @ Vt.T / np.sqrt(d)
    Ginv = (np.sqrt(d)[:, None] * Vt) @ np.linalg.inv(L)
    return G @ G.T, G, Ginv, d


def _schur_solver(M):
    """Solver for the Schur system with two steps of iterative refinement.

    Near a degenerate optimum (redundant constraints active together) the
    Schur complement becomes singular. If Cholesky fails, the solve falls
    back to the spectral pseudo-inverse, which returns the least-norm
    direction for the consistent part of the right-hand side.
    """
    try:
        fac = cho_factor(M)
        base = lambda r: cho_solve(fac, r)  # noqa: E731
    except LinAlgError:
        w, V = np.linalg.eigh(M)
        if not np.all(np.isfinite(w)) or w[-1] <= 0:
            raise LinAlgError("Schur complement is not positive semidefinite")
        keep = w > 1e-13 * w[-1]
        Vk, wk = V[:, keep], w[keep]
        base = lambda r: Vk @ ((Vk.T @ r) / wk)  # noqa: E731

    def solve(r):
        d = base(r)
        for _ in range(2):
            d = d + base(r - M @ d)
        return d

    return solve


def interior_point(
    prog, tol: float = 1e-8, max_iter: int = 100, measure=None, repair=None, patience: int = 5
) -> IpmResult:
    """Run the path-following method on ``prog``.

    ``measure(x, row_duals)`` scores an iterate in the caller's own residual
    metric; the best-scoring iterate is returned, the run stops once the
    score is at most ``tol`` or, after it has dropped below 1e-4, has not
    improved for ``patience`` iterations. Without ``measure`` the usual relative infeasibility and gap
    are used. ``repair(x)``, if given, maps each primal iterate (in the
    original variables) to a nearby point before it is scored.
    """
    S = _Standard(prog)
    m = S.m
    nl = len(S.cols)
    orders = [blk.order for blk in S.blocks]
    N = sum(orders) + nl
    normA = max([np.linalg.norm(A.reshape(m, -1), axis=1).max(initial=0.0) for A in S.As] + [np.abs(S.Al).max(initial=0.0)])
    normC = max([np.linalg.norm(C) for C in S.Cs] + [np.linalg.norm(S.cl)])
    xi = max(10.0, np.sqrt(max(orders, default=1)), np.max(np.abs(S.b), initial=0.0) * 10.0)
    eta = max(10.0, np.sqrt(max(orders, default=1)), normA, normC)
    Xs = [xi * np.eye(k) for k in orders]
    Zs = [eta * np.eye(k) for k in orders]
    xl = np.full(nl, xi)
    zl = np.full(nl, eta)
    y = np.zeros(m)
    nb = 1.0 + np.linalg.norm(S.b)
    nc = 1.0 + normC

    # Gram matrix of the constraint map, for restoring A(dX) = rp when the
    # scaled Schur solve loses accuracy in the endgame
    gram = S.Al @ S.Al.T
    for A in S.As:
        F = A.reshape(m, -1)
        gram = gram + F @ F.T
    gram_pinv = np.linalg.pinv(gram, rcond=1e-12, hermitian=True)

    best = (np.inf, None, None, 0)
    stale = 0
    it = 0
    for it in range(1, max_iter + 1):
        # diverging iterates (an infeasible program) may overflow here
        with np.errstate(over="ignore", invalid="ignore"):
            rp = S.b - S.op(Xs, xl)
            At_y, Alt_y = S.adj(y)
            Rd = [C - Ay - Z for C, Ay, Z in zip(S.Cs, At_y, Zs)]
            rdl = S.cl - Alt_y - zl
            gap = sum(np.sum(X * Z) for X, Z in zip(Xs, Zs)) + xl @ zl
            mu = gap / N
            pobj = sum(np.sum(C * X) for C, X in zip(S.Cs, Xs)) + S.cl @ xl
            dobj = S.b @ y
            p_inf = np.linalg.norm(rp) / nb
            d_inf = np.sqrt(sum(np.sum(R * R) for R in Rd) + rdl @ rdl) / nc
            rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        if not np.all(np.isfinite([pobj, dobj, mu, p_inf, d_inf])):
            break
        x_orig, duals = _to_original(S, Xs, xl), _row_duals(S, y, Zs, zl)
        if repair is not None:
            x_orig = repair(x_orig)
        score = measure(x_orig, duals) if measure else max(p_inf, d_inf, rel_gap)
        if score < best[0]:
            best, stale = (score, x_orig, duals, it), 0
        elif best[0] < 1e-4:  # only count stagnation in the endgame
            stale += 1
        if score <= tol or stale >= patience:
            break

        try:
            nt = [_nt_scaling(X, Z) for X, Z in zip(Xs, Zs)]
        except np.linalg.LinAlgError:
            break
        Ws = [w[0] for w in nt]
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            D = xl / zl
            Msch = (S.Al * D) @ S.Al.T
            for A, W in zip(S.As, Ws):
                T = W @ A @ W  # (m, k, k) batched
                Msch += A.reshape(m, -1) @ T.reshape(m, -1).T
        if not np.all(np.isfinite(Msch)):
            # diverging iterates (typically an infeasible program)
            break
        Msch = 0.5 * (Msch + Msch.T)
        try:
            solve_m = _schur_solver(Msch)
        except LinAlgError:
            break
        WRW = [W @ R @ W for W, R in zip(Ws, Rd)]

        def direction(Rc, gl):
            # Delta X = Rc - W Delta Z W, Delta x_l = gl - D Delta z_l
            rhs = rp - S.op(Rc, gl) + S.op(WRW, D * rdl)
            dy = solve_m(rhs)
            Ady, Aldy = S.adj(dy)
            dZ = [R - Ay for R, Ay in zip(Rd, Ady)]
            dzl = rdl - Aldy
            dX = []
            for Rcb, W, dZb in zip(Rc, Ws, dZ):
                V = Rcb - W @ dZb @ W
                dX.append(0.5 * (V + V.T))
            dxl = gl - D * dzl
            # minimum-norm correction back onto the linearised equality rows
            lam = gram_pinv @ (rp - S.op(dX, dxl))
            Alam, Allam = S.adj(lam)
            dX = [d + a for d, a in zip(dX, Alam)]
            dxl = dxl + Allam
            return dX, dxl, dy, dZ, dzl

        def steps(dX, dxl, dZ, dzl):
            ap = min([_max_step(X, d) for X, d in zip(Xs, dX)] + [_max_step_lp(xl, dxl)])
            ad = min([_max_step(Z, d) for Z, d in zip(Zs, dZ)] + [_max_step_lp(zl, dzl)])
            return ap, ad

        try:
            # predictor: the affine-scaling target X -> 0 gives Rc = -X
            dX, dxl, dy, dZ, dzl = direction([-X for X in Xs], -xl)
            ap, ad = steps(dX, dxl, dZ, dzl)
            ap, ad = min(1.0, ap), min(1.0, ad)
            gap_aff = sum(np.sum((X + ap * a) * (Z + ad * b)) for X, a, Z, b in zip(Xs, dX, Zs, dZ))
            gap_aff += (xl + ap * dxl) @ (zl + ad * dzl)
            sigma = min(1.0, (gap_aff / gap) ** 3)
            # corrector, solved in the scaled space where X and Z both equal diag(d)
            Rc = []
            for (W, G, Ginv, d), a, b in zip(nt, dX, dZ):
                ax = Ginv @ a @ Ginv.T
                bz = G.T @ b @ G
                cross = ax @ bz
                rhs = 2.0 * sigma * mu * np.eye(len(d)) - 2.0 * np.diag(d * d) - (cross + cross.T)
                H = rhs / (d[:, None] + d[None, :])
                Rc.append(G @ H @ G.T)
            gl = sigma * mu / zl - xl - dxl * dzl / zl
            dX, dxl, dy, dZ, dzl = direction(Rc, gl)
            if not all(np.all(np.isfinite(v)) for v in (*dX, dxl, dy, *dZ, dzl)):
                raise FloatingPointError
        except (LinAlgError, ValueError, FloatingPointError):
            # the Schur system has lost all accuracy: keep the best iterate so far
            break
        ap, ad = steps(dX, dxl, dZ, dzl)
        tau = 0.98
        ap, ad = min(1.0, tau * ap), min(1.0, tau * ad)
        Xs = [X + ap * d for X, d in zip(Xs, dX)]
        xl = xl + ap * dxl
        y = y + ad * dy
        Zs = [Z + ad * d for Z, d in zip(Zs, dZ)]
        zl = zl + ad * dzl
        # keep split free variables from drifting apart together
        if S.n_split:
            s0 = S.n_nonneg
            pos, neg = xl[s0 : s0 + S.n_split : 2], xl[s0 + 1 : s0 + S.n_split : 2]
            shift = 0.5 * np.minimum(pos, neg)
            xl[s0 : s0 + S.n_split : 2] -= shift
            xl[s0 + 1 : s0 + S.n_split : 2] -= shift

    if best[1] is None:
        return IpmResult(False, _to_original(S, Xs, xl), _row_duals(S, y, Zs, zl), it)
    return IpmResult(best[0] <= tol, best[1], best[2], it, best[0])


def _to_original(S: _Standard, Xs, xl) -> np.ndarray:
    x = np.zeros(S.num_vars)
    for b, blk in enumerate(S.blocks):
        iu = np.triu_indices(blk.order)
        x[blk.offset : blk.offset + blk.size] = Xs[b][iu]
    for k, (i, sgn) in enumerate(S.cols):
        if i >= 0:
            x[i] += sgn * xl[k]
    return x


def _row_duals(S: _Standard, y, Zs, zl) -> np.ndarray:
    """Duals in the sign convention ``c + A^T y = 0`` of the ADMM layout."""
    y_full = np.zeros(S.n_eq + S.n_in)
    y_full[S.rows] = y
    parts = [-y_full[: S.n_eq], -y_full[S.n_eq :], -zl[: S.n_nonneg]]
    for b, blk in enumerate(S.blocks):
        iu, ju = np.triu_indices(blk.order)
        Z = Zs[b]
        parts.append(-np.where(iu == ju, Z[iu, ju], _SQRT2 * Z[iu, ju]))
    return np.concatenate(parts)
