"""Problem data for projection onto global minimizers.

A problem is a dictionary of convex quadratics ``f_j(x) = x^T Q_j x / 2 +
phi_j^T x`` (constants dropped), an optional polytope ``X`` and a test point
``y``. Everything is immutable once built.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .densela import eig_sym, solve_spd

__all__ = [
    "SYMMETRY_REPAIR_TOL",
    "PSD_CLAMP_TOL",
    "MEMBERSHIP_TOL",
    "SingularCurvature",
    "InfeasiblePoint",
    "SolverFailure",
    "InfeasibleBasis",
    "Mode",
    "QuadraticFunction",
    "Polytope",
    "ProblemInstance",
    "SimplexWeights",
    "KktPoint",
    "BoundsReport",
    "Violation",
    "validate",
    "slater_margin",
    "to_center_form",
    "from_center_form",
]

SYMMETRY_REPAIR_TOL = 1e-8
PSD_CLAMP_TOL = 1e-10
PD_TOL = 1e-10
SLATER_TOL = 1e-9
MEMBERSHIP_TOL = 1e-7
SIMPLEX_TOL = 1e-10


class SingularCurvature(ArithmeticError):
    pass


class InfeasiblePoint(ValueError):
    pass


class SolverFailure(RuntimeError):
    """A convex subproblem did not reach its tolerance.

    ``diagnostics`` carries the solver's status, iteration count and
    terminal residuals.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InfeasibleBasis(Exception):
    """The lifted optimality conditions admit no solution.

    Carries the solver's separating dual ray in ``certificate``.
    """

    def __init__(self, message: str, certificate: dict):
        super().__init__(message)
        self.certificate = certificate


class Mode(str, enum.Enum):
    UNCONSTRAINED = "unconstrained"
    CONSTRAINED = "constrained"


def _frozen(a, ndim: int | None = None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if ndim is not None and a.ndim != ndim:
        if ndim == 2 and a.size == 0:
            a = a.reshape(0, 0)
        else:
            raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


def _asymmetry(Q: np.ndarray) -> float:
    if Q.size == 0 or not np.all(np.isfinite(Q)):
        return 0.0  # non-finite entries are reported by validate separately
    return float(np.max(np.abs(Q - Q.T)) / max(1.0, np.max(np.abs(Q))))


@dataclass(frozen=True)
class QuadraticFunction:
    """``f(x) = x^T Q x / 2 + phi^T x``.

    ``center`` is set when the function was given in center form
    ``(x - center)^T Q (x - center) / 2``; then ``phi == -Q @ center``.
    Slightly asymmetric ``Q`` (relative asymmetry up to 1e-8) is symmetrised.
    """

    Q: np.ndarray
    phi: np.ndarray
    center: np.ndarray | None = None

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2:
            raise ValueError("Q must be a matrix")
        if Q.shape[0] == Q.shape[1] and _asymmetry(Q) <= SYMMETRY_REPAIR_TOL:
            Q = 0.5 * (Q + Q.T)
        object.__setattr__(self, "Q", _frozen(Q))
        object.__setattr__(self, "phi", _frozen(self.phi, 1))
        if self.center is not None:
            object.__setattr__(self, "center", _frozen(self.center, 1))

    @classmethod
    def from_center(cls, Q, center) -> "QuadraticFunction":
        Q = np.asarray(Q, dtype=float)
        center = np.asarray(center, dtype=float)
        return cls(Q, -0.5 * (Q + Q.T) @ center, center)

    @property
    def n(self) -> int:
        return self.phi.size

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.phi @ x)

    def gradient(self, x) -> np.ndarray:
        return self.Q @ np.asarray(x, dtype=float) + self.phi


def to_center_form(f: QuadraticFunction) -> QuadraticFunction:
    """Rewrite ``f`` around its unique minimiser ``x_f = -Q^{-1} phi``."""
    lam_min = eig_sym(f.Q).values[0]
    if lam_min < PD_TOL:
        raise SingularCurvature(f"curvature has eigenvalue {lam_min:.3e}; center not unique")
    center = solve_spd(f.Q, -f.phi)
    return QuadraticFunction(f.Q, f.phi, center)


def from_center_form(f: QuadraticFunction) -> QuadraticFunction:
    """Drop the center, keeping the ``(Q, phi)`` description."""
    if f.center is None:
        return f
    return QuadraticFunction(f.Q, -f.Q @ f.center)


@dataclass(frozen=True)
class Polytope:
    """``X = {x : A_eq x = b_eq, A x <= b}``; either block may be empty."""

    A_eq: np.ndarray
    b_eq: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ("A_eq", "A"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2))
        for name in ("b_eq", "b"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 1))
        # give an empty block the column count of the other one
        cols = max(self.A_eq.shape[1], self.A.shape[1])
        for name in ("A_eq", "A"):
            M = getattr(self, name)
            if M.shape[0] == 0 and M.shape[1] != cols:
                object.__setattr__(self, name, _frozen(np.zeros((0, cols)), 2))

    @classmethod
    def from_inequalities(cls, A, b, A_eq=None, b_eq=None) -> "Polytope":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[1]
        if A_eq is None:
            A_eq, b_eq = np.zeros((0, n)), np.zeros(0)
        return cls(np.atleast_2d(A_eq).reshape(-1, n), b_eq, A, b)

    @property
    def q(self) -> int:
        return self.A_eq.shape[0]

    @property
    def r(self) -> int:
        return self.A.shape[0]

    def violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = 0.0
        if self.q:
            v = max(v, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        if self.r:
            v = max(v, float(np.max(self.A @ x - self.b)))
        return max(v, 0.0)


@dataclass(frozen=True)
class SimplexWeights:
    """A point of the probability simplex."""

    alpha: np.ndarray

    def __post_init__(self):
        a = _frozen(self.alpha, 1)
        if a.size < 1:
            raise ValueError("simplex weights need at least one entry")
        if np.any(a < -SIMPLEX_TOL) or abs(a.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"not a point of the simplex: {a}")
        object.__setattr__(self, "alpha", a)

    @classmethod
    def project(cls, v) -> "SimplexWeights":
        return cls(conic.project_simplex(v))

    @classmethod
    def vertex(cls, j: int, m: int) -> "SimplexWeights":
        return cls(np.eye(m)[j])

    @classmethod
    def uniform(cls, m: int) -> "SimplexWeights":
        return cls(np.full(m, 1.0 / m))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.alpha, dtype=dtype)

    def __len__(self):
        return self.alpha.size


def as_alpha(alpha) -> np.ndarray:
    if isinstance(alpha, SimplexWeights):
        return np.asarray(alpha.alpha)
    return np.asarray(alpha, dtype=float)


@dataclass(frozen=True)
class ProblemInstance:
    """Quadratic dictionary, optional polytope and test point.

    In constrained mode, curvature eigenvalues in ``[-1e-10, 0)`` are clamped
    to zero on construction.
    """

    basis: tuple
    y: np.ndarray
    polytope: Polytope | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        basis = tuple(self.basis)
        object.__setattr__(self, "y", _frozen(self.y, 1))
        if self.polytope is not None:
            basis = tuple(_clamp_psd(f) for f in basis)
        object.__setattr__(self, "basis", basis)

    @property
    def mode(self) -> Mode:
        return Mode.CONSTRAINED if self.polytope is not None else Mode.UNCONSTRAINED

    @property
    def constrained(self) -> bool:
        return self.polytope is not None

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def m(self) -> int:
        return len(self.basis)

    @functools.cached_property
    def Qs(self) -> np.ndarray:
        return _frozen(np.stack([f.Q for f in self.basis]))

    @functools.cached_property
    def phis(self) -> np.ndarray:
        return _frozen(np.stack([f.phi for f in self.basis]))

    @property
    def centers(self) -> np.ndarray:
        """Unconstrained minimisers ``x_j^f`` (requires PD curvatures)."""
        return np.stack(
            [f.center if f.center is not None else to_center_form(f).center for f in self.basis]
        )

    def with_y(self, y) -> "ProblemInstance":
        return ProblemInstance(self.basis, y, self.polytope, dict(self.metadata))


def _clamp_psd(f: QuadraticFunction) -> QuadraticFunction:
    if f.Q.shape[0] != f.Q.shape[1] or _asymmetry(f.Q) > SYMMETRY_REPAIR_TOL:
        return f
    w, V = np.linalg.eigh(f.Q)
    if w[0] >= 0.0 or w[0] < -PSD_CLAMP_TOL:
        return f
    Q = (V * np.maximum(w, 0.0)) @ V.T
    return QuadraticFunction(Q, f.phi, f.center)


@dataclass(frozen=True)
class KktPoint:
    """Candidate member ``(x, alpha, mu, lam)`` with its KKT residuals."""

    x: np.ndarray
    alpha: SimplexWeights
    mu: np.ndarray
    lam: np.ndarray
    residuals: dict

    @property
    def residual(self) -> float:
        return max(self.residuals.values())

    @property
    def is_member(self) -> bool:
        return self.residual <= MEMBERSHIP_TOL


@dataclass(frozen=True)
class BoundsReport:
    """Bracket ``p_low <= p* <= p_up`` of the squared distance to the optima set."""

    p_low: float
    p_up: float
    alpha_up: SimplexWeights
    x_up: np.ndarray
    rank1_certified: bool
    extracted: tuple | None
    solver_stats: dict
    mode: Mode = Mode.UNCONSTRAINED

    @property
    def sandwich_ok(self) -> bool:
        return self.p_low <= self.p_up + 1e-6 * (1.0 + self.p_up)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    index: int | None = None

    def __str__(self):
        return self.message


def slater_margin(polytope: Polytope, n: int) -> float:
    """Largest ``t <= 1`` with a point satisfying ``A_k x + t ||A_k|| <= b_k``.

    Returns ``-inf`` when the equality system is inconsistent.
    """
    prog = conic.ConicProgram()
    x = prog.add_free(n)
    t = prog.add_free(1)[0]
    for row, rhs in zip(polytope.A_eq, polytope.b_eq):
        prog.add_eq(dict(zip(x, row)), rhs)
    for row, rhs in zip(polytope.A, polytope.b):
        norm = float(np.linalg.norm(row))
        terms = dict(zip(x, row))
        terms[t] = norm if norm > 0 else 1.0
        prog.add_le(terms, rhs)
    prog.add_le({t: 1.0}, 1.0)
    prog.set_objective({t: -1.0})
    sol = conic.solve(prog)
    if sol.status is conic.Status.INFEASIBLE:
        return -np.inf
    if not sol.optimal:
        raise SolverFailure("Slater margin LP did not converge", {"status": sol.status.value})
    return float(sol.x[t])


def validate(instance: ProblemInstance) -> list[Violation]:
    """Every violated modelling assumption, in a stable order."""
    out: list[Violation] = []
    n, m = instance.n, instance.m
    if n < 1:
        out.append(Violation("dimension", "test point y must have n >= 1 entries"))
    if m < 1:
        out.append(Violation("dimension", "basis must contain m >= 1 functions"))
    if not np.all(np.isfinite(instance.y)):
        out.append(Violation("finite", "y has non-finite entries"))
    shapes_ok = True
    for j, f in enumerate(instance.basis, start=1):
        if f.Q.shape != (n, n) or f.phi.shape != (n,):
            out.append(Violation("dimension", f"Q_{j}/phi_{j} do not match n={n}", j))
            shapes_ok = False
            continue
        if not (np.all(np.isfinite(f.Q)) and np.all(np.isfinite(f.phi))):
            out.append(Violation("finite", f"f_{j} has non-finite entries", j))
            shapes_ok = False
            continue
        if _asymmetry(f.Q) > SYMMETRY_REPAIR_TOL:
            out.append(Violation("symmetry", f"Q_{j} is not symmetric", j))
            shapes_ok = False
            continue
        if f.center is not None:
            if f.center.shape != (n,) or not np.allclose(
                f.phi, -f.Q @ f.center, rtol=1e-10, atol=1e-10
            ):
                out.append(Violation("center", f"f_{j} center inconsistent with phi", j))
        lam = float(np.linalg.eigvalsh(f.Q)[0])
        scale = max(1.0, float(np.max(np.abs(f.Q))))
        if instance.constrained:
            if lam < -PSD_CLAMP_TOL * scale:
                out.append(Violation("psd", f"Q_{j} not PSD in constrained mode", j))
        elif lam <= PD_TOL * scale:
            out.append(Violation("pd", f"Q_{j} not PD in unconstrained mode", j))
    P = instance.polytope
    if P is not None and shapes_ok:
        if P.A_eq.shape != (P.q, n) and P.q or P.A.shape != (P.r, n) and P.r:
            out.append(Violation("dimension", "polytope matrices do not match n"))
        elif P.b_eq.shape != (P.q,) or P.b.shape != (P.r,):
            out.append(Violation("dimension", "polytope right-hand sides have wrong length"))
        elif not all(np.all(np.isfinite(a)) for a in (P.A_eq, P.b_eq, P.A, P.b)):
            out.append(Violation("finite", "polytope has non-finite entries"))
        else:
            margin = slater_margin(P, n)
            if margin == -np.inf:
                out.append(Violation("slater", "equality constraints are inconsistent"))
            elif margin <= 0:
                out.append(Violation("slater", f"Slater margin ≤ 0 (margin={margin:.6g})"))
            elif margin <= SLATER_TOL:
                out.append(Violation("slater", f"Slater margin {margin:.3g} below 1e-9"))
    return out
