"""Small dense symmetric linear algebra.

Matrices handled here are tiny (order well under 100), so the routines favour
simple, deterministic code over raw speed. Symmetric matrices are passed around
as dense ``numpy`` arrays; :class:`SymMatrix` provides the packed upper-triangle
storage used to address moment-matrix entries.

Packed index map
----------------
Entry ``(i, j)`` with ``i <= j`` of an order-``N`` symmetric matrix lives at
position ``i*N - i*(i-1)//2 + (j - i)`` of the packed vector (upper triangle,
row-major). :func:`packed_index` is the single source of truth for this map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "NoConvergence",
    "NotPositiveDefinite",
    "SymMatrix",
    "EigDecomposition",
    "packed_index",
    "packed_size",
    "eig_sym",
    "cholesky",
    "solve_spd",
    "psd_project",
]


class NoConvergence(ArithmeticError):
    pass


class NotPositiveDefinite(ArithmeticError):
    """Raised by :func:`cholesky` when a pivot is not strictly positive.

    ``pivot`` is the zero-based index of the failing diagonal entry.
    """

    def __init__(self, pivot: int, value: float):
        super().__init__(f"matrix not positive definite (pivot {pivot}: {value:.3e})")
        self.pivot = pivot
        self.value = value


def packed_size(order: int) -> int:
    return order * (order + 1) // 2


def packed_index(i: int, j: int, order: int) -> int:
    if i > j:
        i, j = j, i
    if not (0 <= i and j < order):
        raise IndexError(f"entry ({i}, {j}) outside order-{order} matrix")
    return i * order - i * (i - 1) // 2 + (j - i)


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric matrix in packed upper-triangle row-major storage."""

    order: int
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if entries.shape != (packed_size(self.order),):
            raise ValueError(
                f"expected {packed_size(self.order)} packed entries, got {entries.shape}"
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_dense(cls, A) -> "SymMatrix":
        A = np.asarray(A, dtype=float)
        iu = np.triu_indices(A.shape[0])
        return cls(A.shape[0], 0.5 * (A + A.T)[iu])

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.order, self.order))
        iu = np.triu_indices(self.order)
        A[iu] = self.entries
        return A + np.triu(A, 1).T

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[packed_index(i, j, self.order)]


def _dense(A) -> np.ndarray:
    if isinstance(A, SymMatrix):
        return A.to_dense()
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    return A


@dataclass(frozen=True)
class EigDecomposition:
    values: np.ndarray  # ascending
    vectors: np.ndarray  # columns are eigenvectors

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def eig_sym(A, tol: float = 1e-12, max_sweeps: int = 100) -> EigDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all off-diagonal pairs until the off-diagonal Frobenius norm
    drops below ``tol * ||A||_F``. Eigenvalues are returned ascending; within a
    cluster of equal eigenvalues the vectors are ordered lexicographically
    after fixing each vector's sign (first nonzero component positive), which
    keeps the output reproducible.

    Raises
    ------
    NoConvergence
        If ``max_sweeps`` sweeps do not reach the tolerance.
    """
    A = _dense(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if n == 1 or scale == 0.0:
        return _sorted_eig(np.diag(A).copy(), V)

    threshold = tol * scale
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/columns p and q
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off > threshold:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    return _sorted_eig(np.diag(A).copy(), V)


def _sorted_eig(values: np.ndarray, V: np.ndarray) -> EigDecomposition:
    n = len(values)
    V = V.copy()
    for k in range(n):
        nz = np.flatnonzero(np.abs(V[:, k]) > 1e-14)
        if nz.size and V[nz[0], k] < 0:
            V[:, k] = -V[:, k]
    scale = max(np.max(np.abs(values)), 1.0)
    # group near-equal eigenvalues, then order each group lexicographically
    order = list(np.argsort(values, kind="stable"))
    result = []
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and values[order[stop]] - values[order[start]] <= 1e-12 * scale:
            stop += 1
        cluster = order[start:stop]
        cluster.sort(key=lambda k: tuple(-V[:, k]))
        result.extend(cluster)
        start = stop
    idx = np.array(result, dtype=int)
    return EigDecomposition(values[idx], V[:, idx])


def cholesky(A) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == A``.

    Raises :class:`NotPositiveDefinite` carrying the failing pivot index.
    """
    A = _dense(A)
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise NotPositiveDefinite(j, d)
        L[j, j] = np.sqrt(d)
        L[j + 1 :, j] = (A[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_spd(A, b) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Uses LAPACK's Cholesky factorisation; on failure the pure routine above
    is rerun to report which pivot broke.
    """
    A = _dense(A)
    b = np.asarray(b, dtype=float)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        cholesky(A)  # raises NotPositiveDefinite with the pivot index
        raise NotPositiveDefinite(-1, float("nan"))
    z = solve_triangular(L, b, lower=True)
    return solve_triangular(L.T, z, lower=False)


def psd_project(A) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix, ``V diag(max(w, 0)) V^T``."""
    A = _dense(A)
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    if w[0] >= 0.0:
        return 0.5 * (A + A.T)
    w = np.maximum(w, 0.0)
    return (V * w) @ V.T
