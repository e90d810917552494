"""Brute-force ground truth for small instances.

Used only by the tests and the ``compare`` command so that no bound ever
depends on it. :func:`grid_distance` scans the simplex on a lattice and
zooms in around the incumbent; :func:`hull_distance` is an exact
enumeration for the identity-curvature case, where the optima set is the
convex hull of the centers.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import ProblemInstance, SimplexWeights, SolverFailure
from .optima import kappa_c, selection

__all__ = [
    "GridTooLarge",
    "GridSpec",
    "GridResult",
    "DEFAULT_MAX_GRID",
    "grid_size",
    "grid_distance",
    "hull_distance",
]

DEFAULT_MAX_GRID = 10**7
ZOOM = 5


class GridTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Lattice spacing and number of zoom rounds.

    ``resolution=None`` picks 0.02 for ``m <= 3`` and 0.05 otherwise. Each
    refine round shrinks the spacing five-fold and scans a window of one old
    spacing around the incumbent.
    """

    resolution: float | None = None
    refine_rounds: int = 2

    def spacing(self, m: int) -> float:
        res = self.resolution if self.resolution is not None else (0.02 if m <= 3 else 0.05)
        if not 0 < res <= 1:
            raise ValueError("resolution must lie in (0, 1]")
        return res


@dataclass(frozen=True)
class GridResult:
    p_grid: float
    alpha: SimplexWeights
    x: np.ndarray
    evaluations: int


def grid_size(m: int, K: int) -> int:
    return math.comb(m - 1 + K, m - 1)


def max_grid() -> int:
    raw = os.environ.get("PGM_MAX_GRID")
    return int(raw) if raw else DEFAULT_MAX_GRID


def _lattice(m: int, K: int) -> np.ndarray:
    """Integer compositions of ``K`` into ``m`` parts (stars and bars)."""
    rows = []
    for cut in itertools.combinations(range(K + m - 1), m - 1):
        bars = (-1,) + cut + (K + m - 1,)
        rows.append([bars[i + 1] - bars[i] - 1 for i in range(m)])
    return np.asarray(rows, dtype=np.int64)


def _window(m: int) -> np.ndarray:
    """Integer offsets ``d`` with ``sum(d) = 0`` and ``|d_j| <= ZOOM``."""
    free = np.array(list(itertools.product(range(-ZOOM, ZOOM + 1), repeat=m - 1)), dtype=np.int64)
    free = free.reshape(-1, m - 1)
    last = -free.sum(axis=1, keepdims=True)
    d = np.hstack([free, last])
    return d[np.abs(last[:, 0]) <= ZOOM]


def _evaluate(instance: ProblemInstance, alphas: np.ndarray):
    """Squared distances and optima for a batch of weights."""
    y = instance.y
    if not instance.constrained:
        Q = np.einsum("kj,jab->kab", alphas, instance.Qs)
        phi = alphas @ instance.phis
        X = -np.linalg.solve(Q, phi[..., None])[..., 0]
        return np.sum((X - y) ** 2, axis=1), X
    F = np.full(len(alphas), np.inf)
    X = np.zeros((len(alphas), instance.n))
    for i, a in enumerate(alphas):
        try:
            _, face = kappa_c(instance, a)
        except SolverFailure:
            continue
        X[i] = selection(face, y)
        F[i] = np.sum((X[i] - y) ** 2)
    return F, X


def grid_distance(instance: ProblemInstance, spec: GridSpec | None = None) -> GridResult:
    """Smallest ``||y - x||^2`` over optima generated on a zooming simplex lattice.

    The result is a feasible witness, so ``p_grid >= p*``. The reduction
    takes the first lattice point (in enumeration order) attaining the
    minimum, which makes the result deterministic.

    Raises
    ------
    GridTooLarge
        If the initial lattice has more points than ``PGM_MAX_GRID``
        (default 10**7).
    """
    spec = spec or GridSpec()
    m = instance.m
    K = max(1, int(round(1.0 / spec.spacing(m))))
    limit = max_grid()
    if grid_size(m, K) > limit:
        raise GridTooLarge(f"{grid_size(m, K)} lattice points exceed the limit {limit}")
    pts = _lattice(m, K)
    F, X = _evaluate(instance, pts / K)
    evals = len(pts)
    k = int(np.argmin(F))
    best_int, best_F, best_x = pts[k], F[k], X[k]
    if not np.isfinite(best_F):
        raise SolverFailure("every lattice point failed")
    window = _window(m) if m > 1 else np.zeros((1, 1), dtype=np.int64)
    for _ in range(spec.refine_rounds):
        K *= ZOOM
        base = best_int * ZOOM
        cand = base[None, :] + window
        cand = cand[np.all(cand >= 0, axis=1)]
        F, X = _evaluate(instance, cand / K)
        evals += len(cand)
        k = int(np.argmin(F))
        if F[k] < best_F:
            best_F, best_x = F[k], X[k]
            best_int = cand[k]
        else:
            best_int = base
    alpha = SimplexWeights.project(best_int / K)
    return GridResult(float(best_F), alpha, best_x, evals)


def hull_distance(centers, y) -> float:
    """Exact squared distance from ``y`` to the convex hull of ``centers``.

    Enumerates every subset of the centers, projects ``y`` onto its affine
    hull and keeps the projections whose barycentric coordinates are all
    nonnegative. By Caratheodory the nearest hull point is such a
    projection for some affinely independent subset, so the minimum over
    the candidates is exact. Cost grows as ``2^m``; meant for ``m <= 12``.
    """
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    y = np.asarray(y, dtype=float)
    m = C.shape[0]
    best = np.inf
    for size in range(1, m + 1):
        for subset in itertools.combinations(range(m), size):
            S = C[list(subset)]
            base = S[0]
            D = (S[1:] - base).T
            if size == 1:
                p = base
            else:
                t, *_ = np.linalg.lstsq(D, y - base, rcond=None)
                coords = np.concatenate([[1.0 - t.sum()], t])
                if np.any(coords < -1e-12):
                    continue
                p = base + D @ t
            best = min(best, float(np.sum((y - p) ** 2)))
    return best
