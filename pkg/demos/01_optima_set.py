"""
The set of global optima of combined quadratics
===============================================

A basis of strongly convex quadratics ``f_j`` defines, for every weight
vector ``alpha`` on the simplex, the combined cost ``sum_j alpha_j f_j``.
Its unique minimiser is ``kappa(alpha)``. This script walks through that
map and the set it sweeps out.
"""

from pathlib import Path

import numpy as np

from projgm import ProblemInstance, check_feasibility, kappa, membership_residual, sample_optima
from projgm.optima import compactness_bound, segment_alphas
from projgm.problem_io import load

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

# five quadratics in three dimensions; the file also carries a test point y
instance, _ = load(FIXTURES / "five_3d.json")
print(f"n = {instance.n} states, m = {instance.m} basis functions")

# at a vertex of the simplex the combined cost is a single basis function,
# so kappa returns that function's center
for j, f in enumerate(instance.basis):
    x = kappa(instance, np.eye(instance.m)[j])
    print(f"kappa(e_{j + 1}) = {np.round(x, 6)}   center {np.round(f.center, 6)}")

# any other weight vector gives a point that satisfies the stationarity
# condition sum_j alpha_j grad f_j(x) = 0 to rounding
alpha = np.full(instance.m, 1.0 / instance.m)
x_bar = kappa(instance, alpha)
print("\nbarycenter weights map to", np.round(x_bar, 6))
print("stationarity residual:", membership_residual(instance, x_bar, alpha))

# feasibility inverts the question: given a point, find weights (if any)
# that make it optimal
verdict = check_feasibility(ProblemInstance(instance.basis, x_bar))
print("\nis kappa(barycenter) optimal for some weights?", verdict.exactly_optimal)
print("recovered weights:", np.round(verdict.alpha.alpha, 6))
far = check_feasibility(ProblemInstance(instance.basis, x_bar + 10.0))
print("and the shifted point x + 10?", far.exactly_optimal, f"(residual {far.residual:.3g})")

# the optima set is bounded: every member lies in a ball whose radius is
# the largest ||phi_j|| over the smallest basis eigenvalue
ball = compactness_bound(instance)
points = np.array([x for _, x in sample_optima(instance, 5000, seed=0)])
print(f"\nball radius {ball.radius:.3f}; largest sampled norm {np.linalg.norm(points, axis=1).max():.3f}")

# it is also path-connected: a straight weight segment maps to a
# continuous curve of members
path = sample_optima(instance, 0, 0, alphas=segment_alphas(np.eye(instance.m)[0], np.eye(instance.m)[1], 11))
steps = np.linalg.norm(np.diff([x for _, x in path], axis=0), axis=1)
print("step lengths along the e_1 to e_2 path:", np.round(steps, 3))
