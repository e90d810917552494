"""
Optima over a polytope
======================

With a feasible polytope ``{x : A_eq x = b_eq, A x <= b}`` the optimality
test becomes the KKT system. Constrained optima need not be
unconstrained ones: here two quadratics centered right of the half-plane
``x_1 <= 1`` all have their constrained minimiser on its boundary.
"""

from pathlib import Path

import numpy as np

from projgm import LowerOptions, ProblemInstance, check_feasibility, kappa_c, lower_bound, upper_bound
from projgm.problem_io import load

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

instance, _ = load(FIXTURES / "fig2_like.json")
print("test point y =", instance.y)

verdict = check_feasibility(instance)
print("optimal over the half-plane:", verdict.exactly_optimal,
      "with weights", np.round(verdict.alpha.alpha, 6), "and multiplier", np.round(verdict.mu, 6))
free = check_feasibility(ProblemInstance(instance.basis, instance.y))
print("optimal without the constraint:", free.exactly_optimal)

# kappa_c solves the constrained problem for given weights; its multiplier
# shows which face is active
for a in (0.0, 0.5, 1.0):
    point, _ = kappa_c(instance, [1.0 - a, a])
    print(f"alpha_2 = {a:.1f}:  x = {np.round(point.x, 6)}, mu = {np.round(point.mu, 6)}")

# the box fixture: bounds with the default relaxation (multiplier block
# projected out) and with an explicit cap on the multiplier moments
box, _ = load(FIXTURES / "box_2d.json")
up = upper_bound(box)
print(f"\nbox_2d: p_up = {up.p_up:.6f} at x = {np.round(up.x, 6)}")
print(f"p_low, projected relaxation:  {lower_bound(box).p_low:.6f}")
print(f"p_low, multipliers capped at 10: {lower_bound(box, LowerOptions(mu_bound=10.0)).p_low:.6f}")
