"""
Bracketing the distance to the optima set
=========================================

The squared distance ``p*`` from a test point ``y`` to the optima set is a
nonconvex problem. Two cheap computations bracket it:

* the upper bound searches the weight simplex with projected gradient
  descent and returns a member ``x_up`` at distance ``p_up``;
* the lower bound solves a moment (semidefinite) relaxation and returns
  ``p_low``. When its moment matrix is rank one, ``p_low = p*`` and the
  optimal member can be read off.
"""

from pathlib import Path

import numpy as np

from projgm import ProblemInstance, compute_bounds, kappa
from projgm.problem_io import load

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

for name in ("member.json", "hull_outside.json", "five_3d.json", "fig3_like.json"):
    instance, _ = load(FIXTURES / name)
    report = compute_bounds(instance)
    print(f"{name:18s} p_low = {report.p_low:10.6f}   p_up = {report.p_up:10.6f}   "
          f"rank one: {report.rank1_certified}")

# on a member the gap closes completely and the relaxation is exact
instance, _ = load(FIXTURES / "five_3d.json")
hidden = np.array([0.1, 0.4, 0.2, 0.2, 0.1])
member = ProblemInstance(instance.basis, kappa(instance, hidden))
report = compute_bounds(member)
print("\nmember built from hidden weights", hidden)
print(f"p_low = {report.p_low:.2e}, p_up = {report.p_up:.2e}")
if report.extracted is not None:
    x, alpha = report.extracted
    # with more basis functions than n + 1 the weights behind a point are
    # not unique, so these need not equal the hidden ones; they do map to
    # the same member
    print("weights read off the moment matrix:", np.round(alpha.alpha, 6))
    print("distance from kappa(read-off weights) to the member:",
          f"{np.linalg.norm(kappa(member, alpha) - member.y):.1e}")

# away from the set the two bounds can differ; their ratio says how much
# of the gap is left to close
instance, _ = load(FIXTURES / "fig3_like.json")
report = compute_bounds(instance)
print(f"\nfig3_like: sqrt(p_low) = {np.sqrt(report.p_low):.4f}, sqrt(p_up) = {np.sqrt(report.p_up):.4f}")
print("upper-bound witness:", np.round(report.x_up, 4), "with weights", np.round(report.alpha_up.alpha, 4))
