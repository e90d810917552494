"""
The bundled conic solver
========================

The lower bounds are built on a small dense solver for programs with
free, nonnegative and positive semidefinite variables. It can be used on
its own: declare variables, add linear rows and an objective, solve.
"""

import numpy as np

from projgm import conic

# a linear program: minimise x + 2y subject to x + y >= 1, x, y >= 0
lp = conic.ConicProgram()
x, y = lp.add_nonneg(2)
lp.add_ge({int(x): 1.0, int(y): 1.0}, 1.0)
lp.set_objective({int(x): 1.0, int(y): 2.0})
sol = conic.solve(lp)
print("LP:", sol.status.value, "x =", np.round(sol.x, 8), "objective", round(sol.objective, 8))

# a semidefinite program: the smallest eigenvalue of C is
# min <C, X> subject to trace X = 1, X PSD
C = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]])
sdp = conic.ConicProgram()
X = sdp.add_psd(3)
sdp.add_eq({X.index(i, i): 1.0 for i in range(3)}, 1.0)
sdp.set_objective({X.index(i, j): C[i, j] * (1.0 if i == j else 2.0) for i in range(3) for j in range(i, 3)})
sol = conic.solve(sdp)
print("SDP:", sol.status.value, f"optimum {sol.objective:.8f}", f"vs smallest eigenvalue {np.linalg.eigvalsh(C)[0]:.8f}")
print("    and the solution has rank", np.linalg.matrix_rank(sol.matrix(X), tol=1e-6))

# dense strictly convex QPs go to the dual active-set method
G = np.array([[2.0, 0.5], [0.5, 1.0]])
a = np.array([-1.0, -1.0])
xq, lam, mu = conic.solve_qp(G, a, C_in=np.array([[1.0, 1.0]]), d_in=np.array([0.5]))
print("QP: x =", np.round(xq, 8), "multiplier", np.round(mu, 8))

# and the simplex projection used by the upper-bound search
print("projection of (0.8, 0.6, -0.2) onto the simplex:", conic.project_simplex([0.8, 0.6, -0.2]))
