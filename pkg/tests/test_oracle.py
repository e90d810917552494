import numpy as np
import pytest

from conftest import identity_instance, one_dim_constrained, random_instance
from projgm import conic
from projgm.core import ProblemInstance
from projgm.lower import lower_bound
from projgm.oracle import GridSpec, GridTooLarge, grid_distance, grid_size, hull_distance
from projgm.upper import upper_bound


def hull_qp(centers, y):
    """Squared hull distance as a simplex-constrained QP solved by the conic solver."""
    C = np.asarray(centers, dtype=float)
    y = np.asarray(y, dtype=float)
    prog = conic.ConicProgram()
    a = prog.add_nonneg(len(C))
    prog.add_eq({int(i): 1.0 for i in a}, 1.0)
    G = C @ C.T
    prog.set_objective(
        {int(i): -2.0 * float(C[k] @ y) for k, i in enumerate(a)},
        constant=float(y @ y),
        quadratic=[(int(a[i]), int(a[j]), 2.0 * G[i, j]) for i in range(len(C)) for j in range(len(C))],
    )
    return conic.solve(prog).objective


def vertex_diameter(inst):
    X = np.array([f.center for f in inst.basis])
    return max(np.linalg.norm(X[:, None] - X[None], axis=2).max(), 1.0)


# --- hull_distance ------------------------------------------------------------------


@pytest.mark.parametrize(
    "centers, y, expected",
    [
        ([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], [0.5, 0.5], 0.0),
        ([[0.0, 0.0], [2.0, 0.0]], [1.0, 1.0], 1.0),
        ([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [1.0, 1.0], 0.5),
    ],
)
def test_hull_distance_examples(centers, y, expected):
    assert hull_distance(centers, y) == pytest.approx(expected, abs=1e-12)


def test_hull_distance_single_center():
    assert hull_distance([[1.0, 2.0]], [4.0, 6.0]) == pytest.approx(25.0)


def test_hull_distance_matches_qp(rng):
    for _ in range(100):
        m, n = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        C = rng.normal(size=(m, n))
        y = rng.normal(size=n) * 2
        assert hull_distance(C, y) == pytest.approx(hull_qp(C, y), abs=1e-7)


# --- grid_distance ---------------------------------------------------------------------


def test_grid_at_a_center(rng):
    inst = random_instance(rng, 2, 3)
    assert grid_distance(ProblemInstance(inst.basis, inst.basis[0].center)).p_grid <= 1e-10


@pytest.mark.parametrize("resolution", [0.5, 0.1, 0.02])
def test_grid_segment_converges(resolution):
    inst = identity_instance([[0.0, 0.0], [2.0, 0.0]], [1.0, 1.0])
    res = grid_distance(inst, GridSpec(resolution=resolution, refine_rounds=0))
    # the midpoint lies on every even lattice
    assert res.p_grid == pytest.approx(1.0, abs=1e-12)


def test_grid_segment_offset_point_approaches_limit():
    # nearest optimum is (0.3, 0); the error shrinks with the spacing
    inst = identity_instance([[0.0, 0.0], [2.0, 0.0]], [0.3, 1.0])
    errs = [grid_distance(inst, GridSpec(resolution=h, refine_rounds=0)).p_grid - 1.0 for h in (0.5, 0.25)]
    assert errs[0] > errs[1] >= 0.0
    # 0.15 is off the zoomed lattice, the error is second order in the final spacing
    assert grid_distance(inst).p_grid == pytest.approx(1.0, abs=1e-5)


def test_grid_one_dimensional_constrained():
    assert grid_distance(one_dim_constrained()).p_grid == pytest.approx(1.0, abs=1e-9)


def test_grid_is_deterministic(rng):
    inst = random_instance(rng, 2, 3)
    a, b = grid_distance(inst), grid_distance(inst)
    assert a.p_grid == b.p_grid
    np.testing.assert_array_equal(a.alpha.alpha, b.alpha.alpha)


def test_grid_size_formula():
    assert grid_size(3, 50) == 1326
    assert grid_size(5, 20) == 10626


def test_grid_guard(monkeypatch, rng):
    inst = random_instance(rng, 2, 4)
    monkeypatch.setenv("PGM_MAX_GRID", "100")
    with pytest.raises(GridTooLarge):
        grid_distance(inst)
    monkeypatch.setenv("PGM_MAX_GRID", str(10**6))
    grid_distance(inst, GridSpec(resolution=0.25, refine_rounds=0))


def test_default_guard_rejects_huge_lattices(rng):
    inst = random_instance(rng, 2, 8)
    with pytest.raises(GridTooLarge):
        grid_distance(inst, GridSpec(resolution=0.01))


def test_grid_agrees_with_hull_distance(rng):
    for _ in range(10):
        centers = rng.normal(size=(3, 2)) * 2
        y = rng.normal(size=2) * 3
        exact = hull_distance(centers, y)
        p = grid_distance(identity_instance(centers, y)).p_grid
        assert exact - 1e-12 <= p <= exact + 0.02 * (1 + exact)


@pytest.mark.parametrize("constrained", [False, True])
def test_oracle_sandwich(rng, constrained):
    spec = GridSpec()
    for _ in range(6):
        inst = random_instance(rng, 2, 3, constrained=constrained, y_scale=4.0)
        p_grid = grid_distance(inst, spec).p_grid
        assert lower_bound(inst).p_low - 1e-6 <= p_grid
        assert upper_bound(inst).p_up <= p_grid + 10 * spec.spacing(3) * vertex_diameter(inst)
