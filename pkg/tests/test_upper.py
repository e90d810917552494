import numpy as np
import pytest

from conftest import identity_instance, one_dim_constrained, random_instance, random_polytope
from projgm.core import ProblemInstance
from projgm.optima import kappa, kappa_c, membership_residual
from projgm.oracle import hull_distance
from projgm.upper import (
    SearchOptions,
    multistart_points,
    objective_and_gradient,
    simplex_grid,
    upper_bound,
    upper_bound_constrained,
    upper_bound_unconstrained,
)


def tangent_fd_check(inst, a, h=1e-6):
    """Compare the gradient with central differences along every ``e_i - e_j``."""
    _, g = objective_and_gradient(inst, a)
    m = len(a)
    worst = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            d = np.zeros(m)
            d[i], d[j] = 1.0, -1.0
            fd = (objective_and_gradient(inst, a + h * d)[0] - objective_and_gradient(inst, a - h * d)[0]) / (2 * h)
            an = g @ d
            worst = max(worst, abs(fd - an) / max(1.0, abs(an)))
    return worst


# --- gradient -------------------------------------------------------------------


def test_gradient_vanishes_at_a_member(rng):
    inst = random_instance(rng, 3, 4)
    a = rng.dirichlet(np.ones(4))
    inst = ProblemInstance(inst.basis, kappa(inst, a))
    F, g = objective_and_gradient(inst, a)
    assert F <= 1e-24
    assert np.max(np.abs(g - g.mean())) <= 1e-10


def test_gradient_identity_curvature(rng):
    centers = rng.normal(size=(3, 2))
    y = rng.normal(size=2)
    inst = identity_instance(centers, y)
    a = rng.dirichlet(np.ones(3))
    x = a @ centers
    F, g = objective_and_gradient(inst, a)
    assert F == pytest.approx(np.sum((x - y) ** 2), rel=1e-12)
    np.testing.assert_allclose(g, 2 * (centers - x) @ (x - y), rtol=1e-10, atol=1e-12)


def test_gradient_matches_finite_differences(rng):
    for _ in range(200):
        inst = random_instance(rng, int(rng.integers(1, 5)), int(rng.integers(2, 6)))
        a = rng.dirichlet(np.ones(inst.m) * 2.0)
        assert tangent_fd_check(inst, a) <= 1e-5


# --- unconstrained search -------------------------------------------------------------


def test_multistarts_prefix_is_stable():
    short, long_ = multistart_points(3, 8, 5), multistart_points(3, 16, 5)
    np.testing.assert_array_equal(long_[:8], short)
    np.testing.assert_array_equal(short[:3], np.eye(3))
    np.testing.assert_allclose(short[3], 1 / 3)


def test_upper_at_a_center(rng):
    inst = random_instance(rng, 3, 4)
    res = upper_bound_unconstrained(ProblemInstance(inst.basis, inst.basis[0].center))
    assert res.p_up <= 1e-10


def test_upper_recovers_withheld_alpha(rng):
    for _ in range(10):
        inst = random_instance(rng, 3, 4)
        inst = ProblemInstance(inst.basis, kappa(inst, rng.dirichlet(np.ones(4))))
        assert upper_bound_unconstrained(inst).p_up <= 1e-8


def test_upper_identity_curvature_hits_hull_distance(rng):
    for _ in range(10):
        centers = rng.normal(size=(4, 3)) * 2
        y = rng.normal(size=3) * 4
        res = upper_bound_unconstrained(identity_instance(centers, y))
        assert res.p_up == pytest.approx(hull_distance(centers, y), abs=1e-6)


def test_upper_witness_invariants(rng):
    for _ in range(20):
        inst = random_instance(rng, 3, 3)
        res = upper_bound(inst)
        assert membership_residual(inst, res.x, res.alpha) <= 1e-7
        assert res.p_up == float(np.sum((inst.y - res.x) ** 2))
        assert res.p_up <= min(res.trace) * (1 + 1e-12)
        # the result dominates every start
        starts = multistart_points(inst.m, 16, 0)
        assert res.p_up <= min(objective_and_gradient(inst, a)[0] for a in starts) * (1 + 1e-12)


def test_doubling_multistarts_never_hurts(rng):
    for _ in range(10):
        inst = random_instance(rng, 2, 4, y_scale=6.0)
        p8 = upper_bound(inst, SearchOptions(multistarts=8)).p_up
        p16 = upper_bound(inst, SearchOptions(multistarts=16)).p_up
        assert p16 <= p8


def test_search_options_validation():
    with pytest.raises(ValueError):
        SearchOptions(multistarts=0)
    with pytest.raises(ValueError):
        SearchOptions(backtrack=1.0)
    with pytest.raises(ValueError):
        SearchOptions(grid_resolution=2.0)


def test_dispatch_rejects_wrong_mode(rng):
    with pytest.raises(ValueError):
        upper_bound_unconstrained(random_instance(rng, 2, 2, constrained=True))
    with pytest.raises(ValueError):
        upper_bound_constrained(random_instance(rng, 2, 2))


# --- constrained search ------------------------------------------------------------------


@pytest.mark.parametrize("m, resolution, count", [(1, 0.1, 1), (2, 0.25, 5), (3, 0.5, 6), (4, 0.05, 1771)])
def test_simplex_grid(m, resolution, count):
    grid = simplex_grid(m, resolution)
    assert grid.shape == (count, m)
    np.testing.assert_allclose(grid.sum(axis=1), 1.0)
    assert len({tuple(r) for r in grid}) == count


def test_constrained_upper_at_a_constrained_minimiser(rng):
    inst = random_instance(rng, 2, 3, constrained=True)
    point, _ = kappa_c(inst, [1.0, 0.0, 0.0])
    res = upper_bound_constrained(ProblemInstance(inst.basis, point.x, inst.polytope))
    assert res.p_up <= 1e-8


def test_constrained_upper_one_dimensional():
    res = upper_bound_constrained(one_dim_constrained())
    assert res.p_up == pytest.approx(1.0, abs=1e-6)


def test_constrained_matches_unconstrained_inside_polytope(rng):
    inst = random_instance(rng, 2, 3, center_scale=0.2, y_scale=0.5)
    # a large polytope contains every unconstrained optimum in its interior
    P = random_polytope(rng, 2, 6)
    P = type(P)(P.A_eq, P.b_eq, P.A, P.b * 50)
    free = upper_bound_unconstrained(inst).p_up
    boxed = upper_bound_constrained(ProblemInstance(inst.basis, inst.y, P)).p_up
    assert boxed == pytest.approx(free, abs=1e-6)


def test_constrained_witness_membership(rng):
    for _ in range(5):
        inst = random_instance(rng, 2, 3, constrained=True, y_scale=4.0)
        res = upper_bound_constrained(inst, SearchOptions(grid_resolution=0.1))
        assert res.stats["membership"] <= 1e-7
        assert res.p_up == float(np.sum((inst.y - res.x) ** 2))
        assert res.stats["failed_cells"] == 0


def test_halving_grid_spacing_never_hurts():
    rng = np.random.default_rng(3)
    inst = random_instance(rng, 2, 3, constrained=True, y_scale=5.0)
    # without the polish, a finer grid contains the coarser one
    coarse = upper_bound_constrained(inst, SearchOptions(grid_resolution=0.2, refine_sweeps=0)).trace
    fine = upper_bound_constrained(inst, SearchOptions(grid_resolution=0.1, refine_sweeps=0)).trace
    assert min(fine[: len(simplex_grid(3, 0.1))]) <= min(coarse[: len(simplex_grid(3, 0.2))])
    p_coarse = upper_bound_constrained(inst, SearchOptions(grid_resolution=0.2)).p_up
    p_fine = upper_bound_constrained(inst, SearchOptions(grid_resolution=0.1)).p_up
    assert p_fine <= p_coarse + 1e-9
