import numpy as np
import pytest

from conftest import one_dim_constrained, random_instance
from projgm.core import InfeasibleBasis, Polytope, ProblemInstance, QuadraticFunction, SimplexWeights
from projgm.optima import kappa, kappa_c
from projgm.lower import (
    LowerOptions,
    MomentLayout,
    MomentMatrix,
    assemble_constrained_lmi,
    assemble_lmi,
    assemble_projected_constrained_lmi,
    assemble_unconstrained_lmi,
    certify_rank1,
    constraint_violation,
    lift,
    lower_bound,
)
from projgm.upper import upper_bound


def lifted_violation(lmi, v, lam=None):
    return constraint_violation(lmi, np.outer(v, v), lam)


# --- assembly -------------------------------------------------------------------


def test_smallest_unconstrained_program():
    inst = ProblemInstance([QuadraticFunction.from_center([[1.0]], [0.0])], [0.0])
    lmi = assemble_unconstrained_lmi(inst)
    assert lmi.layout.order == 3
    assert lmi.program.psd_blocks[0].order == 3
    # the simplex sum for m = 1 is the single row M_{alpha 1} = 1
    a1 = lmi.entry(0, lmi.layout.alpha[0])
    assert ([(a1, 1.0)], 1.0) in [(list(t), rhs) for t, rhs in lmi.program.equalities]


def test_constraint_tally_for_two_states_three_weights(rng):
    n, m = 2, 3
    lmi = assemble_unconstrained_lmi(random_instance(rng, n, m))
    # equalities: M_11 = 1, simplex sum, one gradient row per state, one row sum per weight
    eq = 1 + 1 + n + m
    # inequalities: per weight a sign and a diagonal cap; per pair a sign, two caps and the 1/4 cap
    ineq = m + m + 4 * (m * (m - 1) // 2)
    assert (eq, ineq) == (7, 18)
    assert len(lmi.program.equalities) == eq == lmi.counts["eq"]
    assert len(lmi.program.inequalities) == ineq == lmi.counts["ineq"]


@pytest.mark.parametrize("constrained", [False, True])
def test_constraints_reference_declared_indices(rng, constrained):
    lmi = assemble_lmi(random_instance(rng, 3, 3, constrained=constrained, q=1))
    nv = lmi.program.num_vars
    for terms, _ in lmi.program.equalities + lmi.program.inequalities:
        assert all(0 <= i < nv for i, _ in terms)


def test_one_dimensional_constrained_program():
    lmi = assemble_constrained_lmi(one_dim_constrained())
    assert lmi.layout.order == 4
    x, mu = lmi.layout.x[0], lmi.layout.mu[0]
    rows = [t for t, _ in lmi.program.equalities if any(i == lmi.entry(x, mu) for i, _ in t)]
    assert len(rows) == 1


def test_constrained_program_dimensions(rng):
    lmi = assemble_constrained_lmi(random_instance(rng, 3, 3, constrained=True, r=4, q=1))
    assert lmi.layout.order == 11
    assert lmi.lam.size == 1


def test_empty_polytope_blocks_reduce_to_unconstrained(rng):
    inst = random_instance(rng, 2, 3)
    empty = Polytope(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), np.zeros(0))
    free = lower_bound(inst).p_low
    boxed = lower_bound(ProblemInstance(inst.basis, inst.y, empty)).p_low
    assert boxed == pytest.approx(free, abs=1e-6 * (1 + free))


# --- lifts of members satisfy every constraint ---------------------------------------


def test_unconstrained_lift_is_feasible(rng):
    for _ in range(500):
        inst = random_instance(rng, int(rng.integers(1, 5)), int(rng.integers(1, 6)))
        a = rng.dirichlet(np.ones(inst.m))
        x = kappa(inst, a)
        lmi = assemble_unconstrained_lmi(inst)
        v = lift(lmi.layout, x, a)
        viol = constraint_violation(lmi, v)
        assert viol["eq"] <= 1e-8 * (1 + np.abs(inst.Qs).max() * (1 + np.abs(x).max()))
        assert viol["ineq"] <= 1e-12
        assert viol["psd"] <= 1e-8 * np.abs(v).max()


def test_constrained_lift_is_feasible(rng):
    for _ in range(100):
        inst = random_instance(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)), constrained=True, q=0)
        a = rng.dirichlet(np.ones(inst.m))
        point, _ = kappa_c(inst, a)
        lmi = assemble_constrained_lmi(inst)
        viol = constraint_violation(lmi, lift(lmi.layout, point.x, a, point.mu), point.lam)
        assert max(viol.values()) <= 1e-8 * (1 + np.abs(point.mu).max()) * (1 + np.abs(point.x).max())


def test_quarter_cap_is_tight_at_half_half():
    inst = ProblemInstance([QuadraticFunction.from_center(np.eye(2), c) for c in ([0, 0], [1, 0], [0, 1])], [0, 0])
    a = np.array([0.5, 0.5, 0.0])
    lmi = assemble_unconstrained_lmi(inst)
    M = lift(lmi.layout, kappa(inst, a), a)
    i, j = lmi.layout.alpha[:2]
    assert M[i, j] == 0.25
    assert constraint_violation(lmi, M)["ineq"] == 0.0


# --- certification ------------------------------------------------------------------


def test_certify_rank_one_lift(rng):
    inst = random_instance(rng, 2, 3)
    a = rng.dirichlet(np.ones(3))
    x = kappa(inst, a)
    layout = MomentLayout(2, 3)
    cert = certify_rank1(MomentMatrix(layout, lift(layout, x, a)), inst)
    assert cert.certified
    np.testing.assert_allclose(cert.extracted_x, x, atol=1e-12)
    np.testing.assert_allclose(cert.extracted_alpha.alpha, a, atol=1e-12)


def test_average_of_two_lifts_is_not_certified(rng):
    inst = random_instance(rng, 2, 3)
    layout = MomentLayout(2, 3)
    lifts = [lift(layout, inst.basis[j].center, np.eye(3)[j]) for j in range(2)]
    cert = certify_rank1(MomentMatrix(layout, 0.5 * (lifts[0] + lifts[1])), inst)
    assert not cert.certified
    assert cert.singular_ratio > 0.01


# --- solved bounds ------------------------------------------------------------------


def test_lower_is_zero_on_members(rng):
    for _ in range(5):
        inst = random_instance(rng, 2, 3)
        inst = ProblemInstance(inst.basis, kappa(inst, rng.dirichlet(np.ones(3))))
        res = lower_bound(inst)
        assert res.p_low <= 1e-7
        assert res.certificate.certified


def test_lower_single_basis_is_exact(rng):
    inst = random_instance(rng, 3, 1)
    assert lower_bound(inst).p_low == pytest.approx(np.sum((inst.y - inst.basis[0].center) ** 2), abs=1e-6)


def test_lower_one_dimensional_constrained():
    res = lower_bound(one_dim_constrained())
    assert res.p_low == pytest.approx(1.0, abs=1e-6)


def test_infeasible_polytope_raises():
    P = Polytope.from_inequalities([[1.0], [-1.0]], [0.0, -1.0])
    inst = ProblemInstance([QuadraticFunction([[1.0]], [0.0])], [0.0], P)
    with pytest.raises(InfeasibleBasis) as exc:
        lower_bound(inst)
    assert exc.value.certificate is not None


@pytest.mark.parametrize("constrained", [False, True])
def test_sandwich_and_certified_extraction(rng, constrained):
    for _ in range(10):
        inst = random_instance(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)), constrained=constrained)
        low = lower_bound(inst)
        up = upper_bound(inst).p_up
        assert low.p_low <= up + 1e-6 * (1 + up)
        if low.certificate.certified:
            x = low.certificate.extracted_x
            assert abs(low.p_low - np.sum((inst.y - x) ** 2)) <= 1e-6 * (1 + low.p_low)


def loose_feasible_point(inst, eps):
    """Feasible ``M`` of the relaxation without valid constraints, objective ``n * eps``.

    Take ``x = y`` and uniform weights, absorb the gradient mismatch
    ``g = sum_j a_j grad f_j(y)`` into ``M_{x alpha_j} = y a_j + d_j`` with
    ``sum_j Q_j d_j = -g``, and make the ``(x, alpha)`` block PSD with a large
    weight block. Only the valid constraints would forbid that block.
    """
    n, m = inst.n, inst.m
    a = np.full(m, 1.0 / m)
    y = inst.y
    g = sum(a[j] * (inst.Qs[j] @ y + inst.phis[j]) for j in range(m))
    D = np.column_stack([-np.linalg.solve(inst.Qs[j], g) / m for j in range(m)])
    v = np.concatenate([[1.0], y, a])
    E = np.zeros((1 + n + m, 1 + n + m))
    E[1 : 1 + n, 1 : 1 + n] = eps * np.eye(n)
    E[1 : 1 + n, 1 + n :] = D
    E[1 + n :, 1 : 1 + n] = D.T
    E[1 + n :, 1 + n :] = (np.linalg.norm(D, 2) ** 2 / eps + 1.0) * np.eye(m)
    return np.outer(v, v) + E


def test_dropping_valid_constraints_never_tightens(rng):
    # without the valid constraints the infimum is 0 (not attained), so the
    # enriched bound can only be larger
    for _ in range(8):
        inst = random_instance(rng, 2, 3, y_scale=5.0)
        loose = assemble_unconstrained_lmi(inst, valid_constraints=False)
        for eps in (1e-1, 1e-3):
            M = loose_feasible_point(inst, eps)
            viol = constraint_violation(loose, M)
            assert max(viol.values()) <= 1e-9 * np.abs(M).max()
            value = np.trace(M[1:3, 1:3]) - 2 * inst.y @ M[0, 1:3] + inst.y @ inst.y
            assert value == pytest.approx(2 * eps, rel=1e-6, abs=1e-9)
            # the same point breaks the enriched program
            assert max(constraint_violation(assemble_unconstrained_lmi(inst), M).values()) > 1e-3
        assert lower_bound(inst).p_low >= 0.0


def test_projected_relaxation_is_no_tighter_than_capped(rng):
    for _ in range(5):
        inst = random_instance(rng, 2, 2, constrained=True, y_scale=4.0)
        projected = lower_bound(inst).p_low
        capped = lower_bound(inst, LowerOptions(mu_bound=10.0)).p_low
        assert projected <= capped + 1e-6 * (1 + capped)


def test_projected_relaxation_accepts_lifts(rng):
    inst = random_instance(rng, 2, 3, constrained=True, q=1)
    a = rng.dirichlet(np.ones(3))
    point, _ = kappa_c(inst, a)
    lmi = assemble_projected_constrained_lmi(inst)
    x = np.zeros(lmi.program.num_vars)
    M = lift(lmi.layout, point.x, a)
    iu = np.triu_indices(lmi.layout.order)
    x[lmi.block.offset : lmi.block.offset + lmi.block.size] = M[iu]
    x[lmi.lam] = point.lam
    x[lmi.mu] = point.mu
    for terms, rhs in lmi.program.equalities:
        assert abs(sum(c * x[i] for i, c in terms) - rhs) <= 1e-8
    for terms, rhs in lmi.program.inequalities:
        assert sum(c * x[i] for i, c in terms) - rhs <= 1e-10


def test_lower_result_invariants(rng):
    inst = random_instance(rng, 2, 3, constrained=True)
    res = lower_bound(inst)
    assert res.moment.values[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.eigvalsh(res.moment.values)[0] >= -1e-7
    assert res.p_low >= 0.0
    assert res.stats["status"] == "Optimal"


def test_degenerate_two_weight_instance():
    # at the optimum M_{a1 a2} = 0 and M_{a1 a1} = M_{a1}: the cap and the sign
    # constraint are both active and redundant given the row sums, which makes
    # the interior-point Schur complement singular in the limit. The value was
    # computed independently with an off-the-shelf conic solver.
    basis = [
        QuadraticFunction([[0.3360624]], [0.35356433]),
        QuadraticFunction([[1.48715835]], [2.6166953]),
    ]
    inst = ProblemInstance(basis, [0.73533452])
    res = lower_bound(inst)
    assert res.p_low == pytest.approx(2.568296, abs=1e-5)
    assert res.p_low <= upper_bound(inst).p_up


def test_two_weight_instances_converge(rng):
    for _ in range(20):
        inst = random_instance(rng, int(rng.integers(1, 4)), 2, y_scale=float(rng.choice([0.5, 4.0, 10.0])))
        res = lower_bound(inst)
        assert res.stats["status"] == "Optimal"
        assert res.p_low <= upper_bound(inst).p_up + 1e-6


def test_interior_point_endgame_keeps_primal_accuracy():
    # near the optimum the scaled Schur solve loses primal accuracy on this
    # instance; the direction must stay on the linearised equality rows
    rng = np.random.default_rng(1122)
    n, m = int(rng.integers(1, 5)), int(rng.integers(1, 6))
    inst = random_instance(rng, n, m, r=int(rng.integers(1, 7)), y_scale=float(rng.choice([0.5, 4, 10])))
    assert (n, m) == (4, 5)
    res = lower_bound(inst)
    assert res.stats["method"] == "interior-point"
    assert res.stats["status"] == "Optimal"
    assert res.p_low <= upper_bound(inst).p_up + 1e-6
