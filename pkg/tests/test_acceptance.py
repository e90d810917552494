"""Acceptance suite: one test per criterion, summarised at the end of the run.

Each test tags itself through the ``criterion`` fixture; the terminal
summary then prints a PASS/FAIL line per criterion with a short detail.
"""

import json
import time

import numpy as np
import pytest

from conftest import FIXTURES, identity_instance, one_dim_constrained, random_instance
from projgm.cli import main
from projgm.core import ProblemInstance
from projgm.lower import assemble_constrained_lmi, assemble_unconstrained_lmi, constraint_violation, lift, lower_bound
from projgm.optima import (
    check_feasibility,
    compactness_bound,
    kappa,
    kappa_c,
    membership_residual,
    sample_optima,
    segment_alphas,
)
from projgm.oracle import hull_distance
from projgm.problem_io import parse
from projgm.upper import objective_and_gradient, upper_bound

pytestmark = pytest.mark.slow


def load_fixture(name):
    return parse(json.loads((FIXTURES / name).read_text()))


def test_sandwich_suite(criterion):
    report = criterion(1, "sandwich suite")
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = -np.inf
    for k in range(100):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        constrained = k % 2 == 1
        q = int(rng.integers(0, 2)) if constrained and n > 1 else 0
        r = int(rng.integers(1, 7))
        inst = random_instance(rng, n, m, constrained=constrained, r=r, q=q, y_scale=4.0)
        p_up = upper_bound(inst).p_up
        p_low = lower_bound(inst).p_low
        worst = max(worst, (p_low - p_up) / (1 + p_up))
        assert p_low <= p_up + 1e-6 * (1 + p_up), (k, p_low, p_up)
    elapsed = time.perf_counter() - t0
    report(f"100 instances, worst (p_low - p_up)/(1 + p_up) = {worst:.2e}, {elapsed:.1f} s")
    assert elapsed < 120


def test_exactness_at_members(criterion):
    report = criterion(2, "exactness at members")
    rng = np.random.default_rng(2)
    certified = 0
    for _ in range(50):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        base = random_instance(rng, n, m)
        inst = ProblemInstance(base.basis, kappa(base, rng.dirichlet(np.ones(m))))
        assert check_feasibility(inst).exactly_optimal
        assert upper_bound(inst).p_up <= 1e-8
        low = lower_bound(inst)
        assert low.p_low <= 1e-7
        certified += low.certificate.certified
    report(f"rank-one certified on {certified}/50")
    assert certified >= 45


def test_closed_form_oracles(criterion):
    report = criterion(3, "closed-form oracles")
    rng = np.random.default_rng(3)
    for _ in range(20):
        n, m = int(rng.integers(1, 4)), int(rng.integers(2, 6))
        centers = rng.normal(size=(m, n)) * 2
        y = rng.normal(size=n) * 4
        inst = identity_instance(centers, y)
        exact = hull_distance(centers, y)
        assert abs(upper_bound(inst).p_up - exact) <= 1e-6
        assert lower_bound(inst).p_low <= exact + 1e-6
    for _ in range(10):
        inst = random_instance(rng, int(rng.integers(1, 5)), 1)
        exact = float(np.sum((inst.y - inst.basis[0].center) ** 2))
        assert upper_bound(inst).p_up == pytest.approx(exact, abs=1e-6)
        assert lower_bound(inst).p_low == pytest.approx(exact, abs=1e-6)
    hand = one_dim_constrained()
    assert upper_bound(hand).p_up == pytest.approx(1.0, abs=1e-6)
    assert lower_bound(hand).p_low == pytest.approx(1.0, abs=1e-6)
    report("20 identity-curvature, 10 single-basis, 1 hand instance")


def test_gradient_fidelity(criterion):
    report = criterion(4, "gradient fidelity")
    rng = np.random.default_rng(4)
    h = 1e-6
    worst = 0.0
    for _ in range(200):
        inst = random_instance(rng, int(rng.integers(1, 5)), int(rng.integers(2, 6)))
        m = inst.m
        a = rng.dirichlet(np.full(m, 2.0))
        _, g = objective_and_gradient(inst, a)
        # directional derivatives along the simplex edges e_i - e_j
        dirs = [np.eye(m)[i] - np.eye(m)[j] for i in range(m) for j in range(i + 1, m)]
        an = np.array([g @ d for d in dirs])
        fd = np.array(
            [(objective_and_gradient(inst, a + h * d)[0] - objective_and_gradient(inst, a - h * d)[0]) / (2 * h) for d in dirs]
        )
        rel = np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-300)
        worst = max(worst, rel)
    report(f"200 pairs, worst relative error {worst:.1e}")
    assert worst <= 1e-5


def test_geometry(criterion):
    report = criterion(5, "geometry of the optima set")
    rng = np.random.default_rng(5)
    # bounded: every optimum lies in the ball of radius R / Lambda
    for _ in range(20):
        inst = random_instance(rng, int(rng.integers(1, 5)), int(rng.integers(1, 6)))
        radius = compactness_bound(inst).radius
        for w, x in sample_optima(inst, 10**4, int(rng.integers(2**31))):
            assert np.linalg.norm(x) <= radius * (1 + 1e-12)
    # path-connected: kappa maps weight segments to member paths
    inst = random_instance(rng, 3, 4)
    worst = 0.0
    for _ in range(100):
        a0, a1 = rng.dirichlet(np.ones(4), size=2)
        for w, x in sample_optima(inst, 0, 0, alphas=segment_alphas(a0, a1, 101)):
            worst = max(worst, membership_residual(inst, x, w))
    assert worst <= 1e-7
    # a constrained optimum need not be an unconstrained one
    fig2 = load_fixture("fig2_like.json")
    assert check_feasibility(fig2).exactly_optimal
    free = ProblemInstance(fig2.basis, fig2.y)
    assert not check_feasibility(free).exactly_optimal
    report(f"20 x 10^4 ball samples, 100 x 101 path points (worst residual {worst:.1e}), fig2_like")


def test_lift_soundness(criterion):
    report = criterion(6, "lift soundness")
    rng = np.random.default_rng(6)
    worst = 0.0
    for k in range(500):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        a = rng.dirichlet(np.ones(m))
        if k % 2 == 0:
            inst = random_instance(rng, n, m)
            x = kappa(inst, a)
            assert membership_residual(inst, x, a) <= 1e-7
            lmi = assemble_unconstrained_lmi(inst)
            viol = constraint_violation(lmi, lift(lmi.layout, x, a))
        else:
            q = int(rng.integers(0, 2)) if n > 1 else 0
            inst = random_instance(rng, n, m, constrained=True, r=int(rng.integers(1, 7)), q=q)
            point, _ = kappa_c(inst, a)
            assert membership_residual(inst, point) <= 1e-7
            lmi = assemble_constrained_lmi(inst)
            viol = constraint_violation(lmi, lift(lmi.layout, point.x, a, point.mu), point.lam)
        worst = max(worst, *viol.values())
    report(f"500 members, worst violation {worst:.1e}")
    assert worst <= 1e-8


def test_ordering_at_desk_scale(criterion, tmp_path):
    report = criterion(7, "ordering on fig3_like")
    out = tmp_path / "compare.json"
    t0 = time.perf_counter()
    argv = ["compare", str(FIXTURES / "fig3_like.json"), "--samples", "100", "--noise-sigma", "1", "--seed", "0"]
    code = main(argv + ["--oracle", "-o", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0
    res = json.loads(out.read_text())["results"]
    assert res["succeeded"] == 100
    means = res["means"]
    report(
        "means d_lmi {d_lmi:.4f}, d_projgm {d_projgm:.4f}, d_oracle {d_oracle:.4f}, d_keshavarz {d_keshavarz:.4f}".format(**means)
        + f", {elapsed:.0f} s"
    )
    assert means["d_lmi"] <= means["d_oracle"] + 1e-6
    assert abs(means["d_projgm"] - means["d_oracle"]) <= 1e-3
    assert means["d_keshavarz"] >= means["d_projgm"]
    assert elapsed < 300


def test_determinism(criterion, tmp_path):
    report = criterion(8, "determinism")
    runs = [
        ["bounds", str(FIXTURES / "box_2d.json"), "--seed", "7"],
        ["bounds", str(FIXTURES / "five_3d.json"), "--seed", "7", "--format", "csv"],
        ["compare", str(FIXTURES / "fig3_like.json"), "--samples", "5", "--seed", "7", "--oracle"],
        ["compare", str(FIXTURES / "box_2d.json"), "--samples", "5", "--seed", "7", "--format", "csv"],
    ]
    for k, argv in enumerate(runs):
        outs = []
        for rep in range(2):
            path = tmp_path / f"{k}_{rep}.out"
            assert main(argv + ["-o", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1], argv
    report(f"{len(runs)} command lines, byte-identical twice")
