from pathlib import Path

import numpy as np
import pytest

from projgm.core import Polytope, ProblemInstance, QuadraticFunction

FIXTURES = Path(__file__).parent / "fixtures"


def random_spd(rng, n, floor=0.3):
    B = rng.normal(size=(n, n))
    return B @ B.T / n + floor * np.eye(n)


def random_polytope(rng, n, r, q=0):
    """Polytope with the origin strictly inside the inequality part.

    Equality rows (if any) pass through the origin, so Slater holds.
    """
    A = rng.normal(size=(r, n))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = rng.uniform(0.5, 2.0, size=r)
    A_eq = rng.normal(size=(q, n)) if q else np.zeros((0, n))
    return Polytope(A_eq, np.zeros(q), A, b)


def random_instance(rng, n, m, constrained=False, r=4, q=0, y=None, center_scale=2.0, y_scale=3.0):
    basis = [
        QuadraticFunction.from_center(random_spd(rng, n), rng.normal(size=n) * center_scale)
        for _ in range(m)
    ]
    if y is None:
        y = rng.normal(size=n) * y_scale
    P = random_polytope(rng, n, r, q) if constrained else None
    return ProblemInstance(basis, y, P)


def identity_instance(centers, y):
    n = len(y)
    return ProblemInstance([QuadraticFunction.from_center(np.eye(n), c) for c in centers], y)


def one_dim_constrained():
    """``f = x^2 / 2`` over ``x >= 1`` with ``y = 0``: the optima set is ``{1}``."""
    return ProblemInstance(
        [QuadraticFunction(np.eye(1), [0.0])], [0.0], Polytope.from_inequalities([[-1.0]], [-1.0])
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion(record_property):
    """Tag an acceptance test; the terminal summary prints one line per tag."""

    def tag(number, title):
        record_property("criterion", f"{number}. {title}")
        return lambda detail: record_property("detail", detail)

    return tag


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call" and outcome != "error":
                continue
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" in props:
                verdict = "PASS" if outcome == "passed" else "FAIL"
                detail = f" ({props['detail']})" if "detail" in props else ""
                lines.append((props["criterion"], f"{verdict}  criterion {props['criterion']}{detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: int(t[0].split(".")[0])):
            terminalreporter.write_line(line)
