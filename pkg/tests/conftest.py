import numpy as np
import pytest

from fracvar.expr import parse
from fracvar.operators import Grid
from fracvar.variational import BoundaryConditions, Constraint, Problem, RightEnd


def make_problem(
    lagrangian,
    *,
    n=501,
    alpha=0.5,
    beta=0.5,
    gamma=1.0,
    a=0.0,
    b=1.0,
    n_components=1,
    left=None,
    right=None,
    constraints=(),
):
    left = (0.0,) * n_components if left is None else tuple(left)
    right = (1.0,) * n_components if right is None else tuple(right)
    cons = tuple(
        c if isinstance(c, Constraint) else Constraint(parse(c[0], n_components), c[1], c[2] if len(c) > 2 else "eq")
        for c in constraints
    )
    return Problem(
        Grid(a, b, n),
        alpha,
        beta,
        gamma,
        n_components,
        parse(lagrangian, n_components),
        BoundaryConditions(left, right),
        cons,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


FREE = RightEnd.free()


# {{{ acceptance summary

_ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, title: str, passed: bool, details: str) -> None:
    _ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {details}"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])


# }}}
