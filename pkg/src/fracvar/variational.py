r"""Variational functionals built on the combined Caputo derivative.

A :class:`Problem` bundles the grid, the orders ``alpha``, ``beta`` and the
weight ``gamma`` of the combined derivative, the Lagrangian ``L(x, y, Dy)``,
boundary conditions and optional isoperimetric constraints. This module
evaluates the cost, first variations and the residuals of the fractional
Euler-Lagrange, transversality, complementarity and regularity conditions.

All definite integrals are trapezoidal on the problem grid. Residuals that
contain a Riemann-Liouville derivative of a function with nonzero boundary
value carry ``NaN`` at the singular endpoint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from fracvar import operators as ops
from fracvar.errors import DomainError
from fracvar.expr import Binary, Const, EvalEnv, Expr, Var, evaluate, partial, variables
from fracvar.operators import Grid, SampledFunction, Side

__all__ = [
    "EndKind",
    "RightEnd",
    "BoundaryConditions",
    "ConstraintMode",
    "Constraint",
    "Problem",
    "SampledTrajectory",
    "MultiplierVector",
    "TransversalityReport",
    "fractional_derivative",
    "evaluate_functional",
    "constraint_values",
    "first_variation",
    "el_residual",
    "ibp_residual",
    "transversality_residual",
    "augmented_lagrangian",
    "augmented_el_residual",
    "complementarity_residual",
    "regularity_determinant",
    "norm_1inf",
    "interior",
    "interior_norm",
    "slack_from_trajectory",
]


# {{{ problem data


class EndKind(enum.Enum):
    FIXED = "fixed"
    FREE = "free"
    CAPPED = "cap"


@dataclass(frozen=True)
class RightEnd:
    """Right boundary condition of one component.

    ``value`` is the prescribed value for ``FIXED`` and the upper bound for
    ``CAPPED``; it is ignored for ``FREE``.
    """

    kind: EndKind
    value: float = 0.0

    @classmethod
    def fixed(cls, value: float) -> RightEnd:
        return cls(EndKind.FIXED, float(value))

    @classmethod
    def free(cls) -> RightEnd:
        return cls(EndKind.FREE)

    @classmethod
    def capped(cls, bound: float) -> RightEnd:
        return cls(EndKind.CAPPED, float(bound))


@dataclass(frozen=True)
class BoundaryConditions:
    left: tuple[float, ...]
    right: tuple[RightEnd, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "left", tuple(float(v) for v in self.left))
        right = tuple(
            r if isinstance(r, RightEnd) else RightEnd.fixed(r) for r in self.right
        )
        object.__setattr__(self, "right", right)
        if len(self.left) != len(self.right):
            raise DomainError("left and right boundary data must have the same length")


class ConstraintMode(enum.Enum):
    EQUALITY = "eq"
    INEQUALITY = "le"


@dataclass(frozen=True)
class Constraint:
    """Isoperimetric constraint ``int G dx = target`` (or ``<= target``)."""

    integrand: Expr
    target: float
    mode: ConstraintMode = ConstraintMode.EQUALITY

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ConstraintMode(self.mode))
        object.__setattr__(self, "target", float(self.target))
        if any(v.kind == "lam" for v in variables(self.integrand)):
            raise DomainError("constraint integrands may not depend on multipliers")


@dataclass(frozen=True)
class Problem:
    grid: Grid
    alpha: float
    beta: float
    gamma: float
    n_components: int
    lagrangian: Expr
    bcs: BoundaryConditions
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", ops.check_order(self.alpha))
        object.__setattr__(self, "beta", ops.check_order(self.beta))
        object.__setattr__(self, "gamma", ops.check_weight(self.gamma))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.n_components < 1:
            raise DomainError("a problem needs at least one component")
        if len(self.bcs.left) != self.n_components:
            raise DomainError(
                f"boundary data has {len(self.bcs.left)} entries, "
                f"expected {self.n_components}"
            )

        for name, e in [("lagrangian", self.lagrangian)] + [
            (f"constraint {j + 1}", c.integrand) for j, c in enumerate(self.constraints)
        ]:
            for v in variables(e):
                if v.kind == "lam":
                    raise DomainError(f"{name} may not depend on {v.name}")
                if v.kind in ("y", "dy") and not 1 <= v.index <= self.n_components:
                    raise DomainError(
                        f"{name} uses {v.name} but the problem has "
                        f"{self.n_components} component(s)"
                    )

    @property
    def r(self) -> int:
        return len(self.constraints)

    def unconstrained(self) -> Problem:
        return replace(self, constraints=())


@dataclass(frozen=True, eq=False)
class SampledTrajectory:
    """``N`` sampled components on a shared grid, stored as an ``(N, n)`` array."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] != self.grid.n:
            raise DomainError(
                f"trajectory values must have shape (N, {self.grid.n}), got {values.shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_components(cls, components: Sequence[SampledFunction]) -> SampledTrajectory:
        if not components:
            raise DomainError("a trajectory needs at least one component")
        grid = components[0].grid
        if any(c.grid != grid for c in components):
            raise DomainError("all components must share the same grid")
        return cls(grid, np.stack([c.values for c in components]))

    @classmethod
    def sample(cls, grid: Grid, *fns) -> SampledTrajectory:
        return cls.from_components([grid.sample(fn) for fn in fns])

    @property
    def n_components(self) -> int:
        return self.values.shape[0]

    @property
    def components(self) -> list[SampledFunction]:
        return [SampledFunction(self.grid, row) for row in self.values]

    def __add__(self, other: SampledTrajectory) -> SampledTrajectory:
        return SampledTrajectory(self.grid, self.values + other.values)

    def scaled(self, factor: float) -> SampledTrajectory:
        return SampledTrajectory(self.grid, factor * self.values)

    def __repr__(self) -> str:
        return f"SampledTrajectory(grid={self.grid!r}, n_components={self.n_components})"


@dataclass(frozen=True)
class MultiplierVector:
    """Multipliers ``lam[j]`` and, for inequality constraints, slack samples."""

    lam: tuple[float, ...]
    slack: tuple[SampledFunction | None, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        slack = tuple(self.slack) or (None,) * len(self.lam)
        if len(slack) != len(self.lam):
            raise DomainError("slack and multiplier counts differ")
        object.__setattr__(self, "slack", slack)


# }}}


# {{{ helpers


def _check_trajectory(p: Problem, y: SampledTrajectory, what: str = "trajectory") -> None:
    if y.grid != p.grid:
        raise DomainError(f"{what} is not sampled on the problem grid")
    if y.n_components != p.n_components:
        raise DomainError(
            f"{what} has {y.n_components} component(s), expected {p.n_components}"
        )


def fractional_derivative(p: Problem, y: SampledTrajectory) -> np.ndarray:
    """Combined Caputo derivative of every component, as an ``(N, n)`` array."""
    return np.stack(
        [ops.combined_cfd(p.alpha, p.beta, p.gamma, c).values for c in y.components]
    )


def _env(p: Problem, y: np.ndarray, dy: np.ndarray, lam: Sequence[float] = ()) -> EvalEnv:
    return EvalEnv(x=p.grid.nodes, y=list(y), dy=list(dy), lam=list(lam))


def _sampled(e: Expr, env: EvalEnv, n: int) -> np.ndarray:
    return np.broadcast_to(evaluate(e, env), (n,)).astype(np.float64)


def interior(n: int) -> slice:
    """Node range ``[2, n - 3]`` used for residual certificates."""
    return slice(2, n - 2)


def interior_norm(values: np.ndarray | SampledTrajectory) -> float:
    """Max absolute value over the interior nodes, ignoring singular markers."""
    if isinstance(values, SampledTrajectory):
        values = values.values
    values = np.atleast_2d(values)
    window = np.abs(values[:, interior(values.shape[1])])
    if np.isnan(window).all():
        return float("nan")
    return float(np.nanmax(window))


# }}}


# {{{ functionals and variations


def _integral(p: Problem, e: Expr, y: SampledTrajectory, lam: Sequence[float] = ()) -> float:
    dy = fractional_derivative(p, y)
    values = _sampled(e, _env(p, y.values, dy, lam), p.grid.n)
    return ops.trapezoid(values, p.grid.h)


def evaluate_functional(p: Problem, y: SampledTrajectory) -> float:
    """Trapezoidal value of ``J(y) = int_a^b L(x, y, Dy) dx``."""
    _check_trajectory(p, y)
    return _integral(p, p.lagrangian, y)


def constraint_values(p: Problem, y: SampledTrajectory) -> np.ndarray:
    """``int G^j dx`` for every constraint (not shifted by the targets)."""
    _check_trajectory(p, y)
    return np.array([_integral(p, c.integrand, y) for c in p.constraints])


def first_variation(
    p: Problem,
    y: SampledTrajectory,
    h: SampledTrajectory,
    mode: str = "analytic",
    *,
    eps: float = 1.0e-5,
    integrand: Expr | None = None,
) -> float:
    """Gateaux derivative of ``int integrand dx`` at ``y`` in the direction ``h``.

    ``integrand`` defaults to the Lagrangian. The analytic mode integrates
    ``sum_i dL/dy_i h_i + dL/dDy_i Dh_i``; the finite-difference mode returns the
    central difference ``(J(y + eps h) - J(y - eps h)) / (2 eps)``.
    """
    _check_trajectory(p, y)
    _check_trajectory(p, h, "direction")
    if not np.any(h.values):
        raise DomainError("the direction h must not vanish identically")
    e = p.lagrangian if integrand is None else integrand

    if mode in ("finite-difference", "fd"):
        if not eps > 0.0:
            raise DomainError(f"finite-difference step must be positive, got {eps!r}")
        plus = _integral(p, e, y + h.scaled(eps))
        minus = _integral(p, e, y + h.scaled(-eps))
        return (plus - minus) / (2.0 * eps)
    if mode != "analytic":
        raise DomainError(f"unknown variation mode {mode!r}")

    n = p.grid.n
    dy = fractional_derivative(p, y)
    dh = fractional_derivative(p, h)
    env = _env(p, y.values, dy)
    total = np.zeros(n)
    for i in range(p.n_components):
        total += _sampled(partial(e, Var("y", i + 1)), env, n) * h.values[i]
        total += _sampled(partial(e, Var("dy", i + 1)), env, n) * dh[i]
    return ops.trapezoid(total, p.grid.h)


# }}}


# {{{ Euler-Lagrange residuals


def _el_residual_of(
    p: Problem, e: Expr, y: SampledTrajectory, lam: Sequence[float] = ()
) -> SampledTrajectory:
    n = p.grid.n
    dy = fractional_derivative(p, y)
    env = _env(p, y.values, dy, lam)
    rows = []
    for i in range(p.n_components):
        direct = _sampled(partial(e, Var("y", i + 1)), env, n)
        momentum = SampledFunction(p.grid, _sampled(partial(e, Var("dy", i + 1)), env, n))
        dual = ops.combined_rlfd(p.alpha, p.beta, p.gamma, momentum).values
        rows.append(direct + dual)
    return SampledTrajectory(p.grid, np.stack(rows))


def el_residual(p: Problem, y: SampledTrajectory) -> SampledTrajectory:
    """Node-wise residual of the fractional Euler-Lagrange system.

    Component ``i`` is ``dL/dy_i + D_{1-gamma}^{beta,alpha} (dL/dDy_i)`` where
    the dual operator is :func:`~fracvar.operators.combined_rlfd` applied to the
    sampled partial. Endpoint nodes may be singular (``NaN``).
    """
    if p.constraints:
        raise DomainError(
            "el_residual is for unconstrained problems; use augmented_el_residual"
        )
    _check_trajectory(p, y)
    return _el_residual_of(p, p.lagrangian, y)


def augmented_lagrangian(p: Problem) -> Expr:
    """The augmented integrand ``F`` with symbolic multipliers ``lam<j>``.

    Equality constraints enter as ``L - lam_j G^j``; inequality constraints enter
    with the slack construction ``L + lam_j (G^j - l_j / (b - a) + phi_j^2)``.
    The slack term does not depend on ``y`` or ``Dy`` and is left out of the
    expression; :func:`augmented_integrand_values` adds it back when the value of
    ``F`` itself is needed.
    """
    width = p.grid.b - p.grid.a
    f = p.lagrangian
    for j, c in enumerate(p.constraints, start=1):
        lam = Var("lam", j)
        if c.mode is ConstraintMode.EQUALITY:
            f = Binary("-", f, Binary("*", lam, c.integrand))
        else:
            shifted = Binary("-", c.integrand, Const(c.target / width))
            f = Binary("+", f, Binary("*", lam, shifted))
    return f


def _check_multipliers(p: Problem, m: MultiplierVector) -> None:
    if len(m.lam) != p.r:
        raise DomainError(
            f"multiplier count mismatch: got {len(m.lam)}, problem has {p.r} constraint(s)"
        )
    for j, c in enumerate(p.constraints):
        slack = m.slack[j]
        if slack is not None and slack.grid != p.grid:
            raise DomainError(f"slack {j + 1} is not sampled on the problem grid")


def augmented_integrand_values(
    p: Problem, y: SampledTrajectory, m: MultiplierVector
) -> np.ndarray:
    """Node values of ``F``, including ``lam_j phi_j^2`` for inequality constraints."""
    _check_trajectory(p, y)
    _check_multipliers(p, m)
    dy = fractional_derivative(p, y)
    values = _sampled(augmented_lagrangian(p), _env(p, y.values, dy, m.lam), p.grid.n)
    for j, c in enumerate(p.constraints):
        if c.mode is ConstraintMode.INEQUALITY and m.slack[j] is not None:
            values = values + m.lam[j] * m.slack[j].values ** 2
    return values


def augmented_el_residual(
    p: Problem, y: SampledTrajectory, m: MultiplierVector
) -> SampledTrajectory:
    """Euler-Lagrange residual of the augmented integrand ``F`` (see
    :func:`augmented_lagrangian`)."""
    if p.r < 1:
        raise DomainError("augmented_el_residual needs at least one constraint")
    _check_trajectory(p, y)
    _check_multipliers(p, m)
    for j, c in enumerate(p.constraints):
        if c.mode is ConstraintMode.INEQUALITY and m.slack[j] is None:
            raise DomainError(f"inequality constraint {j + 1} needs slack samples")
    return _el_residual_of(p, augmented_lagrangian(p), y, m.lam)


def slack_from_trajectory(p: Problem, y: SampledTrajectory, j: int) -> SampledFunction:
    """Constant slack ``phi_j`` closing ``int (G^j - l_j/(b-a)) dx + int phi_j^2 dx = 0``.

    Negative gaps (violated constraints) are clipped to zero.
    """
    c = p.constraints[j]
    gap = c.target - _integral(p, c.integrand, y)
    width = p.grid.b - p.grid.a
    level = np.sqrt(max(gap, 0.0) / width)
    return SampledFunction(p.grid, np.full(p.grid.n, level))


def complementarity_residual(p: Problem, m: MultiplierVector) -> float:
    """``max_{j, x} |lam_j phi_j(x)|`` over the inequality constraints.

    Problems without inequality constraints have nothing to check and give 0.
    """
    _check_multipliers(p, m)
    worst = 0.0
    for j, c in enumerate(p.constraints):
        if c.mode is not ConstraintMode.INEQUALITY:
            continue
        slack = m.slack[j]
        if slack is None:
            raise DomainError(f"inequality constraint {j + 1} needs slack samples")
        worst = max(worst, float(np.max(np.abs(m.lam[j] * slack.values))))
    return worst


# }}}


# {{{ integration by parts


def ibp_residual(
    alpha: float, beta: float, gamma: float, f: SampledFunction, g: SampledFunction
) -> float:
    r"""Absolute defect of the integration-by-parts rule for the combined derivative.

    Compares :math:`\int g \, {}^C D_\gamma^{\alpha,\beta} f` with the boundary
    brackets plus :math:`\int f \, D_{1-\gamma}^{\beta,\alpha} g`. The latter
    integral treats the endpoint singularity of the Riemann-Liouville
    derivatives in closed form (see :func:`~fracvar.operators.integrate_against_rlfd`).
    """
    alpha = ops.check_order(alpha)
    beta = ops.check_order(beta)
    gamma = ops.check_weight(gamma)
    if f.grid != g.grid:
        raise DomainError("f and g must share a grid")

    lhs = ops.trapezoid(g.values * ops.combined_cfd(alpha, beta, gamma, f).values, f.grid.h)

    rhs = 0.0
    if gamma != 0.0:
        right_int = ops.rlfi(Side.RIGHT, 1.0 - alpha, g).values
        bracket = f.values[-1] * right_int[-1] - f.values[0] * right_int[0]
        rhs += gamma * bracket
        rhs += gamma * ops.integrate_against_rlfd(Side.RIGHT, alpha, f, g)
    if gamma != 1.0:
        left_int = ops.rlfi(Side.LEFT, 1.0 - beta, g).values
        bracket = f.values[-1] * left_int[-1] - f.values[0] * left_int[0]
        rhs -= (1.0 - gamma) * bracket
        rhs += (1.0 - gamma) * ops.integrate_against_rlfd(Side.LEFT, beta, f, g)
    return abs(lhs - rhs)


# }}}


# {{{ transversality


@dataclass(frozen=True)
class TransversalityReport:
    """Natural boundary condition at ``x = b`` for a free or capped component.

    ``status`` is ``"free"``, ``"interior"`` (capped, strictly below the bound)
    or ``"active"`` (capped, at the bound). For capped components
    ``sign_ok`` tells whether ``value <= 0`` and ``complementary`` is
    ``(y_l(b) - bound) * value``.
    """

    value: float
    status: str
    sign_ok: bool | None = None
    complementary: float | None = None

    @property
    def residual(self) -> float:
        """Violation of the applicable condition (0 when it holds exactly)."""
        if self.status == "active":
            return max(self.value, 0.0)
        return abs(self.value)


def transversality_residual(
    p: Problem, y: SampledTrajectory, l: int, *, literal: bool = False
) -> TransversalityReport:
    """Transversality condition for component ``l`` (1-based) at ``x = b``.

    Evaluates ``gamma * I_b^{1-alpha}[P](b) - (1 - gamma) * I_a^{1-beta}[Q](b)``
    with ``Q = dL/dD[y_l]``. By default ``P = Q`` as in the boundary bracket
    produced by integration by parts; ``literal=True`` uses ``P = dL/dy_l``.
    """
    _check_trajectory(p, y)
    if not 1 <= l <= p.n_components:
        raise DomainError(f"component index {l} out of range 1..{p.n_components}")
    end = p.bcs.right[l - 1]
    if end.kind is EndKind.FIXED:
        raise DomainError(f"component {l} is fixed at both ends")

    n = p.grid.n
    dy = fractional_derivative(p, y)
    env = _env(p, y.values, dy)
    q = SampledFunction(p.grid, _sampled(partial(p.lagrangian, Var("dy", l)), env, n))
    if literal:
        p_fn = SampledFunction(p.grid, _sampled(partial(p.lagrangian, Var("y", l)), env, n))
    else:
        p_fn = q

    value = 0.0
    if p.gamma != 0.0:
        value += p.gamma * ops.rlfi(Side.RIGHT, 1.0 - p.alpha, p_fn).values[-1]
    if p.gamma != 1.0:
        value -= (1.0 - p.gamma) * ops.rlfi(Side.LEFT, 1.0 - p.beta, q).values[-1]

    if end.kind is EndKind.FREE:
        return TransversalityReport(value, "free")

    yb = float(y.values[l - 1, -1])
    status = "active" if yb >= end.value else "interior"
    return TransversalityReport(
        value, status, sign_ok=value <= 0.0, complementary=(yb - end.value) * value
    )


# }}}


# {{{ regularity and norms


def regularity_determinant(
    p: Problem,
    y: SampledTrajectory,
    dirs: Sequence[SampledTrajectory],
    active: Sequence[int] | None = None,
) -> float:
    """Determinant of the matrix of first variations ``dG^i(y; h^j)``.

    ``active`` restricts the check to a subset of constraints (0-based), e.g.
    the active inequality constraints; ``dirs`` must have one entry per
    constraint considered.
    """
    idx = list(range(p.r)) if active is None else list(active)
    if not idx:
        raise DomainError("regularity_determinant needs at least one constraint")
    if len(dirs) != len(idx):
        raise DomainError(
            f"dimension mismatch: {len(dirs)} direction(s) for {len(idx)} constraint(s)"
        )
    for h in dirs:
        _check_trajectory(p, h, "direction")
        if np.any(h.values[:, [0, -1]] != 0.0):
            raise DomainError("directions must vanish at both endpoints")

    mat = np.array(
        [
            [first_variation(p, y, h, integrand=p.constraints[i].integrand) for h in dirs]
            for i in idx
        ]
    )
    return float(np.linalg.det(mat))


def norm_1inf(p: Problem, y: SampledTrajectory) -> float:
    """``max_x |y(x)| + max_x |Dy(x)|`` with the Euclidean norm on components."""
    _check_trajectory(p, y)
    dy = fractional_derivative(p, y)
    size = np.hypot.reduce(y.values, axis=0)
    dsize = np.hypot.reduce(dy, axis=0)
    return float(np.nanmax(size) + np.nanmax(dsize))


# }}}
