r"""Fractional integrals and derivatives of uniformly sampled functions.

All operators act on a :class:`SampledFunction`, i.e. real values at the nodes
of a uniform :class:`Grid` on :math:`[a, b]`. The discretizations are

* Riemann-Liouville integrals: product-trapezoidal rule. The sampled function
  is interpolated piecewise linearly and the kernel :math:`(x - t)^{\alpha - 1}`
  is integrated exactly against each linear piece.
* Caputo derivatives: the L1 scheme, i.e. the same construction applied to the
  piecewise-constant slope of the interpolant.
* Riemann-Liouville derivatives: Caputo derivative plus the closed-form
  boundary term :math:`f(a) (x - a)^{-\alpha} / \Gamma(1 - \alpha)`.

Right-sided operators are computed by reflecting :math:`x \mapsto a + b - x`,
so they agree with their left-sided counterparts bit-for-bit under reversal.

Nodes where a Riemann-Liouville derivative is infinite carry ``NaN`` (the
"singular" marker) instead of a large finite number.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg

from fracvar.errors import DomainError

__all__ = [
    "Grid",
    "SampledFunction",
    "Side",
    "OperatorKind",
    "OperatorSpec",
    "gamma_fn",
    "check_order",
    "check_weight",
    "rlfi",
    "cfd",
    "rlfd",
    "rlfd_boundary_value",
    "combined_cfd",
    "combined_rlfd",
    "cfd_adjoint",
    "combined_cfd_adjoint",
    "cfd_matrix",
    "combined_cfd_matrix",
    "trapezoid",
    "integrate_against_rlfd",
]


# {{{ gamma function

# Lanczos approximation with g = 7 and 9 coefficients
_LANCZOS_G = 7.0
_LANCZOS_COEFFS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def gamma_fn(x: float) -> float:
    """Gamma function for positive real arguments (Lanczos approximation)."""
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise DomainError(f"gamma_fn requires a finite positive argument, got {x!r}")

    # the series is most accurate for x >= 1; shift up with Gamma(x) = Gamma(x + 1) / x
    if x < 1.0:
        return gamma_fn(x + 1.0) / x

    z = x - 1.0
    series = _LANCZOS_COEFFS[0]
    for i, c in enumerate(_LANCZOS_COEFFS[1:], start=1):
        series += c / (z + i)

    t = z + _LANCZOS_G + 0.5
    # split the power to postpone overflow for large arguments
    half = t ** (0.5 * (z + 0.5))
    return _SQRT_2PI * half * half * math.exp(-t) * series


# }}}


# {{{ grid and sampled functions


@dataclass(frozen=True)
class Grid:
    """Uniform partition of :math:`[a, b]` into ``n - 1`` equal cells."""

    a: float
    b: float
    n: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise DomainError("grid endpoints must be finite")
        if not self.b > self.a:
            raise DomainError(f"grid requires b > a, got a={self.a}, b={self.b}")
        if int(self.n) != self.n or self.n < 3:
            raise DomainError(f"grid requires at least 3 nodes, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = self.a + np.arange(self.n) * self.h
        x[-1] = self.b
        x.flags.writeable = False
        return x

    def sample(self, fn: Callable[[np.ndarray], np.ndarray]) -> SampledFunction:
        values = np.asarray(fn(self.nodes), dtype=np.float64)
        return SampledFunction(self, np.broadcast_to(values, (self.n,)).copy())


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Real values at the nodes of a grid; ``NaN`` marks a singular node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.grid.n,):
            raise DomainError(
                f"expected {self.grid.n} values for the grid, got shape {values.shape}"
            )
        if np.isinf(values).any():
            raise DomainError("sampled values must be finite or NaN (singular)")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def singular(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def is_finite(self) -> bool:
        return not self.singular.any()

    def reversed(self) -> SampledFunction:
        return SampledFunction(self.grid, self.values[::-1])

    def __repr__(self) -> str:
        return f"SampledFunction(grid={self.grid!r}, values=<{self.grid.n} values>)"


def _require_finite(f: SampledFunction, what: str) -> None:
    if not f.is_finite:
        raise DomainError(f"{what} requires finite input values")


# }}}


# {{{ parameters


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @classmethod
    def parse(cls, value: Side | str) -> Side:
        if isinstance(value, Side):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"side must be 'left' or 'right', got {value!r}") from None


def check_order(value: float) -> float:
    """Validate a fractional order, which must lie strictly inside (0, 1)."""
    value = float(value)
    if not 0.0 < value < 1.0:
        raise DomainError(f"order must lie in (0,1), got {value!r}")
    return value


def check_weight(value: float) -> float:
    """Validate the convex-combination weight of the combined operators."""
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"gamma must lie in [0,1], got {value!r}")
    return value


# }}}


# {{{ left-sided kernels


def _rlfi_left(order: float, v: np.ndarray, h: float) -> np.ndarray:
    n = v.size
    m = np.arange(n, dtype=np.float64)
    p = order + 1.0

    # weights of the interior nodes depend only on the distance m = k - j
    c = np.empty(n)
    c[0] = 1.0
    c[1:] = (m[1:] + 1.0) ** p - 2.0 * m[1:] ** p + (m[1:] - 1.0) ** p

    inner = v.copy()
    inner[0] = 0.0
    acc = np.convolve(c, inner)[:n]

    # weight of the first node f(a)
    first = np.zeros(n)
    first[1:] = (m[1:] - 1.0) ** p - (m[1:] - order - 1.0) * m[1:] ** order
    acc += first * v[0]

    out = h**order / gamma_fn(order + 2.0) * acc
    out[0] = 0.0
    return out


def _l1_weights(order: float, n: int) -> np.ndarray:
    m = np.arange(n - 1, dtype=np.float64)
    return (m + 1.0) ** (1.0 - order) - m ** (1.0 - order)


def _cfd_left(order: float, v: np.ndarray, h: float) -> np.ndarray:
    n = v.size
    b = _l1_weights(order, n)
    out = np.zeros(n)
    out[1:] = np.convolve(b, np.diff(v))[: n - 1]
    return out * (h ** (-order) / gamma_fn(2.0 - order))


def _cfd_left_adjoint(order: float, v: np.ndarray, h: float) -> np.ndarray:
    n = v.size
    b = _l1_weights(order, n)
    w = np.convolve(b, v[1:][::-1])[: n - 1][::-1]
    w = w * (h ** (-order) / gamma_fn(2.0 - order))
    u = np.zeros(n)
    u[1:] += w
    u[:-1] -= w
    return u


def _one_sided(kernel, side: Side, order: float, v: np.ndarray, h: float) -> np.ndarray:
    if side is Side.LEFT:
        return kernel(order, v, h)
    return kernel(order, v[::-1], h)[::-1]


# }}}


# {{{ public operators


def rlfi(side: Side | str, alpha: float, f: SampledFunction) -> SampledFunction:
    """Riemann-Liouville fractional integral of order ``alpha``.

    The value at the initiating endpoint (``a`` for the left integral, ``b`` for
    the right one) is exactly zero.
    """
    side = Side.parse(side)
    alpha = check_order(alpha)
    _require_finite(f, "rlfi")
    return SampledFunction(f.grid, _one_sided(_rlfi_left, side, alpha, f.values, f.grid.h))


def cfd(side: Side | str, order: float, f: SampledFunction) -> SampledFunction:
    """Caputo fractional derivative by the L1 scheme.

    The right derivative includes the leading minus sign, so that for
    :math:`f(x) = x` on :math:`[0, 1]` it equals
    :math:`-(1 - x)^{1 - \\beta} / \\Gamma(2 - \\beta)`. The input is assumed to
    be sampled from an absolutely continuous function.
    """
    side = Side.parse(side)
    order = check_order(order)
    _require_finite(f, "cfd")
    return SampledFunction(f.grid, _one_sided(_cfd_left, side, order, f.values, f.grid.h))


def rlfd_boundary_value(side: Side | str, f: SampledFunction) -> float:
    """Value of ``f`` at the endpoint whose boundary term the RL derivative adds."""
    side = Side.parse(side)
    return float(f.values[0] if side is Side.LEFT else f.values[-1])


def _rlfd_values(side: Side, order: float, f: SampledFunction) -> np.ndarray:
    grid = f.grid
    values = _one_sided(_cfd_left, side, order, f.values, grid.h)
    f0 = rlfd_boundary_value(side, f)
    if f0 == 0.0:
        return values

    if side is Side.LEFT:
        dist = grid.nodes - grid.a
        end = 0
    else:
        dist = grid.b - grid.nodes
        end = grid.n - 1

    with np.errstate(divide="ignore"):
        term = f0 * dist ** (-order) / gamma_fn(1.0 - order)
    values = values + term
    values[end] = np.nan
    return values


def rlfd(side: Side | str, order: float, f: SampledFunction) -> SampledFunction:
    r"""Riemann-Liouville fractional derivative.

    Evaluated through the identity

    .. math::

        {}_a D_x^\alpha f(x) = {}^C_a D_x^\alpha f(x)
            + \frac{f(a)}{\Gamma(1 - \alpha)} (x - a)^{-\alpha},

    and its mirror image for the right derivative. When the boundary value is
    nonzero the endpoint node is marked singular (``NaN``).
    """
    side = Side.parse(side)
    order = check_order(order)
    _require_finite(f, "rlfd")
    return SampledFunction(f.grid, _rlfd_values(side, order, f))


def combined_cfd(
    alpha: float, beta: float, gamma: float, f: SampledFunction
) -> SampledFunction:
    """Convex combination ``gamma * cfd(left, alpha) + (1 - gamma) * cfd(right, beta)``."""
    alpha = check_order(alpha)
    beta = check_order(beta)
    gamma = check_weight(gamma)
    if gamma == 1.0:
        return cfd(Side.LEFT, alpha, f)
    if gamma == 0.0:
        return cfd(Side.RIGHT, beta, f)

    left = cfd(Side.LEFT, alpha, f).values
    right = cfd(Side.RIGHT, beta, f).values
    return SampledFunction(f.grid, gamma * left + (1.0 - gamma) * right)


def combined_rlfd(
    alpha: float, beta: float, gamma: float, g: SampledFunction
) -> SampledFunction:
    """Dual Riemann-Liouville combination produced by integration by parts.

    Computes ``(1 - gamma) * rlfd(left, beta, g) + gamma * rlfd(right, alpha, g)``;
    note the swapped roles of the orders. Singular markers propagate.
    """
    alpha = check_order(alpha)
    beta = check_order(beta)
    gamma = check_weight(gamma)
    if gamma == 1.0:
        return rlfd(Side.RIGHT, alpha, g)
    if gamma == 0.0:
        return rlfd(Side.LEFT, beta, g)

    left = rlfd(Side.LEFT, beta, g).values
    right = rlfd(Side.RIGHT, alpha, g).values
    return SampledFunction(g.grid, (1.0 - gamma) * left + gamma * right)


class OperatorKind(enum.Enum):
    RLFI_LEFT = "rlfi-left"
    RLFI_RIGHT = "rlfi-right"
    RLFD_LEFT = "rlfd-left"
    RLFD_RIGHT = "rlfd-right"
    CFD_LEFT = "cfd-left"
    CFD_RIGHT = "cfd-right"
    COMBINED_CFD = "combined-cfd"
    COMBINED_RLFD = "combined-rlfd"


@dataclass(frozen=True)
class OperatorSpec:
    """Selects one of the fractional operators together with its parameters.

    Left one-sided operators use ``alpha`` and right ones use ``beta``;
    ``gamma`` only matters for the combined kinds.
    """

    kind: OperatorKind
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OperatorKind(self.kind))
        object.__setattr__(self, "alpha", check_order(self.alpha))
        object.__setattr__(self, "beta", check_order(self.beta))
        object.__setattr__(self, "gamma", check_weight(self.gamma))

    def __call__(self, f: SampledFunction) -> SampledFunction:
        k = self.kind
        if k is OperatorKind.RLFI_LEFT:
            return rlfi(Side.LEFT, self.alpha, f)
        if k is OperatorKind.RLFI_RIGHT:
            return rlfi(Side.RIGHT, self.beta, f)
        if k is OperatorKind.RLFD_LEFT:
            return rlfd(Side.LEFT, self.alpha, f)
        if k is OperatorKind.RLFD_RIGHT:
            return rlfd(Side.RIGHT, self.beta, f)
        if k is OperatorKind.CFD_LEFT:
            return cfd(Side.LEFT, self.alpha, f)
        if k is OperatorKind.CFD_RIGHT:
            return cfd(Side.RIGHT, self.beta, f)
        if k is OperatorKind.COMBINED_CFD:
            return combined_cfd(self.alpha, self.beta, self.gamma, f)
        return combined_rlfd(self.alpha, self.beta, self.gamma, f)


# }}}


# {{{ adjoints and matrices


def cfd_adjoint(side: Side | str, order: float, v: np.ndarray, h: float) -> np.ndarray:
    """Transpose of the discrete Caputo operator applied to nodal weights ``v``."""
    side = Side.parse(side)
    order = check_order(order)
    return _one_sided(_cfd_left_adjoint, side, order, np.asarray(v, dtype=np.float64), h)


def combined_cfd_adjoint(
    alpha: float, beta: float, gamma: float, v: np.ndarray, h: float
) -> np.ndarray:
    gamma = check_weight(gamma)
    if gamma == 1.0:
        return cfd_adjoint(Side.LEFT, alpha, v, h)
    if gamma == 0.0:
        return cfd_adjoint(Side.RIGHT, beta, v, h)
    return gamma * cfd_adjoint(Side.LEFT, alpha, v, h) + (1.0 - gamma) * cfd_adjoint(
        Side.RIGHT, beta, v, h
    )


def cfd_matrix(side: Side | str, order: float, grid: Grid) -> np.ndarray:
    """Dense matrix of the discrete Caputo operator (rows: output nodes)."""
    side = Side.parse(side)
    order = check_order(order)
    n = grid.n
    b = _l1_weights(order, n)
    toep = scipy.linalg.toeplitz(b, np.zeros(n - 1))
    mat = np.zeros((n, n))
    mat[1:] = toep @ np.diff(np.eye(n), axis=0)
    mat *= grid.h ** (-order) / gamma_fn(2.0 - order)
    if side is Side.RIGHT:
        mat = mat[::-1, ::-1].copy()
    return mat


def combined_cfd_matrix(alpha: float, beta: float, gamma: float, grid: Grid) -> np.ndarray:
    gamma = check_weight(gamma)
    if gamma == 1.0:
        return cfd_matrix(Side.LEFT, alpha, grid)
    if gamma == 0.0:
        return cfd_matrix(Side.RIGHT, beta, grid)
    return gamma * cfd_matrix(Side.LEFT, alpha, grid) + (1.0 - gamma) * cfd_matrix(
        Side.RIGHT, beta, grid
    )


# }}}


# {{{ quadrature


def trapezoid(values: np.ndarray | SampledFunction, h: float | None = None) -> float:
    """Composite trapezoidal rule on a uniform grid.

    Singular (``NaN``) nodes are skipped: their weight is dropped, which loses
    the adjacent half cell. Use :func:`integrate_against_rlfd` when the
    singularity has a known closed form.
    """
    if isinstance(values, SampledFunction):
        h = values.grid.h
        values = values.values
    if h is None:
        raise TypeError("trapezoid needs the spacing h for raw arrays")

    v = np.where(np.isnan(values), 0.0, values)
    return float(h * (0.5 * v[0] + v[1:-1].sum() + 0.5 * v[-1]))


def integrate_against_rlfd(
    side: Side | str, order: float, f: SampledFunction, g: SampledFunction
) -> float:
    r"""Integral of ``f * rlfd(side, order, g)`` over the grid interval.

    The Caputo part is integrated with the trapezoidal rule. The boundary term
    :math:`g(a) (x - a)^{-\alpha} / \Gamma(1 - \alpha)` (or its mirror) is
    integrated exactly against the piecewise-linear interpolant of ``f``, which
    is a fractional integral of order :math:`1 - \alpha` of ``f`` evaluated at
    the singular endpoint.
    """
    side = Side.parse(side)
    order = check_order(order)
    _require_finite(f, "integrate_against_rlfd")
    _require_finite(g, "integrate_against_rlfd")
    regular = _one_sided(_cfd_left, side, order, g.values, g.grid.h)
    total = trapezoid(f.values * regular, f.grid.h)

    g0 = rlfd_boundary_value(side, g)
    if g0 != 0.0:
        if side is Side.LEFT:
            total += g0 * rlfi(Side.RIGHT, 1.0 - order, f).values[0]
        else:
            total += g0 * rlfi(Side.LEFT, 1.0 - order, f).values[-1]
    return total


# }}}
