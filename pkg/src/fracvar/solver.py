"""Direct method: discretize the trajectory on the grid and minimize.

The unknowns are the nodal values of every component, except those fixed by
the boundary conditions. The discretized cost is the trapezoidal sum of the
Lagrangian, with the combined Caputo derivative taken by the L1 scheme, and
its exact gradient is assembled with the transposed operator weights.

Minimization is deterministic gradient descent with Armijo backtracking in a
fixed quadratic metric built from the operator matrix (see :func:`solve`).
Isoperimetric constraints are handled by an outer secant (Broyden) iteration
on the multipliers around inner unconstrained solves. The optimality
conditions from :mod:`fracvar.variational` are evaluated on the result and
reported as certificates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from fracvar import operators as ops
from fracvar.errors import DomainError, EvalError
from fracvar.expr import Binary, Const, EvalEnv, Expr, Var, evaluate, partial
from fracvar.variational import (
    Constraint,
    ConstraintMode,
    EndKind,
    MultiplierVector,
    Problem,
    SampledTrajectory,
    TransversalityReport,
    augmented_el_residual,
    complementarity_residual,
    el_residual,
    evaluate_functional,
    fractional_derivative,
    interior,
    interior_norm,
    regularity_determinant,
    slack_from_trajectory,
    transversality_residual,
)

log = logging.getLogger(__name__)

__all__ = [
    "SolveOptions",
    "SolveReport",
    "discrete_gradient",
    "free_mask",
    "initial_guess",
    "solve",
    "solve_isoperimetric",
    "random_search",
]

REGULARITY_THRESHOLD = 1.0e-12


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 5000
    gradient_tolerance: float = 1.0e-8
    initial_step: float = 1.0
    shrink: float = 0.5
    slope_fraction: float = 1.0e-4
    multiplier_tolerance: float = 1.0e-8
    max_outer_iterations: int = 50

    def __post_init__(self) -> None:
        if self.max_iterations < 1 or self.max_outer_iterations < 1:
            raise DomainError("iteration limits must be positive")
        for name in ("gradient_tolerance", "initial_step", "slope_fraction", "multiplier_tolerance"):
            if not getattr(self, name) > 0.0:
                raise DomainError(f"{name} must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise DomainError("shrink must lie in (0, 1)")


@dataclass
class SolveReport:
    trajectory: SampledTrajectory
    objective: float
    gradient_norm: float
    iterations: int
    el_residual_norm: float
    #: a posteriori bound: discrete stationarity plus the gap between the
    #: discrete adjoint and the Riemann-Liouville dual operator
    el_residual_bound: float
    transversality: dict[int, TransversalityReport]
    converged: bool
    multipliers: MultiplierVector | None = None
    constraint_residuals: tuple[float, ...] = ()
    complementarity: float | None = None
    regularity_determinant: float | None = None
    regularity_warning: bool = False
    objective_history: list[float] = field(default_factory=list, repr=False)
    messages: list[str] = field(default_factory=list)


# {{{ discretization


def free_mask(p: Problem) -> np.ndarray:
    """Boolean ``(N, n)`` mask of the unknowns: interior nodes and free/capped ends."""
    mask = np.zeros((p.n_components, p.grid.n), dtype=bool)
    mask[:, 1:-1] = True
    for i, end in enumerate(p.bcs.right):
        if end.kind is not EndKind.FIXED:
            mask[i, -1] = True
    return mask


def _caps(p: Problem) -> dict[int, float]:
    return {i: end.value for i, end in enumerate(p.bcs.right) if end.kind is EndKind.CAPPED}


def initial_guess(p: Problem) -> SampledTrajectory:
    """Linear interpolant of the boundary data.

    Free right ends start at the left boundary value; capped ones at the
    smaller of the left value and the cap.
    """
    x = p.grid.nodes
    t = (x - p.grid.a) / (p.grid.b - p.grid.a)
    rows = []
    for ya, end in zip(p.bcs.left, p.bcs.right):
        if end.kind is EndKind.FIXED:
            yb = end.value
        elif end.kind is EndKind.FREE:
            yb = ya
        else:
            yb = min(ya, end.value)
        rows.append(ya + (yb - ya) * t)
    return SampledTrajectory(p.grid, np.stack(rows))


def _weights(grid: ops.Grid) -> np.ndarray:
    w = np.full(grid.n, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return w


class _Discretization:
    """Objective and gradient of ``int F dx`` for a fixed integrand."""

    def __init__(self, p: Problem, integrand: Expr, lam: Sequence[float] = ()) -> None:
        self.p = p
        self.integrand = integrand
        self.lam = list(lam)
        self.w = _weights(p.grid)
        self.d_y = [partial(integrand, Var("y", i + 1)) for i in range(p.n_components)]
        self.d_dy = [partial(integrand, Var("dy", i + 1)) for i in range(p.n_components)]

    def env(self, y: np.ndarray) -> tuple[EvalEnv, np.ndarray]:
        dy = fractional_derivative(self.p, SampledTrajectory(self.p.grid, y))
        return EvalEnv(x=self.p.grid.nodes, y=list(y), dy=list(dy), lam=self.lam), dy

    def _sampled(self, e: Expr, env: EvalEnv) -> np.ndarray:
        return np.broadcast_to(evaluate(e, env), (self.p.grid.n,))

    def objective(self, y: np.ndarray) -> float:
        env, _ = self.env(y)
        return ops.trapezoid(self._sampled(self.integrand, env), self.p.grid.h)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        p = self.p
        env, _ = self.env(y)
        grad = np.empty_like(y)
        for i in range(p.n_components):
            direct = self.w * self._sampled(self.d_y[i], env)
            momentum = self.w * self._sampled(self.d_dy[i], env)
            grad[i] = direct + ops.combined_cfd_adjoint(
                p.alpha, p.beta, p.gamma, momentum, p.grid.h
            )
        return grad

    def metric(self, y: np.ndarray, mask: np.ndarray) -> list:
        """Cholesky factors of a per-component SPD metric on the free nodes.

        The metric is ``C^T diag(w |F_DD|) C + diag(w |F_yy|)`` at ``y``, i.e.
        the Hessian of the discretized cost with the mixed terms dropped.
        """
        p = self.p
        env, _ = self.env(y)
        cmat = ops.combined_cfd_matrix(p.alpha, p.beta, p.gamma, p.grid)
        factors = []
        for i in range(p.n_components):
            free = mask[i]
            dd = np.abs(self._sampled(partial(self.d_dy[i], Var("dy", i + 1)), env))
            yy = np.abs(self._sampled(partial(self.d_y[i], Var("y", i + 1)), env))
            scale = max(1.0, float(np.max(dd)), float(np.max(yy)))
            dd = np.maximum(dd, 1.0e-6 * scale)

            c = cmat[:, free]
            m = c.T @ (self.w[:, None] * dd[:, None] * c)
            m[np.diag_indices_from(m)] += (self.w * yy)[free] + 1.0e-10 * scale * p.grid.h
            try:
                factors.append(scipy.linalg.cho_factor(m))
            except np.linalg.LinAlgError:
                factors.append(None)
        return factors


def discrete_gradient(p: Problem, y: SampledTrajectory) -> SampledTrajectory:
    """Exact gradient of the discretized cost with respect to the nodal values.

    Entries at nodes fixed by the boundary conditions are zero.
    """
    if y.grid != p.grid or y.n_components != p.n_components:
        raise DomainError("trajectory does not match the problem")
    grad = _Discretization(p, p.lagrangian).gradient(y.values)
    grad[~free_mask(p)] = 0.0
    return SampledTrajectory(p.grid, grad)


# }}}


# {{{ descent


@dataclass
class _DescentResult:
    y: np.ndarray
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool
    history: list[float]
    message: str


def _project(y: np.ndarray, caps: dict[int, float]) -> np.ndarray:
    for i, cap in caps.items():
        if y[i, -1] > cap:
            y[i, -1] = cap
    return y


def _bound_active(y: np.ndarray, grad: np.ndarray, caps: dict[int, float]) -> np.ndarray:
    """Mask of capped endpoints sitting at the cap with the gradient pushing up."""
    active = np.zeros_like(y, dtype=bool)
    for i, cap in caps.items():
        if y[i, -1] >= cap and grad[i, -1] < 0.0:
            active[i, -1] = True
    return active


def _safe_objective(disc: _Discretization, y: np.ndarray) -> float:
    try:
        value = disc.objective(y)
    except EvalError:
        return math.inf
    return value if math.isfinite(value) else math.inf


def _descend(
    disc: _Discretization, y0: np.ndarray, opts: SolveOptions, refresh: int = 25
) -> _DescentResult:
    p = disc.p
    mask = free_mask(p)
    caps = _caps(p)
    y = _project(y0.copy(), caps)
    fval = disc.objective(y)
    history = [fval]
    factors = None
    factor_mask = None

    for it in range(opts.max_iterations + 1):
        grad = disc.gradient(y)
        grad[~mask] = 0.0
        active = _bound_active(y, grad, caps)
        work = mask & ~active
        pgrad = np.where(work, grad, 0.0)
        gnorm = float(np.max(np.abs(pgrad))) if work.any() else 0.0
        if gnorm <= opts.gradient_tolerance:
            return _DescentResult(y, fval, gnorm, it, True, history, "gradient tolerance reached")
        if it == opts.max_iterations:
            break

        if factors is None or it % refresh == 0 or not np.array_equal(work, factor_mask):
            factors = disc.metric(y, work)
            factor_mask = work.copy()

        direction = np.zeros_like(y)
        for i, factor in enumerate(factors):
            g = grad[i, work[i]]
            if g.size == 0:
                continue
            direction[i, work[i]] = -(scipy.linalg.cho_solve(factor, g) if factor else g)

        # Armijo backtracking along the projected path
        step = opts.initial_step
        accepted = False
        for _ in range(60):
            trial = _project(y + step * direction, caps)
            ftrial = _safe_objective(disc, trial)
            slope = float(np.sum(grad * (trial - y)))
            if ftrial <= fval + opts.slope_fraction * slope:
                accepted = True
                break
            # predicted decrease below roundoff: accept any non-increase
            if abs(slope) <= 4.0 * np.finfo(float).eps * max(1.0, abs(fval)) and ftrial <= fval:
                accepted = True
                break
            step *= opts.shrink
        if not accepted:
            return _DescentResult(y, fval, gnorm, it, False, history, "line search failed")

        y, fval = trial, ftrial
        history.append(fval)

    return _DescentResult(y, fval, gnorm, opts.max_iterations, False, history, "iteration limit reached")


# }}}


# {{{ certificates


def _residual_bound(disc: _Discretization, y: np.ndarray, residual: np.ndarray) -> float:
    """Interior residual bound from the discrete stationarity conditions.

    The discrete optimality system is ``grad / w``; the recorded bound is its
    interior size plus the interior gap between it and ``residual``.
    """
    discrete = disc.gradient(y) / disc.w
    window = interior(disc.p.grid.n)
    gap = np.abs(residual[:, window] - discrete[:, window])
    return float(np.nanmax(gap) + np.max(np.abs(discrete[:, window])))


def _transversality(p: Problem, y: SampledTrajectory) -> dict[int, TransversalityReport]:
    out = {}
    for i, end in enumerate(p.bcs.right, start=1):
        if end.kind is not EndKind.FIXED:
            out[i] = transversality_residual(p, y, i)
    return out


def _bump_directions(p: Problem, count: int) -> list[SampledTrajectory]:
    t = (p.grid.nodes - p.grid.a) / (p.grid.b - p.grid.a)
    dirs = []
    for j in range(1, count + 1):
        bump = np.sin(j * np.pi * t)
        bump[0] = bump[-1] = 0.0
        dirs.append(SampledTrajectory(p.grid, np.tile(bump, (p.n_components, 1))))
    return dirs


# }}}


# {{{ drivers


def solve(p: Problem, opts: SolveOptions | None = None) -> SolveReport:
    """Minimize the discretized cost of an unconstrained problem.

    Starts from :func:`initial_guess`. Each iteration solves with a fixed SPD
    metric (the Hessian of the quadratic part of the Lagrangian in the
    derivative, refreshed every 25 iterations) and backtracks until the Armijo
    condition holds. Capped right ends are projected onto ``y_l(b) <= cap``.

    Non-convergence is reported through ``converged=False`` and ``messages``.
    """
    opts = opts or SolveOptions()
    if p.constraints:
        raise DomainError("solve handles unconstrained problems; use solve_isoperimetric")

    disc = _Discretization(p, p.lagrangian)
    result = _descend(disc, initial_guess(p).values, opts)
    y = SampledTrajectory(p.grid, result.y)

    residual = el_residual(p, y).values
    report = SolveReport(
        trajectory=y,
        objective=result.objective,
        gradient_norm=result.gradient_norm,
        iterations=result.iterations,
        el_residual_norm=interior_norm(residual),
        el_residual_bound=_residual_bound(disc, result.y, residual),
        transversality=_transversality(p, y),
        converged=result.converged,
        objective_history=result.history,
        messages=[result.message],
    )
    for l, tr in report.transversality.items():
        if tr.status == "active" and not tr.sign_ok:
            report.messages.append(f"component {l}: capped-end sign condition violated")
    if not result.converged:
        log.warning("solve did not converge: %s", result.message)
    return report


def _as_equalities(p: Problem, active: Sequence[int]) -> Problem:
    """Problem whose constraints are the active ones, all treated as equalities."""
    cons = tuple(
        Constraint(p.constraints[j].integrand, p.constraints[j].target, ConstraintMode.EQUALITY)
        for j in active
    )
    return replace(p, constraints=cons)


def _equality_lagrangian(p: Problem, active: Sequence[int], lam: Sequence[float]) -> Expr:
    f = p.lagrangian
    for j, value in zip(active, lam):
        f = Binary("-", f, Binary("*", Const(value), p.constraints[j].integrand))
    return f


def _inner(p: Problem, active, lam, y0, opts) -> tuple[_DescentResult, np.ndarray]:
    disc = _Discretization(p, _equality_lagrangian(p, active, lam))
    result = _descend(disc, y0, opts)
    y = SampledTrajectory(p.grid, result.y)
    values = np.array([_constraint_value(p, j, y) - p.constraints[j].target for j in active])
    return result, values


def _multiplier_solve(p: Problem, active: list[int], y0: np.ndarray, opts: SolveOptions):
    """Broyden (multivariate secant) iteration on the active multipliers."""
    k = len(active)
    lam = np.zeros(k)
    result, res = _inner(p, active, lam, y0, opts)
    iterations = result.iterations
    if k == 0 or np.max(np.abs(res)) <= opts.multiplier_tolerance:
        return lam, result, res, iterations, result.converged

    # initial Jacobian by unit finite differences in each multiplier
    jac = np.empty((k, k))
    for col in range(k):
        probe = lam.copy()
        probe[col] += 1.0
        r_probe, res_probe = _inner(p, active, probe, result.y, opts)
        iterations += r_probe.iterations
        jac[:, col] = res_probe - res

    for _ in range(opts.max_outer_iterations):
        try:
            delta = -np.linalg.solve(jac, res)
        except np.linalg.LinAlgError:
            return lam, result, res, iterations, False
        lam_new = lam + delta
        result_new, res_new = _inner(p, active, lam_new, result.y, opts)
        iterations += result_new.iterations
        jac += np.outer(res_new - res - jac @ delta, delta) / float(delta @ delta)
        lam, result, res = lam_new, result_new, res_new
        if np.max(np.abs(res)) <= opts.multiplier_tolerance:
            return lam, result, res, iterations, result.converged
    return lam, result, res, iterations, False


def solve_isoperimetric(p: Problem, opts: SolveOptions | None = None) -> SolveReport:
    """Minimize subject to isoperimetric constraints.

    Multipliers of the active constraints are found by a secant iteration that
    drives ``int G^j dx - l_j`` to zero, each step solving the unconstrained
    problem for ``L - sum lam_j G^j``. Inequality constraints use an active
    set: violated ones are activated, and active ones whose multiplier has the
    wrong sign are released. Reported multipliers follow the slack
    convention for inequality constraints (``F = L + lam_j (G^j - ...)``, so
    ``lam_j >= 0`` at a minimizer) and the ``F = L - lam_j G^j`` convention for
    equality constraints.
    """
    opts = opts or SolveOptions()
    if p.r < 1:
        raise DomainError("solve_isoperimetric needs at least one constraint")

    tol = opts.multiplier_tolerance
    equalities = [j for j, c in enumerate(p.constraints) if c.mode is ConstraintMode.EQUALITY]
    inequalities = [j for j, c in enumerate(p.constraints) if c.mode is ConstraintMode.INEQUALITY]
    active_ineq: set[int] = set()
    y0 = initial_guess(p).values
    total_iterations = 0
    messages: list[str] = []

    for _ in range(len(inequalities) + 2):
        active = sorted(equalities + sorted(active_ineq))
        lam_active, result, res, its, ok = _multiplier_solve(p, active, y0, opts)
        total_iterations += its
        y0 = result.y
        lam_full = np.zeros(p.r)
        lam_full[active] = lam_active

        y = SampledTrajectory(p.grid, result.y)
        changed = False
        for j in inequalities:
            value = _constraint_value(p, j, y)
            c = p.constraints[j]
            if j not in active_ineq and value > c.target + tol:
                active_ineq.add(j)
                changed = True
            elif j in active_ineq and lam_full[j] > 0.0:
                # minimization with G <= l requires L + mu G, mu >= 0, i.e. lam_eq <= 0
                active_ineq.discard(j)
                changed = True
        if not changed:
            break
    else:
        messages.append("active set did not settle")
        ok = False

    y = SampledTrajectory(p.grid, result.y)
    lam_report = []
    slack = []
    for j, c in enumerate(p.constraints):
        if c.mode is ConstraintMode.EQUALITY:
            lam_report.append(float(lam_full[j]))
            slack.append(None)
        elif j in active_ineq:
            lam_report.append(float(-lam_full[j]))
            slack.append(ops.SampledFunction(p.grid, np.zeros(p.grid.n)))
        else:
            lam_report.append(0.0)
            slack.append(slack_from_trajectory(p, y, j))
    multipliers = MultiplierVector(tuple(lam_report), tuple(slack))

    residual = augmented_el_residual(p, y, multipliers).values
    disc = _Discretization(p, _equality_lagrangian(p, active, lam_active))
    constraint_res = tuple(
        _constraint_value(p, j, y) - p.constraints[j].target for j in range(p.r)
    )

    det = None
    warning = False
    if active:
        act_problem = _as_equalities(p, active)
        det = regularity_determinant(act_problem, y, _bump_directions(p, len(active)))
        if abs(det) < REGULARITY_THRESHOLD:
            warning = True
            messages.append("regularity determinant vanishes: multiplier rule may not apply")

    converged = bool(ok and result.converged)
    if not result.converged:
        messages.append(f"inner solve: {result.message}")
    elif not ok:
        messages.append("multiplier iteration did not converge")
    else:
        messages.append("converged")

    report = SolveReport(
        trajectory=y,
        objective=evaluate_functional(p, y),
        gradient_norm=result.gradient_norm,
        iterations=total_iterations,
        el_residual_norm=interior_norm(residual),
        el_residual_bound=_residual_bound(disc, result.y, residual),
        transversality=_transversality(p, y),
        converged=converged,
        multipliers=multipliers,
        constraint_residuals=constraint_res,
        complementarity=complementarity_residual(p, multipliers),
        regularity_determinant=det,
        regularity_warning=warning,
        objective_history=result.history,
        messages=messages,
    )
    if not converged:
        log.warning("solve_isoperimetric did not converge: %s", "; ".join(messages))
    return report


def _constraint_value(p: Problem, j: int, y: SampledTrajectory) -> float:
    dy = fractional_derivative(p, y)
    env = EvalEnv(x=p.grid.nodes, y=list(y.values), dy=list(dy))
    values = np.broadcast_to(evaluate(p.constraints[j].integrand, env), (p.grid.n,))
    return ops.trapezoid(values, p.grid.h)


# }}}


def random_search(
    p: Problem, samples: int, seed: int = 42, spread: float = 2.0
) -> tuple[float, SampledTrajectory]:
    """Best of ``samples`` random feasible trajectories (a brute-force oracle).

    Free nodal values are drawn uniformly from the boundary-data range widened
    by ``spread`` on both sides; capped ends are clipped to their bound. Only
    :func:`~fracvar.variational.evaluate_functional` is used.
    """
    if samples < 1:
        raise DomainError("random_search needs at least one sample")
    rng = np.random.default_rng(seed)
    mask = free_mask(p)
    caps = _caps(p)
    base = initial_guess(p).values
    known = list(p.bcs.left) + [e.value for e in p.bcs.right if e.kind is not EndKind.FREE]
    low, high = min(known) - spread, max(known) + spread

    best, best_y = math.inf, base
    for _ in range(samples):
        y = base.copy()
        y[mask] = rng.uniform(low, high, size=int(mask.sum()))
        y = _project(y, caps)
        try:
            value = evaluate_functional(p, SampledTrajectory(p.grid, y))
        except EvalError:
            continue
        if value < best:
            best, best_y = value, y
    return best, SampledTrajectory(p.grid, best_y)
