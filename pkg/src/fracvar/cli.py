"""Command-line interface.

Exit codes::

    0  success / check passed / solver converged
    1  numeric domain error (e.g. an order outside (0,1))
    2  input or parse error (bad flags, unreadable or malformed files)
    3  check failed (residual above --tol)
    4  solver did not converge
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence, TextIO

import numpy as np

from fracvar import __version__
from fracvar.errors import DomainError, ExprError, FracVarError
from fracvar.expr import evaluate, parse, EvalEnv
from fracvar.fileio import (
    InputError,
    load_problem,
    read_function_csv,
    read_trajectory_csv,
    write_function_csv,
    write_trajectory_csv,
)
from fracvar.operators import Grid, OperatorKind, OperatorSpec, SampledFunction
from fracvar.solver import SolveOptions, random_search, solve, solve_isoperimetric
from fracvar.variational import (
    MultiplierVector,
    Problem,
    SampledTrajectory,
    augmented_el_residual,
    complementarity_residual,
    el_residual,
    ibp_residual,
    interior_norm,
    regularity_determinant,
    slack_from_trajectory,
    transversality_residual,
    ConstraintMode,
)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_INPUT = 2
EXIT_CHECK_FAILED = 3
EXIT_NOT_CONVERGED = 4

EXPRESSION_HELP = """\
expression grammar:
  numbers      2, 0.5, 1e-3
  variables    x, y<i>, D[y<i>] (combined Caputo derivative of y<i>), lam<j>
  functions    sin cos exp log sqrt, written f(...)
  operators    ^ (right-assoc.) > unary - > * / > + -  (left-assoc.)
"""


class _Fail(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _num(value: float) -> str:
    value = float(value)
    if np.isnan(value):
        return "NaN"
    return format(value, ".12g")


# {{{ helpers


def _sample_expr(text: str, grid: Grid) -> SampledFunction:
    try:
        e = parse(text, 0, 0)
    except ExprError as exc:
        raise _Fail(EXIT_INPUT, f"--expr: {exc}") from None
    values = evaluate(e, EvalEnv(x=grid.nodes))
    return SampledFunction(grid, np.broadcast_to(values, (grid.n,)).copy())


def _function_arg(path: str | None, text: str | None, args, what: str) -> SampledFunction:
    if path is not None:
        f = read_function_csv(path)
        if args.a is not None and args.a != f.grid.a or args.b is not None and args.b != f.grid.b:
            raise _Fail(EXIT_INPUT, f"{path}: grid [{f.grid.a}, {f.grid.b}] does not match --a/--b")
        return f
    if text is None:
        raise _Fail(EXIT_INPUT, f"{what}: give either a CSV file or an expression")
    if args.grid is None:
        raise _Fail(EXIT_INPUT, f"{what}: --grid is required with an expression")
    a = 0.0 if args.a is None else args.a
    b = 1.0 if args.b is None else args.b
    return _sample_expr(text, Grid(a, b, args.grid))


def _parse_list(text: str, what: str) -> list[float]:
    inner = text.strip()
    if inner.startswith("[") and inner.endswith("]"):
        inner = inner[1:-1]
    try:
        return [float(v) for v in inner.split(",") if v.strip()]
    except ValueError:
        raise _Fail(EXIT_INPUT, f"{what}: expected a comma-separated list of reals") from None


def _trajectory(path: str, p: Problem) -> SampledTrajectory:
    y = read_trajectory_csv(path)
    if y.grid != p.grid:
        raise _Fail(EXIT_INPUT, f"{path}: grid does not match the problem grid")
    if y.n_components != p.n_components:
        raise _Fail(EXIT_INPUT, f"{path}: expected {p.n_components} component(s)")
    return y


def _report_check(out: TextIO, name: str, values: list[tuple[str, float]], passed: bool, tol: float) -> int:
    out.write(f"check = {name}\n")
    for key, value in values:
        out.write(f"{key} = {_num(value)}\n")
    out.write(f"tolerance = {_num(tol)}\n")
    out.write(f"status = {'pass' if passed else 'fail'}\n")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


# }}}


# {{{ commands


def cmd_operator(args, out: TextIO) -> int:
    spec = OperatorSpec(OperatorKind(args.kind), args.alpha, args.beta, args.gamma)
    f = _function_arg(args.input, args.expr, args, "operator input")
    result = spec(f)
    if args.out:
        with open(args.out, "w", newline="") as stream:
            write_function_csv(result, stream)
    else:
        write_function_csv(result, out)
    return EXIT_OK


def cmd_check(args, out: TextIO) -> int:
    tol = args.tol
    if args.check == "ibp":
        f = _function_arg(args.f, args.f_expr, args, "f")
        g = _function_arg(args.g, args.g_expr, args, "g")
        if f.grid != g.grid:
            raise _Fail(EXIT_INPUT, "f and g must be sampled on the same grid")
        residual = ibp_residual(args.alpha, args.beta, args.gamma, f, g)
        return _report_check(out, "ibp", [("residual", residual)], residual <= tol, tol)

    p = load_problem(args.problem)

    if args.check == "el":
        y = _trajectory(args.trajectory, p)
        if p.r:
            if args.lam is None:
                raise _Fail(EXIT_INPUT, "problem has constraints: --lam is required")
            m = _multipliers(p, _parse_list(args.lam, "--lam"), y)
            res = augmented_el_residual(p, y, m)
        else:
            res = el_residual(p, y)
        rows = [(f"residual[y{i + 1}]", interior_norm(res.values[i])) for i in range(p.n_components)]
        worst = interior_norm(res)
        return _report_check(out, "el", rows + [("residual", worst)], worst <= tol, tol)

    if args.check == "transversality":
        y = _trajectory(args.trajectory, p)
        rep = transversality_residual(p, y, args.component, literal=args.literal)
        rows = [("value", rep.value), ("residual", rep.residual)]
        if rep.complementary is not None:
            rows.append(("complementary", rep.complementary))
        out.write(f"component = y{args.component}\nendpoint = {rep.status}\n")
        passed = rep.residual <= tol
        if rep.status == "active":
            out.write(f"sign_ok = {str(rep.sign_ok).lower()}\n")
        return _report_check(out, "transversality", rows, passed, tol)

    if args.check == "regularity":
        y = _trajectory(args.trajectory, p)
        dirs = [_trajectory(path, p) for path in args.direction or []]
        det = regularity_determinant(p, y, dirs)
        # regular means a determinant bounded away from zero
        return _report_check(out, "regularity", [("determinant", det)], abs(det) > tol, tol)

    if args.check == "complementarity":
        lam = _parse_list(args.lam or "", "--lam")
        y = _trajectory(args.trajectory, p) if args.trajectory else None
        m = _multipliers(p, lam, y, args.slack)
        residual = complementarity_residual(p, m)
        return _report_check(out, "complementarity", [("residual", residual)], residual <= tol, tol)

    raise AssertionError(args.check)


def _multipliers(p: Problem, lam: list[float], y: SampledTrajectory | None, slack_path: str | None = None) -> MultiplierVector:
    if len(lam) != p.r:
        raise _Fail(EXIT_INPUT, f"--lam: expected {p.r} value(s), got {len(lam)}")
    slacks: list[SampledFunction | None] = [None] * p.r
    inequalities = [j for j, c in enumerate(p.constraints) if c.mode is ConstraintMode.INEQUALITY]
    if slack_path is not None:
        table = read_trajectory_csv(slack_path)
        if table.grid != p.grid or table.n_components != len(inequalities):
            raise _Fail(
                EXIT_INPUT,
                f"{slack_path}: expected {len(inequalities)} slack column(s) on the problem grid",
            )
        for col, j in enumerate(inequalities):
            slacks[j] = SampledFunction(p.grid, table.values[col])
    elif inequalities:
        if y is None:
            raise _Fail(EXIT_INPUT, "inequality constraints need --slack or --trajectory")
        for j in inequalities:
            slacks[j] = slack_from_trajectory(p, y, j)
    return MultiplierVector(tuple(lam), tuple(slacks))


def cmd_solve(args, out: TextIO) -> int:
    p = load_problem(args.problem)
    opts = SolveOptions(
        max_iterations=args.max_iter,
        gradient_tolerance=args.tol,
        multiplier_tolerance=args.tol,
    )
    report = solve_isoperimetric(p, opts) if p.r else solve(p, opts)

    if args.out:
        with open(args.out, "w", newline="") as stream:
            write_trajectory_csv(report.trajectory, stream)

    lines = [
        ("converged", str(report.converged).lower()),
        ("objective", _num(report.objective)),
        ("gradient_norm", _num(report.gradient_norm)),
        ("iterations", str(report.iterations)),
        ("el_residual_norm", _num(report.el_residual_norm)),
        ("el_residual_bound", _num(report.el_residual_bound)),
    ]
    for l, tr in report.transversality.items():
        lines.append((f"transversality[y{l}]", f"{_num(tr.value)} ({tr.status})"))
    if report.multipliers is not None:
        for j, lam in enumerate(report.multipliers.lam, start=1):
            lines.append((f"lambda{j}", _num(lam)))
        for j, res in enumerate(report.constraint_residuals, start=1):
            lines.append((f"constraint_residual{j}", _num(res)))
        lines.append(("complementarity", _num(report.complementarity)))
        if report.regularity_determinant is not None:
            lines.append(("regularity_determinant", _num(report.regularity_determinant)))
    if args.oracle_samples > 0:
        best, _ = random_search(p, args.oracle_samples, args.seed)
        lines.append(("oracle_best", _num(best)))
        lines.append(("oracle_ok", str(report.objective <= best + 1.0e-6).lower()))
    lines.append(("message", "; ".join(report.messages)))

    for key, value in lines:
        out.write(f"{key} = {value}\n")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


# }}}


# {{{ argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracvar",
        description="Fractional calculus of variations with the combined Caputo derivative.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EXPRESSION_HELP,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def grid_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--a", type=float, default=None, help="left endpoint (default 0)")
        p.add_argument("--b", type=float, default=None, help="right endpoint (default 1)")
        p.add_argument("--grid", type=int, default=None, help="number of grid nodes")

    def order_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--alpha", type=float, default=0.5)
        p.add_argument("--beta", type=float, default=0.5)
        p.add_argument("--gamma", type=float, default=1.0)

    op = sub.add_parser(
        "operator",
        help="apply a fractional operator, writing x,value CSV",
        epilog=EXPRESSION_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    op.add_argument("--kind", required=True, choices=[k.value for k in OperatorKind])
    order_flags(op)
    grid_flags(op)
    source = op.add_mutually_exclusive_group(required=True)
    source.add_argument("--input", help="x,value CSV file")
    source.add_argument("--expr", help="expression in x, sampled on --grid nodes")
    op.add_argument("--out", help="write CSV here instead of standard output")

    check = sub.add_parser("check", help="evaluate an optimality-condition residual")
    checks = check.add_subparsers(dest="check", required=True)

    def tol_flag(p: argparse.ArgumentParser) -> None:
        p.add_argument("--tol", type=float, default=1.0e-2)

    ibp = checks.add_parser("ibp", help="integration-by-parts identity")
    order_flags(ibp)
    grid_flags(ibp)
    fsrc = ibp.add_mutually_exclusive_group(required=True)
    fsrc.add_argument("--f", help="x,value CSV for f")
    fsrc.add_argument("--f-expr", help="expression in x for f")
    gsrc = ibp.add_mutually_exclusive_group(required=True)
    gsrc.add_argument("--g", help="x,value CSV for g")
    gsrc.add_argument("--g-expr", help="expression in x for g")
    tol_flag(ibp)

    el = checks.add_parser("el", help="Euler-Lagrange residual (interior max)")
    el.add_argument("problem")
    el.add_argument("--trajectory", required=True)
    el.add_argument("--lam", help="multipliers, e.g. 6 or [6,0]")
    tol_flag(el)

    tr = checks.add_parser("transversality", help="free/capped right-end condition")
    tr.add_argument("problem")
    tr.add_argument("--trajectory", required=True)
    tr.add_argument("--component", type=int, default=1, help="1-based component index")
    tr.add_argument("--literal", action="store_true", help="use dL/dy_l in the right-sided term")
    tol_flag(tr)

    reg = checks.add_parser("regularity", help="determinant of constraint variations (passes if |det| > tol)")
    reg.add_argument("problem")
    reg.add_argument("--trajectory", required=True)
    reg.add_argument("--direction", action="append", help="direction CSV (repeat once per constraint)")
    tol_flag(reg)

    comp = checks.add_parser("complementarity", help="max |lam_j phi_j(x)|")
    comp.add_argument("problem")
    comp.add_argument("--lam", required=True)
    comp.add_argument("--slack", help="CSV x,y1..yK with one slack column per inequality constraint")
    comp.add_argument("--trajectory", help="derive slacks from this trajectory instead")
    tol_flag(comp)

    sv = sub.add_parser("solve", help="minimize a problem file with the direct method")
    sv.add_argument("problem")
    sv.add_argument("--out", help="write the solution CSV (x,y1,...,yN) here")
    sv.add_argument("--max-iter", type=int, default=5000)
    sv.add_argument("--tol", type=float, default=1.0e-8)
    sv.add_argument("--seed", type=int, default=42, help="seed of the random-search oracle")
    sv.add_argument(
        "--oracle-samples",
        type=int,
        default=0,
        help="compare against the best of this many random feasible trajectories",
    )
    return parser


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    handlers = {"operator": cmd_operator, "check": cmd_check, "solve": cmd_solve}
    # solve reports every domain problem as an input error
    domain_code = EXIT_INPUT if args.command == "solve" else EXIT_DOMAIN
    try:
        return handlers[args.command](args, out)
    except _Fail as exc:
        message, code = str(exc), exc.code
    except InputError as exc:
        message, code = str(exc), EXIT_INPUT
    except DomainError as exc:
        message, code = str(exc), domain_code
    except FracVarError as exc:
        message, code = str(exc), EXIT_INPUT
    print(f"fracvar: error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())


# }}}
