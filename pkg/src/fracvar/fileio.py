"""Sampled-function CSV files and the line-oriented problem-file format.

CSV files carry a header (``x,value`` for a single function, ``x,y1,...,yN``
for a trajectory) and one row per grid node. Numbers are written with 17
significant digits so that a write/read cycle is bit-exact; singular nodes
are written as ``NaN``.

Problem files look like::

    # classical-limit example
    [problem]
    a = 0
    b = 1
    alpha = 0.99
    beta = 0.99
    gamma = 1
    n_components = 1
    grid_points = 501
    lagrangian = "D[y1]^2"
    y_a = [0]
    y_b = [0]            # or [free], [cap:0.5]

    [constraint]
    integrand = "y1"
    mode = eq            # or le
    value = 0.25
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from fracvar.errors import DomainError, ExprError, FracVarError
from fracvar.expr import parse
from fracvar.operators import Grid, SampledFunction
from fracvar.variational import (
    BoundaryConditions,
    Constraint,
    ConstraintMode,
    Problem,
    RightEnd,
    SampledTrajectory,
)

__all__ = [
    "InputError",
    "ProblemFileError",
    "format_number",
    "write_function_csv",
    "read_function_csv",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "parse_problem",
    "load_problem",
]


class InputError(FracVarError):
    """Malformed input file."""


class ProblemFileError(InputError):
    def __init__(self, message: str, line: int, source: str = "<problem>") -> None:
        super().__init__(f"{source}:{line}: {message}")
        self.line = line


# {{{ CSV


def format_number(value: float) -> str:
    if math.isnan(value):
        return "NaN"
    return format(float(value), ".17g")


def _write_rows(header: list[str], columns: Iterable[np.ndarray], stream: TextIO) -> None:
    stream.write(",".join(header) + "\n")
    for row in zip(*columns):
        stream.write(",".join(format_number(v) for v in row) + "\n")


def write_function_csv(f: SampledFunction, stream: TextIO) -> None:
    _write_rows(["x", "value"], [f.grid.nodes, f.values], stream)


def write_trajectory_csv(y: SampledTrajectory, stream: TextIO) -> None:
    header = ["x"] + [f"y{i + 1}" for i in range(y.n_components)]
    _write_rows(header, [y.grid.nodes, *y.values], stream)


def _read_table(source: str | Path | TextIO) -> tuple[list[str], np.ndarray, str]:
    if isinstance(source, (str, Path)):
        name = str(source)
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise InputError(f"{name}: cannot read file: {exc.strerror}") from None
    else:
        name = getattr(source, "name", "<stream>")
        text = source.read()

    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise InputError(f"{name}: empty CSV file")
    header = [cell.strip() for cell in rows[0]]

    data = np.empty((len(rows) - 1, len(header)))
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(
                f"{name}:{lineno}: expected {len(header)} columns, got {len(row)}"
            )
        for col, cell in enumerate(row):
            try:
                data[lineno - 2, col] = float(cell)
            except ValueError:
                raise InputError(f"{name}:{lineno}: not a number: {cell.strip()!r}") from None
    return header, data, name


def _grid_from_nodes(x: np.ndarray, name: str) -> Grid:
    if x.size < 3:
        raise InputError(f"{name}: need at least 3 rows, got {x.size}")
    try:
        grid = Grid(float(x[0]), float(x[-1]), x.size)
    except DomainError as exc:
        raise InputError(f"{name}: {exc}") from None
    if not np.allclose(x, grid.nodes, rtol=0.0, atol=1.0e-9 * (grid.b - grid.a)):
        raise InputError(f"{name}: x column is not a uniform grid")
    return grid


def read_function_csv(source: str | Path | TextIO) -> SampledFunction:
    header, data, name = _read_table(source)
    if header != ["x", "value"]:
        raise InputError(f"{name}:1: expected header 'x,value', got {','.join(header)!r}")
    grid = _grid_from_nodes(data[:, 0], name)
    return SampledFunction(grid, data[:, 1])


def read_trajectory_csv(source: str | Path | TextIO) -> SampledTrajectory:
    header, data, name = _read_table(source)
    expected = ["x"] + [f"y{i}" for i in range(1, len(header))]
    if len(header) < 2 or header != expected:
        raise InputError(f"{name}:1: expected header {','.join(expected)!r}")
    grid = _grid_from_nodes(data[:, 0], name)
    return SampledTrajectory(grid, data[:, 1:].T)


# }}}


# {{{ problem files

_SECTION_RE = re.compile(r"^\[\s*(\w+)\s*\]$")
_KEY_RE = re.compile(r"^([A-Za-z_]\w*)\s*=\s*(.*)$")

_PROBLEM_KEYS = (
    "a",
    "b",
    "alpha",
    "beta",
    "gamma",
    "n_components",
    "grid_points",
    "lagrangian",
    "y_a",
    "y_b",
)
_CONSTRAINT_KEYS = ("integrand", "mode", "value")


@dataclass
class _Section:
    name: str
    line: int
    entries: dict[str, tuple[str, int]]


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _sections(text: str, source: str) -> list[_Section]:
    sections: list[_Section] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        match = _SECTION_RE.match(line)
        if match:
            name = match.group(1)
            if name not in ("problem", "constraint"):
                raise ProblemFileError(f"unknown section [{name}]", lineno, source)
            if name == "problem" and any(s.name == "problem" for s in sections):
                raise ProblemFileError("duplicate [problem] section", lineno, source)
            sections.append(_Section(name, lineno, {}))
            continue

        match = _KEY_RE.match(line)
        if match is None:
            raise ProblemFileError(f"expected 'key = value', got {line!r}", lineno, source)
        if not sections:
            raise ProblemFileError("key outside of any section", lineno, source)
        section = sections[-1]
        key, value = match.group(1), match.group(2).strip()
        allowed = _PROBLEM_KEYS if section.name == "problem" else _CONSTRAINT_KEYS
        if key not in allowed:
            raise ProblemFileError(f"unknown key {key!r} in [{section.name}]", lineno, source)
        if key in section.entries:
            raise ProblemFileError(f"duplicate key {key!r}", lineno, source)
        if not value:
            raise ProblemFileError(f"missing value for {key!r}", lineno, source)
        section.entries[key] = (value, lineno)
    return sections


class _Reader:
    def __init__(self, section: _Section, source: str) -> None:
        self.section = section
        self.source = source

    def raw(self, key: str) -> tuple[str, int]:
        try:
            return self.section.entries[key]
        except KeyError:
            raise ProblemFileError(
                f"missing required key {key!r} in [{self.section.name}] section",
                self.section.line,
                self.source,
            ) from None

    def fail(self, key: str, message: str) -> ProblemFileError:
        return ProblemFileError(f"{key}: {message}", self.raw(key)[1], self.source)

    def real(self, key: str) -> float:
        text, _ = self.raw(key)
        try:
            value = float(text)
        except ValueError:
            raise self.fail(key, f"not a real number: {text!r}") from None
        if not math.isfinite(value):
            raise self.fail(key, "value must be finite")
        return value

    def integer(self, key: str) -> int:
        text, _ = self.raw(key)
        try:
            return int(text)
        except ValueError:
            raise self.fail(key, f"not an integer: {text!r}") from None

    def quoted(self, key: str) -> str:
        text, _ = self.raw(key)
        if len(text) < 2 or text[0] != '"' or text[-1] != '"':
            raise self.fail(key, "expected a double-quoted expression")
        return text[1:-1]

    def items(self, key: str) -> list[str]:
        text, _ = self.raw(key)
        if not (text.startswith("[") and text.endswith("]")):
            raise self.fail(key, "expected a bracketed list like [0, 1]")
        inner = text[1:-1].strip()
        return [item.strip() for item in inner.split(",")] if inner else []

    def expression(self, key: str, n_components: int):
        text = self.quoted(key)
        try:
            return parse(text, n_components, 0)
        except ExprError as exc:
            raise self.fail(key, str(exc)) from None


def _right_end(reader: _Reader, item: str) -> RightEnd:
    if item == "free":
        return RightEnd.free()
    if item.startswith("cap:"):
        try:
            return RightEnd.capped(float(item[4:]))
        except ValueError:
            raise reader.fail("y_b", f"bad cap value {item!r}") from None
    try:
        return RightEnd.fixed(float(item))
    except ValueError:
        raise reader.fail("y_b", f"expected a real, 'free' or 'cap:<real>', got {item!r}") from None


def parse_problem(text: str, source: str = "<problem>") -> Problem:
    """Parse a problem file. Every error is a :class:`ProblemFileError` with a line."""
    sections = _sections(text, source)
    problems = [s for s in sections if s.name == "problem"]
    if not problems:
        raise ProblemFileError("missing [problem] section", 1, source)
    reader = _Reader(problems[0], source)

    # read every required key first so a missing one is reported by name
    for key in _PROBLEM_KEYS:
        reader.raw(key)

    n_comp = reader.integer("n_components")
    if n_comp < 1:
        raise reader.fail("n_components", "must be at least 1")
    try:
        grid = Grid(reader.real("a"), reader.real("b"), reader.integer("grid_points"))
    except DomainError as exc:
        raise reader.fail("grid_points", str(exc)) from None

    left = []
    for item in reader.items("y_a"):
        try:
            left.append(float(item))
        except ValueError:
            raise reader.fail("y_a", f"not a real number: {item!r}") from None
    if len(left) != n_comp:
        raise reader.fail("y_a", f"expected {n_comp} value(s), got {len(left)}")
    right = [_right_end(reader, item) for item in reader.items("y_b")]
    if len(right) != n_comp:
        raise reader.fail("y_b", f"expected {n_comp} value(s), got {len(right)}")

    lagrangian = reader.expression("lagrangian", n_comp)

    constraints = []
    for section in sections:
        if section.name != "constraint":
            continue
        cr = _Reader(section, source)
        for key in _CONSTRAINT_KEYS:
            cr.raw(key)
        mode_text = cr.raw("mode")[0]
        if mode_text not in ("eq", "le"):
            raise cr.fail("mode", f"expected 'eq' or 'le', got {mode_text!r}")
        constraints.append(
            Constraint(cr.expression("integrand", n_comp), cr.real("value"), ConstraintMode(mode_text))
        )

    values = {key: reader.real(key) for key in ("alpha", "beta", "gamma")}
    for key, value in values.items():
        try:
            if key == "gamma":
                if not 0.0 <= value <= 1.0:
                    raise DomainError(f"gamma must lie in [0,1], got {value!r}")
            elif not 0.0 < value < 1.0:
                raise DomainError(f"order must lie in (0,1), got {value!r}")
        except DomainError as exc:
            raise reader.fail(key, str(exc)) from None

    try:
        return Problem(
            grid,
            values["alpha"],
            values["beta"],
            values["gamma"],
            n_comp,
            lagrangian,
            BoundaryConditions(tuple(left), tuple(right)),
            tuple(constraints),
        )
    except DomainError as exc:
        raise ProblemFileError(str(exc), problems[0].line, source) from None


def load_problem(path: str | Path) -> Problem:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read file: {exc.strerror}") from None
    return parse_problem(text, str(path))


# }}}
