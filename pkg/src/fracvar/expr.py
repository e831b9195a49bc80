"""Integrand expressions: parsing, evaluation and symbolic partial derivatives.

Grammar (whitespace is ignored)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?            # right-associative
    atom    := NUMBER | VARIABLE | FUNC '(' expr ')' | '(' expr ')'
    VARIABLE:= 'x' | 'y<i>' | 'D[y<i>]' | 'lam<j>'
    FUNC    := 'sin' | 'cos' | 'exp' | 'log' | 'sqrt'

``y<i>`` is the i-th trajectory component, ``D[y<i>]`` its combined Caputo
derivative and ``lam<j>`` the j-th isoperimetric multiplier (1-based indices).
In the usual positional notation for a Lagrangian ``L(x, y, Dy)`` the partial
with respect to ``y<i>`` is the (i+1)-th one and the partial with respect to
``D[y<i>]`` is the (N+i+1)-th one.

Evaluation is vectorized: every entry of an :class:`EvalEnv` may be a numpy
array, in which case the expression is evaluated node-wise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from fracvar.errors import EvalError, ExprNameError, ExprSyntaxError

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "EvalEnv",
    "parse",
    "evaluate",
    "partial",
    "variables",
    "to_text",
    "var",
]

Number = Union[float, np.ndarray]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


# {{{ AST


class Expr:
    """Base class of the immutable expression tree."""

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Var(Expr):
    """A variable: ``kind`` is one of ``x``, ``y``, ``dy``, ``lam``."""

    kind: str
    index: int = 0

    @property
    def name(self) -> str:
        if self.kind == "x":
            return "x"
        if self.kind == "y":
            return f"y{self.index}"
        if self.kind == "dy":
            return f"D[y{self.index}]"
        return f"lam{self.index}"


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    child: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


_VAR_RE = re.compile(r"^(?:(x)|y(\d+)|D\[y(\d+)\]|lam(\d+))$")


def var(name: str | Var, n_components: int | None = None, n_multipliers: int | None = None) -> Var:
    """Build a variable from its textual name, e.g. ``var("D[y1]")``."""
    if isinstance(name, Var):
        result = name
    else:
        match = _VAR_RE.match(name.replace(" ", ""))
        if match is None:
            raise ExprNameError(f"unknown variable {name!r}")
        if match.group(1):
            result = Var("x")
        elif match.group(2):
            result = Var("y", int(match.group(2)))
        elif match.group(3):
            result = Var("dy", int(match.group(3)))
        else:
            result = Var("lam", int(match.group(4)))

    _check_range(result, n_components, n_multipliers)
    return result


def _check_range(v: Var, n_components: int | None, n_multipliers: int | None) -> None:
    if v.kind in ("y", "dy") and n_components is not None:
        if not 1 <= v.index <= n_components:
            raise ExprNameError(
                f"{v.name}: component index out of range 1..{n_components}"
            )
    if v.kind == "lam" and n_multipliers is not None:
        if not 1 <= v.index <= n_multipliers:
            raise ExprNameError(
                f"{v.name}: multiplier index out of range 1..{n_multipliers}"
            )


def variables(e: Expr) -> set[Var]:
    if isinstance(e, Var):
        return {e}
    if isinstance(e, Unary):
        return variables(e.child)
    if isinstance(e, Binary):
        return variables(e.left) | variables(e.right)
    return set()


# }}}


# {{{ parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<deriv>D\s*\[\s*[A-Za-z_]\w*\s*\])
  | (?P<name>[A-Za-z_]\w*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str
    text: str
    offset: int


@dataclass
class _Parser:
    text: str
    n_components: int
    n_multipliers: int
    tokens: list[_Token] = field(default_factory=list)
    pos: int = 0

    def byte_offset(self, char_offset: int) -> int:
        return len(self.text[:char_offset].encode("utf-8"))

    def error(self, message: str, char_offset: int) -> ExprSyntaxError:
        return ExprSyntaxError(message, self.byte_offset(char_offset))

    def tokenize(self) -> None:
        i = 0
        while i < len(self.text):
            match = _TOKEN_RE.match(self.text, i)
            if match is None:
                raise self.error(f"unexpected character {self.text[i]!r}", i)
            kind = match.lastgroup
            if kind != "ws":
                self.tokens.append(_Token(kind, match.group(), i))
            i = match.end()
        self.tokens.append(_Token("end", "", len(self.text)))

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def accept(self, text: str) -> bool:
        if self.current.kind == "op" and self.current.text == text:
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.accept(text):
            tok = self.current
            found = tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}", tok.offset)

    def parse(self) -> Expr:
        self.tokenize()
        if self.current.kind == "end":
            raise self.error("empty expression", 0)
        result = self.expr()
        if self.current.kind != "end":
            raise self.error(f"unexpected {self.current.text!r}", self.current.offset)
        return result

    def expr(self) -> Expr:
        left = self.term()
        while True:
            if self.accept("+"):
                left = Binary("+", left, self.term())
            elif self.accept("-"):
                left = Binary("-", left, self.term())
            else:
                return left

    def term(self) -> Expr:
        left = self.unary()
        while True:
            if self.accept("*"):
                left = Binary("*", left, self.unary())
            elif self.accept("/"):
                left = Binary("/", left, self.unary())
            else:
                return left

    def unary(self) -> Expr:
        if self.accept("-"):
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.accept("^"):
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.current
        if tok.kind == "num":
            self.pos += 1
            return Const(float(tok.text))

        if tok.kind == "op" and tok.text == "(":
            self.pos += 1
            inner = self.expr()
            self.expect(")")
            return inner

        if tok.kind == "deriv":
            self.pos += 1
            inner = re.sub(r"\s", "", tok.text)[2:-1]
            if not re.fullmatch(r"y\d+", inner):
                raise ExprNameError(
                    f"D[...] applies to trajectory components only, got {inner!r} "
                    f"at byte offset {self.byte_offset(tok.offset)}"
                )
            return self.variable(f"D[{inner}]", tok.offset)

        if tok.kind == "name":
            self.pos += 1
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(tok.text, arg)
            return self.variable(tok.text, tok.offset)

        found = tok.text or "end of input"
        raise self.error(f"unexpected {found!r}", tok.offset)

    def variable(self, name: str, offset: int) -> Var:
        try:
            return var(name, self.n_components, self.n_multipliers)
        except ExprNameError as exc:
            raise ExprNameError(f"{exc} at byte offset {self.byte_offset(offset)}") from None


def parse(text: str, n_components: int = 1, n_multipliers: int = 0) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises :class:`~fracvar.errors.ExprSyntaxError` (carrying the byte offset)
    on malformed input and :class:`~fracvar.errors.ExprNameError` on unknown
    identifiers or indices outside ``1..n_components`` / ``1..n_multipliers``.
    """
    return _Parser(text, n_components, n_multipliers).parse()


# }}}


# {{{ printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    if isinstance(e, Const) and e.value < 0:
        return _PREC["neg"]
    return 5


def _wrap(e: Expr, needed: int, strict: bool = False) -> str:
    text = to_text(e)
    p = _prec(e)
    if p < needed or (strict and p == needed):
        return f"({text})"
    return text


def _number(value: float) -> str:
    if value.is_integer() and value < 1e15:
        return str(int(value))
    return repr(value)


def to_text(e: Expr) -> str:
    """Render an expression in the input grammar; the result parses back to ``e``."""
    if isinstance(e, Const):
        text = _number(abs(e.value))
        return f"-{text}" if e.value < 0 else text
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.child, _PREC["neg"])
        return f"{e.op}({to_text(e.child)})"

    assert isinstance(e, Binary)
    p = _PREC[e.op]
    if e.op == "^":
        # base binds tighter than '^'; the exponent is a unary expression
        return f"{_wrap(e.left, p, strict=True)}^{_wrap(e.right, _PREC['neg'])}"
    return f"{_wrap(e.left, p)} {e.op} {_wrap(e.right, p, strict=True)}"


# }}}


# {{{ evaluation


@dataclass(frozen=True)
class EvalEnv:
    """Values of the expression arguments; entries may be floats or arrays."""

    x: Number
    y: Sequence[Number] = ()
    dy: Sequence[Number] = ()
    lam: Sequence[Number] = ()

    def lookup(self, v: Var) -> Number:
        if v.kind == "x":
            return self.x
        seq = {"y": self.y, "dy": self.dy, "lam": self.lam}[v.kind]
        if not 1 <= v.index <= len(seq):
            raise ExprNameError(f"{v.name} is not bound in the evaluation environment")
        return seq[v.index - 1]


def _first_bad(mask: np.ndarray | bool) -> int | None:
    mask = np.asarray(mask)
    if mask.ndim == 0:
        return None
    return int(np.flatnonzero(mask)[0])


def _check(bad, message: str) -> None:
    if np.any(bad):
        raise EvalError(message, _first_bad(bad))


def _is_integer(value: float) -> bool:
    return float(value).is_integer()


def _eval(e: Expr, env: EvalEnv) -> Number:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return env.lookup(e)

    if isinstance(e, Unary):
        u = _eval(e.child, env)
        if e.op == "neg":
            return -u
        if e.op == "sin":
            return np.sin(u)
        if e.op == "cos":
            return np.cos(u)
        if e.op == "exp":
            with np.errstate(over="raise"):
                try:
                    return np.exp(u)
                except FloatingPointError:
                    raise EvalError("overflow in exp", _first_bad(np.asarray(u) > 709)) from None
        if e.op == "log":
            _check(np.asarray(u) <= 0, "log of a non-positive argument")
            return np.log(u)
        if e.op == "sqrt":
            _check(np.asarray(u) < 0, "sqrt of a negative argument")
            return np.sqrt(u)
        raise AssertionError(e.op)

    assert isinstance(e, Binary)
    left = _eval(e.left, env)
    right = _eval(e.right, env)
    if e.op == "+":
        return left + right
    if e.op == "-":
        return left - right
    if e.op == "*":
        return left * right
    if e.op == "/":
        _check(np.asarray(right) == 0, "division by zero")
        return left / right

    # '^': integer exponents accept any base; otherwise the base must be >= 0
    if isinstance(e.right, Const) and _is_integer(e.right.value):
        k = e.right.value
        if k < 0:
            _check(np.asarray(left) == 0, "zero raised to a negative power")
        return np.power(left, k)
    _check(np.asarray(left) < 0, "negative base raised to a non-integer power")
    if np.any(np.asarray(right) < 0):
        _check((np.asarray(left) == 0) & (np.asarray(right) < 0), "zero raised to a negative power")
    return np.power(left, right)


def evaluate(e: Expr, env: EvalEnv) -> Number:
    """Evaluate ``e`` in ``env`` with standard real arithmetic.

    Raises :class:`~fracvar.errors.EvalError` on domain errors; for array
    arguments the error carries the first offending index.
    """
    with np.errstate(all="ignore"):
        result = _eval(e, env)
    if isinstance(result, np.ndarray):
        return result.astype(np.float64, copy=False)
    return float(result)


# }}}


# {{{ differentiation


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Binary("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return Binary("-", a, b)


def _neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    return Unary("neg", a)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Binary("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return Const(0.0)
    if _is_const(b, 1.0):
        return a
    return Binary("/", a, b)


def _pow(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return Const(1.0)
    return Binary("^", a, b)


def _d(e: Expr, v: Var) -> Expr:
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e == v else 0.0)

    if isinstance(e, Unary):
        u, du = e.child, _d(e.child, v)
        if _is_const(du, 0.0):
            return Const(0.0)
        if e.op == "neg":
            return _neg(du)
        if e.op == "sin":
            return _mul(Unary("cos", u), du)
        if e.op == "cos":
            return _neg(_mul(Unary("sin", u), du))
        if e.op == "exp":
            return _mul(e, du)
        if e.op == "log":
            return _div(du, u)
        if e.op == "sqrt":
            return _div(du, _mul(Const(2.0), e))
        raise AssertionError(e.op)

    assert isinstance(e, Binary)
    a, b = e.left, e.right
    da, db = _d(a, v), _d(b, v)
    if e.op == "+":
        return _add(da, db)
    if e.op == "-":
        return _sub(da, db)
    if e.op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if e.op == "/":
        return _sub(_div(da, b), _div(_mul(a, db), _pow(b, Const(2.0))))

    # power rule for exponents free of v, exp/log rewrite otherwise
    if _is_const(db, 0.0):
        if _is_const(da, 0.0):
            return Const(0.0)
        return _mul(_mul(b, _pow(a, _sub(b, Const(1.0)))), da)
    return _mul(e, _add(_mul(db, Unary("log", a)), _div(_mul(b, da), a)))


def partial(e: Expr, v: Var | str) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to the variable ``v``.

    Only constant folding and the trivial 0/1 identities are applied to the
    result; no other simplification is attempted.
    """
    return _d(e, var(v))


# }}}
