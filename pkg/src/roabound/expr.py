"""Symbolic scalar expressions over state variables x1..xn.

The grammar is closed under differentiation: constants, variables, negation,
sum, difference, product, quotient, integer powers, exp, tanh. Trees are
immutable; construction goes through smart constructors that fold constants
and drop neutral elements (x+0, x*1, x*0), which keeps derivative trees small
without changing values.

Evaluation comes in four flavours sharing one recursion each:
point (checked scalar), batched points (unchecked, for the simulator),
interval (sound enclosure over a Box), and batched intervals (for the
branch-and-bound verifier).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Tuple, Union

import numpy as np

from .errors import NonFiniteError, ParseError
from .intervals import Box, Interval, iadd, idiv, iexp, imul, ineg, ipow, isub, itanh


@dataclass(frozen=True)
class Expression:
    """Base node; all concrete nodes are frozen dataclasses and hash/compare structurally."""

    def __add__(self, other) -> "Expression":
        return add(self, _coerce(other))

    def __radd__(self, other) -> "Expression":
        return add(_coerce(other), self)

    def __sub__(self, other) -> "Expression":
        return sub(self, _coerce(other))

    def __rsub__(self, other) -> "Expression":
        return sub(_coerce(other), self)

    def __mul__(self, other) -> "Expression":
        return mul(self, _coerce(other))

    def __rmul__(self, other) -> "Expression":
        return mul(_coerce(other), self)

    def __truediv__(self, other) -> "Expression":
        return div(self, _coerce(other))

    def __rtruediv__(self, other) -> "Expression":
        return div(_coerce(other), self)

    def __neg__(self) -> "Expression":
        return neg(self)

    def __pow__(self, k: int) -> "Expression":
        return power(self, k)

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Const(Expression):
    value: float


@dataclass(frozen=True)
class Var(Expression):
    index: int


@dataclass(frozen=True)
class Neg(Expression):
    arg: Expression


@dataclass(frozen=True)
class Add(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Sub(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Mul(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Div(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Pow(Expression):
    base: Expression
    exponent: int


@dataclass(frozen=True)
class Exp(Expression):
    arg: Expression


@dataclass(frozen=True)
class Tanh(Expression):
    arg: Expression


ZERO = Const(0.0)
ONE = Const(1.0)


def _coerce(x) -> Expression:
    if isinstance(x, Expression):
        return x
    return Const(float(x))


def _is_const(e: Expression, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


# ---------------------------------------------------------------------------
# Smart constructors
# ---------------------------------------------------------------------------

def const(v: float) -> Expression:
    return Const(float(v))


def var(i: int) -> Expression:
    if i < 0:
        raise ValueError("variable index must be nonnegative")
    return Var(i)


def neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def div(a: Expression, b: Expression) -> Expression:
    if isinstance(b, Const):
        if b.value == 0.0:
            raise ZeroDivisionError("division by constant zero")
        if isinstance(a, Const):
            return Const(a.value / b.value)
        if b.value == 1.0:
            return a
        if _is_const(a, 0.0):
            return ZERO
    return Div(a, b)


def power(a: Expression, k: int) -> Expression:
    k = int(k)
    if k == 0:
        return ONE
    if k == 1:
        return a
    if isinstance(a, Const):
        return Const(float(a.value) ** k)
    return Pow(a, k)


def exp(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(float(np.exp(a.value)))
    return Exp(a)


def tanh(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(float(np.tanh(a.value)))
    return Tanh(a)


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------

def differentiate(e: Expression, i: int) -> Expression:
    """Exact partial derivative d e / d x_i, in the same grammar."""
    match e:
        case Const():
            return ZERO
        case Var(index=j):
            return ONE if j == i else ZERO
        case Neg(arg=a):
            return neg(differentiate(a, i))
        case Add(left=a, right=b):
            return add(differentiate(a, i), differentiate(b, i))
        case Sub(left=a, right=b):
            return sub(differentiate(a, i), differentiate(b, i))
        case Mul(left=a, right=b):
            return add(mul(differentiate(a, i), b), mul(a, differentiate(b, i)))
        case Div(left=a, right=b):
            num = sub(mul(differentiate(a, i), b), mul(a, differentiate(b, i)))
            return div(num, power(b, 2))
        case Pow(base=a, exponent=k):
            return mul(mul(Const(float(k)), power(a, k - 1)), differentiate(a, i))
        case Exp(arg=a):
            return mul(exp(a), differentiate(a, i))
        case Tanh(arg=a):
            return mul(sub(ONE, power(tanh(a), 2)), differentiate(a, i))
    raise TypeError(f"unknown expression node {type(e).__name__}")


def gradient(e: Expression, n: int) -> Tuple[Expression, ...]:
    return tuple(differentiate(e, i) for i in range(n))


def hessian(e: Expression, n: int) -> Tuple[Tuple[Expression, ...], ...]:
    grads = gradient(e, n)
    return tuple(tuple(differentiate(grads[i], j) for j in range(n)) for i in range(n))


def max_index(e: Expression) -> int:
    """Largest variable index used, or -1 for constant expressions."""
    match e:
        case Const():
            return -1
        case Var(index=j):
            return j
        case Neg(arg=a) | Exp(arg=a) | Tanh(arg=a):
            return max_index(a)
        case Pow(base=a):
            return max_index(a)
        case Add(left=a, right=b) | Sub(left=a, right=b) | Mul(left=a, right=b) | Div(left=a, right=b):
            return max(max_index(a), max_index(b))
    raise TypeError(f"unknown expression node {type(e).__name__}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def eval_many(e: Expression, x: np.ndarray) -> np.ndarray:
    """Evaluate at a batch of points, x shaped (..., n); no finiteness checks."""
    match e:
        case Const(value=v):
            return np.full(x.shape[:-1], v)
        case Var(index=j):
            return x[..., j]
        case Neg(arg=a):
            return -eval_many(a, x)
        case Add(left=a, right=b):
            return eval_many(a, x) + eval_many(b, x)
        case Sub(left=a, right=b):
            return eval_many(a, x) - eval_many(b, x)
        case Mul(left=a, right=b):
            return eval_many(a, x) * eval_many(b, x)
        case Div(left=a, right=b):
            with np.errstate(divide="ignore", invalid="ignore"):
                return eval_many(a, x) / eval_many(b, x)
        case Pow(base=a, exponent=k):
            with np.errstate(divide="ignore", invalid="ignore"):
                return eval_many(a, x) ** k
        case Exp(arg=a):
            with np.errstate(over="ignore"):
                return np.exp(eval_many(a, x))
        case Tanh(arg=a):
            return np.tanh(eval_many(a, x))
    raise TypeError(f"unknown expression node {type(e).__name__}")


def eval_point(e: Expression, x) -> float:
    """IEEE-double evaluation at a single point; raises on non-finite results."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    value = float(eval_many(e, x))
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite value {value} evaluating {to_text(e)}")
    return value


def eval_interval_many(e: Expression, los: np.ndarray, his: np.ndarray):
    """Sound enclosure over a batch of boxes, los/his shaped (..., n)."""
    match e:
        case Const(value=v):
            c = np.full(los.shape[:-1], v)
            return c, c.copy()
        case Var(index=j):
            return np.asarray(los[..., j]), np.asarray(his[..., j])
        case Neg(arg=a):
            return ineg(eval_interval_many(a, los, his))
        case Add(left=a, right=b):
            return iadd(eval_interval_many(a, los, his), eval_interval_many(b, los, his))
        case Sub(left=a, right=b):
            return isub(eval_interval_many(a, los, his), eval_interval_many(b, los, his))
        case Mul(left=a, right=b):
            return imul(eval_interval_many(a, los, his), eval_interval_many(b, los, his))
        case Div(left=a, right=b):
            return idiv(eval_interval_many(a, los, his), eval_interval_many(b, los, his))
        case Pow(base=a, exponent=k):
            return ipow(eval_interval_many(a, los, his), k)
        case Exp(arg=a):
            return iexp(eval_interval_many(a, los, his))
        case Tanh(arg=a):
            return itanh(eval_interval_many(a, los, his))
    raise TypeError(f"unknown expression node {type(e).__name__}")


def eval_interval(e: Expression, box: Box) -> Interval:
    """Sound enclosure of e over the box: eval_point(e, x) is inside for every x in box."""
    lo, hi = eval_interval_many(e, box.los, box.his)
    return Interval(float(lo), float(hi))


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _prec(e: Expression) -> int:
    match e:
        case Add() | Sub():
            return _PREC_ADD
        case Mul() | Div():
            return _PREC_MUL
        case Neg():
            return _PREC_NEG
        case Const(value=v) if v < 0:
            return _PREC_NEG
        case Pow():
            return _PREC_POW
        case _:
            return _PREC_ATOM


def _fmt_float(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _wrap(text: str, need: bool) -> str:
    return f"({text})" if need else text


def to_text(e: Expression) -> str:
    """Render with minimal parentheses; parse(to_text(e)) reproduces e structurally."""
    match e:
        case Const(value=v):
            return _fmt_float(v)
        case Var(index=j):
            return f"x{j + 1}"
        case Neg(arg=a):
            at = to_text(a)
            return "-" + _wrap(at, _prec(a) < _PREC_NEG or at.startswith("-"))
        case Add(left=a, right=b):
            rt = _wrap(to_text(b), _prec(b) <= _PREC_ADD or to_text(b).startswith("-"))
            return f"{to_text(a)} + {rt}"
        case Sub(left=a, right=b):
            rt = _wrap(to_text(b), _prec(b) <= _PREC_ADD or to_text(b).startswith("-"))
            return f"{to_text(a)} - {rt}"
        case Mul(left=a, right=b):
            lt = _wrap(to_text(a), _prec(a) < _PREC_MUL)
            rt = _wrap(to_text(b), _prec(b) <= _PREC_MUL or to_text(b).startswith("-"))
            return f"{lt}*{rt}"
        case Div(left=a, right=b):
            lt = _wrap(to_text(a), _prec(a) < _PREC_MUL)
            rt = _wrap(to_text(b), _prec(b) <= _PREC_MUL or to_text(b).startswith("-"))
            return f"{lt}/{rt}"
        case Pow(base=a, exponent=k):
            bt = _wrap(to_text(a), _prec(a) < _PREC_POW)
            return f"{bt}^{k}"
        case Exp(arg=a):
            return f"exp({to_text(a)})"
        case Tanh(arg=a):
            return f"tanh({to_text(a)})"
    raise TypeError(f"unknown expression node {type(e).__name__}")


def _smt_number(v: float) -> str:
    if v < 0:
        return f"(- {_smt_number(-v)})"
    frac = Fraction(v)
    if frac.denominator == 1:
        return f"{frac.numerator}.0"
    return f"(/ {frac.numerator}.0 {frac.denominator}.0)"


def to_smt(e: Expression) -> str:
    """SMT-LIB2 real-arithmetic term; constants exported as exact rationals."""
    match e:
        case Const(value=v):
            return _smt_number(v)
        case Var(index=j):
            return f"x{j + 1}"
        case Neg(arg=a):
            return f"(- {to_smt(a)})"
        case Add(left=a, right=b):
            return f"(+ {to_smt(a)} {to_smt(b)})"
        case Sub(left=a, right=b):
            return f"(- {to_smt(a)} {to_smt(b)})"
        case Mul(left=a, right=b):
            return f"(* {to_smt(a)} {to_smt(b)})"
        case Div(left=a, right=b):
            return f"(/ {to_smt(a)} {to_smt(b)})"
        case Pow(base=a, exponent=k):
            base = to_smt(a)
            if k < 0:
                return f"(/ 1.0 {to_smt(Pow(a, -k))})"
            return "(* " + " ".join([base] * k) + ")" if k > 1 else base
        case Exp(arg=a):
            return f"(exp {to_smt(a)})"
        case Tanh(arg=a):
            return f"(tanh {to_smt(a)})"
    raise TypeError(f"unknown expression node {type(e).__name__}")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", len(text) - len(stripped))
        kind = m.lastgroup
        value = m.group(kind)
        tokens.append((kind, value, m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive descent matching the documented precedence:

    ^  >  unary minus  >  * /  >  + -, binary operators left-associative,
    exponents restricted to integer literals.
    """

    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, value, offset = self.peek()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}", offset)
        return self.advance()

    def parse(self) -> Expression:
        e = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {value!r}", offset)
        return e

    def expr(self) -> Expression:
        e = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.term()
                e = add(e, rhs) if value == "+" else sub(e, rhs)
            else:
                return e

    def term(self) -> Expression:
        e = self.unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                rhs = self.unary()
                e = mul(e, rhs) if value == "*" else div(e, rhs)
            else:
                return e

    def unary(self) -> Expression:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return neg(self.unary())
        return self.postfix()

    def postfix(self) -> Expression:
        e = self.primary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value == "^":
                self.advance()
                e = power(e, self.exponent())
            else:
                return e

    def exponent(self) -> int:
        sign = 1
        kind, value, offset = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            sign = -1
            kind, value, offset = self.peek()
        if kind != "number" or any(c in value for c in ".eE"):
            raise ParseError("exponent must be an integer literal", offset)
        self.advance()
        return sign * int(value)

    def primary(self) -> Expression:
        kind, value, offset = self.advance()
        if kind == "number":
            return Const(float(value))
        if kind == "ident":
            if value in ("exp", "tanh"):
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return exp(arg) if value == "exp" else tanh(arg)
            m = re.fullmatch(r"x(\d+)", value)
            if m is None:
                raise ParseError(f"unknown identifier {value!r}", offset)
            index = int(m.group(1)) - 1
            if not 0 <= index < self.n:
                raise ParseError(
                    f"variable {value!r} out of range for dimension {self.n}", offset
                )
            return Var(index)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected token {value!r}" if value else "unexpected end of input", offset)


def parse(text: str, n: int) -> Expression:
    """Parse an expression over variables x1..xn; errors carry byte offsets."""
    return _Parser(text, n).parse()
