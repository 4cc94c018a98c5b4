"""Coefficient expression language.

Grammar (``^`` binds tightest and associates to the right, unary minus sits
between ``^`` and ``* /``)::

    expr    := expr ("+" | "-") expr | expr ("*" | "/") expr | "-" expr | expr "^" expr
             | NUMBER | "pi" | "x" | "x[" INT "]" | FUNC "(" expr ")"
             | "(" expr ")" | "(" expr "," expr "," expr "," expr ")"
    FUNC    := "sin" | "cos" | "abs"

The four-tuple form is a quaternion literal and is accepted only when parsing
in quaternion mode.  Evaluation is generic over a :class:`Backend`, so the
same tree walk drives both the vectorised numpy evaluator and the interval
enclosures used for certification.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Any, Protocol

import numpy as np

from rbfractal.errors import EvalError, ParseError, SemanticError
from rbfractal.quaternion import hamilton

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from rbfractal.geometry import AffineMap, Scalar


# ── AST ──────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Num:
    value: Fraction


@dataclass(frozen=True)
class Var:
    """``x`` (``index is None``) or the component ``x[index]``."""

    index: int | None = None


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Neg:
    operand: ExprAst


@dataclass(frozen=True)
class BinOp:
    op: str
    left: ExprAst
    right: ExprAst


@dataclass(frozen=True)
class Call:
    name: str
    arg: ExprAst


@dataclass(frozen=True)
class Quat:
    items: tuple[ExprAst, ExprAst, ExprAst, ExprAst]


type ExprAst = Num | Var | Pi | Neg | BinOp | Call | Quat

FUNCTIONS = frozenset({"sin", "cos", "abs"})


# ── Tokenizer ────────────────────────────────────────────────────────

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<op>[-+*/^])
  | (?P<punct>[()\[\],])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int

    @property
    def column(self) -> int:
        return self.pos + 1


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            msg = f"unexpected character {text[pos]!r}"
            raise ParseError(msg, pos + 1, {"expression", "operator"})
        kind = m.lastgroup or ""
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(Token("eof", "", len(text)))
    return tokens


# ── Parser ───────────────────────────────────────────────────────────

# binding power and associativity; unary minus sits at _UNARY_PREC
_BINARY: dict[str, tuple[int, str]] = {
    "+": (1, "left"),
    "-": (1, "left"),
    "*": (2, "left"),
    "/": (2, "left"),
    "^": (4, "right"),
}
_UNARY_PREC = 3


class _Parser:
    def __init__(self, tokens: list[Token], *, quaternion: bool) -> None:
        self._tokens = tokens
        self._i = 0
        self._quaternion = quaternion

    def peek(self) -> Token:
        return self._tokens[self._i]

    def advance(self) -> Token:
        tok = self._tokens[self._i]
        self._i += 1
        return tok

    def expect(self, text: str, expected: set[str] | None = None) -> Token:
        tok = self.peek()
        if tok.text != text or tok.kind == "eof":
            found = tok.text or "end of input"
            raise ParseError(f"unexpected {found!r}", tok.column, expected or {text})
        return self.advance()

    def expression(self, min_prec: int = 0) -> ExprAst:
        lhs = self.unary()
        while True:
            tok = self.peek()
            if tok.kind != "op" or _BINARY[tok.text][0] < min_prec:
                return lhs
            prec, assoc = _BINARY[tok.text]
            self.advance()
            rhs = self.expression(prec + 1 if assoc == "left" else prec)
            lhs = BinOp(tok.text, lhs, rhs)

    def unary(self) -> ExprAst:
        if self.peek().text == "-":
            self.advance()
            return Neg(self.expression(_UNARY_PREC))
        return self.primary()

    def primary(self) -> ExprAst:
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return Num(Fraction(tok.text))
        if tok.kind == "name":
            return self._name()
        if tok.text == "(":
            return self._group()
        found = tok.text or "end of input"
        raise ParseError(f"unexpected {found!r}", tok.column, {"expression"})

    def _name(self) -> ExprAst:
        tok = self.advance()
        if tok.text == "pi":
            return Pi()
        if tok.text == "x":
            if self.peek().text != "[":
                return Var()
            self.advance()
            idx = self.peek()
            if idx.kind != "num" or not idx.text.isdigit():
                msg = "component index must be an integer"
                raise ParseError(msg, idx.column, {"0", "1", "2", "3"})
            self.advance()
            self.expect("]")
            return Var(int(idx.text))
        if tok.text in FUNCTIONS:
            self.expect("(")
            arg = self.expression()
            self.expect(")")
            return Call(tok.text, arg)
        raise ParseError(
            f"unknown name {tok.text!r}", tok.column, {"x", "pi", *sorted(FUNCTIONS)}
        )

    def _group(self) -> ExprAst:
        self.advance()
        first = self.expression()
        tok = self.peek()
        if tok.text == ")":
            self.advance()
            return first
        if tok.text == "," and self._quaternion:
            items = [first]
            while len(items) < 4:
                self.expect(",")
                items.append(self.expression())
            self.expect(")")
            return Quat((items[0], items[1], items[2], items[3]))
        if tok.text == ",":
            raise ParseError("quaternion literals need quaternion mode", tok.column, {")"})
        found = tok.text or "end of input"
        expected = {")", ","} if self._quaternion else {")"}
        raise ParseError(f"unexpected {found!r}", tok.column, expected)


def parse_expr(text: str, *, quaternion: bool = False) -> ExprAst:
    """Parse ``text`` into an :data:`ExprAst`."""
    parser = _Parser(tokenize(text), quaternion=quaternion)
    ast = parser.expression()
    tail = parser.peek()
    if tail.kind != "eof":
        raise ParseError(f"unexpected {tail.text!r}", tail.column, {"operator", "end of input"})
    return ast


# ── Printing and rewriting ───────────────────────────────────────────


def _decimal(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    den, twos, fives = value.denominator, 0, 0
    while den % 2 == 0:
        den, twos = den // 2, twos + 1
    while den % 5 == 0:
        den, fives = den // 5, fives + 1
    if den != 1:
        return f"({value.numerator}/{value.denominator})"
    places = max(twos, fives)
    digits = str(int(value * 10**places)).rjust(places + 1, "0")
    return f"{digits[:-places]}.{digits[-places:]}"


def to_source(ast: ExprAst) -> str:
    """Fully parenthesised source text that parses back to ``ast``."""
    match ast:
        case Num(value):
            return _decimal(value)
        case Var(None):
            return "x"
        case Var(index):
            return f"x[{index}]"
        case Pi():
            return "pi"
        case Neg(operand):
            return f"(-{to_source(operand)})"
        case BinOp(op, left, right):
            return f"({to_source(left)} {op} {to_source(right)})"
        case Call(name, arg):
            return f"{name}({to_source(arg)})"
        case Quat(items):
            return "(" + ", ".join(to_source(i) for i in items) + ")"
    raise TypeError(ast)


def const(value: Scalar | int) -> ExprAst:
    """A literal for ``value`` built only from nodes the parser produces."""
    fr = Fraction(value)
    if fr < 0:
        return Neg(const(-fr))
    text = _decimal(fr)
    if text.startswith("("):
        return BinOp("/", Num(Fraction(fr.numerator)), Num(Fraction(fr.denominator)))
    return Num(fr)


def substitute(ast: ExprAst, m: AffineMap) -> ExprAst:
    """The expression of ``ast ∘ m``."""

    def coord(j: int, var: ExprAst) -> ExprAst:
        return BinOp("+", BinOp("*", const(m.scale[j]), var), const(m.offset[j]))

    match ast:
        case Var(None) if m.dim == 1:
            return coord(0, Var())
        case Var(None):
            c0, c1, c2, c3 = (coord(j, Var(j)) for j in range(4))
            return Quat((c0, c1, c2, c3))
        case Var(index):
            return coord(index, Var(index))
        case Num() | Pi():
            return ast
        case Neg(operand):
            return Neg(substitute(operand, m))
        case BinOp(op, left, right):
            return BinOp(op, substitute(left, m), substitute(right, m))
        case Call(name, arg):
            return Call(name, substitute(arg, m))
        case Quat(items):
            a, b, c, d = (substitute(i, m) for i in items)
            return Quat((a, b, c, d))
    raise TypeError(ast)


def constant_value(ast: ExprAst) -> Fraction | None:
    """Exact value of a rational constant expression, else ``None``."""
    match ast:
        case Num(value):
            return value
        case Neg(operand):
            v = constant_value(operand)
            return None if v is None else -v
        case BinOp(op, left, right):
            a, b = constant_value(left), constant_value(right)
            if a is None or b is None:
                return None
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                return None if b == 0 else a / b
            if b.denominator == 1 and (a != 0 or b >= 0):
                return a ** int(b)
    return None


def value_dim(ast: ExprAst, dim: int) -> int:
    """4 for quaternion-valued expressions, 1 for real ones."""
    match ast:
        case Quat():
            return 4
        case Var(None):
            return 4 if dim == 4 else 1
        case Neg(operand):
            return value_dim(operand, dim)
        case BinOp(_, left, right):
            return max(value_dim(left, dim), value_dim(right, dim))
        case _:
            return 1


def affine_coefficients(ast: ExprAst) -> tuple[Scalar, Scalar]:
    """``(a, b)`` with ``ast ≡ a*x + b``; raises if ``ast`` is not affine in ``x``."""
    match ast:
        case Num(value):
            return Fraction(0), value
        case Pi():
            return Fraction(0), math.pi
        case Var(None):
            return Fraction(1), Fraction(0)
        case Neg(operand):
            a, b = affine_coefficients(operand)
            return -a, -b
        case BinOp("+" | "-" as op, left, right):
            (a1, b1), (a2, b2) = affine_coefficients(left), affine_coefficients(right)
            return (a1 + a2, b1 + b2) if op == "+" else (a1 - a2, b1 - b2)
        case BinOp("*", left, right):
            (a1, b1), (a2, b2) = affine_coefficients(left), affine_coefficients(right)
            if a1 == 0:
                return b1 * a2, b1 * b2
            if a2 == 0:
                return a1 * b2, b1 * b2
        case BinOp("/", left, right):
            (a1, b1), (a2, b2) = affine_coefficients(left), affine_coefficients(right)
            if a2 == 0 and b2 != 0:
                return a1 / b2, b1 / b2
    msg = f"{to_source(ast)} is not an affine map a*x + b"
    raise SemanticError(msg)


def free_of_x(ast: ExprAst) -> bool:
    match ast:
        case Var():
            return False
        case Neg(operand) | Call(_, operand):
            return free_of_x(operand)
        case BinOp(_, left, right):
            return free_of_x(left) and free_of_x(right)
        case Quat(items):
            return all(free_of_x(i) for i in items)
    return True


# ── Evaluation ───────────────────────────────────────────────────────


class Backend(Protocol):
    """Scalar arithmetic used by :func:`walk`; values support ``+ - * unary-``."""

    dim: int

    def const(self, value: Fraction | float) -> Any: ...
    def pi(self) -> Any: ...
    def coord(self, axis: int) -> Any: ...
    def div(self, a: Any, b: Any) -> Any: ...
    def sin(self, x: Any) -> Any: ...
    def cos(self, x: Any) -> Any: ...
    def abs(self, x: Any) -> Any: ...
    def sqrt(self, x: Any) -> Any: ...
    def power(self, base: Any, exponent: Fraction) -> Any: ...
    def power_general(self, base: Any, exponent: Any) -> Any: ...


def _is_quat(v: Any) -> bool:
    return isinstance(v, tuple)


def _lift(v: Any, be: Backend) -> tuple[Any, Any, Any, Any]:
    if _is_quat(v):
        q: tuple[Any, Any, Any, Any] = v
        return q
    zero = be.const(0)
    return (v, zero, zero, zero)


def _mul(a: Any, b: Any, be: Backend) -> Any:
    if _is_quat(a) and _is_quat(b):
        return hamilton(a, b)
    if _is_quat(a):
        return tuple(c * b for c in a)
    if _is_quat(b):
        return tuple(a * c for c in b)
    return a * b


def _div(a: Any, b: Any, be: Backend) -> Any:
    if _is_quat(b):
        norm_sq = b[0] * b[0] + b[1] * b[1] + b[2] * b[2] + b[3] * b[3]
        inv = (be.div(b[0], norm_sq),) + tuple(be.div(-c, norm_sq) for c in b[1:])
        return _mul(a, inv, be)
    if _is_quat(a):
        return tuple(be.div(c, b) for c in a)
    return be.div(a, b)


def walk(ast: ExprAst, be: Backend) -> Any:
    """Evaluate ``ast`` with ``be``; quaternion values come back as 4-tuples."""
    match ast:
        case Num(value):
            return be.const(value)
        case Pi():
            return be.pi()
        case Var(None):
            if be.dim == 1:
                return be.coord(0)
            return tuple(be.coord(j) for j in range(4))
        case Var(index):
            if index >= be.dim:
                msg = f"x[{index}] used on a {be.dim}-dimensional domain"
                raise EvalError(msg)
            return be.coord(index)
        case Neg(operand):
            v = walk(operand, be)
            return tuple(-c for c in v) if _is_quat(v) else -v
        case BinOp("+" | "-" as op, left, right):
            a, b = walk(left, be), walk(right, be)
            if not (_is_quat(a) or _is_quat(b)):
                return a + b if op == "+" else a - b
            qa, qb = _lift(a, be), _lift(b, be)
            return tuple(x + y if op == "+" else x - y for x, y in zip(qa, qb, strict=True))
        case BinOp("*", left, right):
            return _mul(walk(left, be), walk(right, be), be)
        case BinOp("/", left, right):
            return _div(walk(left, be), walk(right, be), be)
        case BinOp("^", left, right):
            return _power(walk(left, be), right, be)
        case Call(name, arg):
            v = walk(arg, be)
            if name == "abs":
                if _is_quat(v):
                    return be.sqrt(sum((c * c for c in v[1:]), v[0] * v[0]))
                return be.abs(v)
            if _is_quat(v):
                msg = f"{name} expects a real argument"
                raise EvalError(msg)
            return be.sin(v) if name == "sin" else be.cos(v)
        case Quat(items):
            parts = tuple(walk(i, be) for i in items)
            if any(_is_quat(p) for p in parts):
                msg = "quaternion literal components must be real"
                raise EvalError(msg)
            return parts
    raise TypeError(ast)


def _power(base: Any, exponent_ast: ExprAst, be: Backend) -> Any:
    exponent = constant_value(exponent_ast)
    if _is_quat(base):
        if exponent is None or exponent.denominator != 1 or exponent < 0:
            msg = "quaternion powers need a constant non-negative integer exponent"
            raise EvalError(msg)
        one, zero = be.const(1), be.const(0)
        acc: Any = (one, zero, zero, zero)
        for _ in range(int(exponent)):
            acc = _mul(acc, base, be)
        return acc
    if exponent is not None:
        return be.power(base, exponent)
    e = walk(exponent_ast, be)
    if _is_quat(e):
        msg = "exponent must be real"
        raise EvalError(msg)
    return be.power_general(base, e)


class NumpyBackend:
    """Vectorised evaluation at ``N`` points of shape ``(N, dim)``."""

    def __init__(self, points: NDArray[np.float64]) -> None:
        self.points = points
        self.dim = points.shape[1]
        self._n = points.shape[0]

    def const(self, value: Fraction | float) -> NDArray[np.float64]:
        return np.full(self._n, float(value))

    def pi(self) -> NDArray[np.float64]:
        return np.full(self._n, math.pi)

    def coord(self, axis: int) -> NDArray[np.float64]:
        return self.points[:, axis]

    def div(self, a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
        if np.any(b == 0):
            msg = "division by zero"
            raise EvalError(msg)
        return a / b

    def sin(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.sin(x)

    def cos(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.cos(x)

    def abs(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.abs(x)

    def sqrt(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.sqrt(x)

    def power(self, base: NDArray[np.float64], exponent: Fraction) -> NDArray[np.float64]:
        if exponent < 0 and np.any(base == 0):
            msg = "division by zero"
            raise EvalError(msg)
        if exponent.denominator == 1:
            return base ** int(exponent)
        return np.power(base, float(exponent))

    def power_general(
        self, base: NDArray[np.float64], exponent: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        return np.power(base, exponent)


def evaluate(ast: ExprAst, points: NDArray[np.float64]) -> NDArray[np.float64]:
    """Values at ``points``: shape ``(N,)`` for real, ``(N, 4)`` for quaternion results."""
    with np.errstate(all="ignore"):
        raw = walk(ast, NumpyBackend(np.asarray(points, dtype=np.float64)))
        out = np.stack(raw, axis=-1) if _is_quat(raw) else np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        msg = f"non-finite value of {to_source(ast)}"
        raise EvalError(msg)
    return out
