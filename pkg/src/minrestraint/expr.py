"""Scalar expression mini-language over states ``x1..xn`` and controls ``u1..um``.

Expressions are parsed into an immutable tree that evaluates on numpy arrays
with broadcasting: ``x`` has shape ``(..., n)`` and ``u`` has shape
``(..., m)``.  Domain errors (division by zero, ``log`` of a non-positive
number, ...) raise :class:`EvaluationError` instead of producing NaN.

Grammar (``^`` is right associative and binds tighter than unary minus)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 'pi' | VAR | NAME '(' expr (',' expr)* ')' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ExprSyntaxError",
    "EvaluationError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ScalarExpr",
    "parse_expr",
    "to_text",
    "evaluate",
    "compile_expr",
    "compile_exprs",
    "variables",
]

FUNCTIONS = {
    "sin": 1, "cos": 1, "tan": 1, "atan": 1, "sqrt": 1, "abs": 1,
    "exp": 1, "log": 1, "sign": 1, "atan2": 2, "min": 2, "max": 2,
}
ALIASES = {"arctan": "atan"}


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``position`` is the 0-based column."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value >= 0):
            raise ValueError("numeric literals are finite and nonnegative")


@dataclass(frozen=True)
class Var:
    kind: str  # "x" or "u"
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    arg: "ScalarExpr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "ScalarExpr"
    right: "ScalarExpr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


ScalarExpr = Union[Num, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_VAR = re.compile(r"([xu])([1-9][0-9]*)$")


def _tokenize(text):
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        mo = _TOKEN.match(text, pos)
        if mo is None or mo.end() == pos:
            col = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[col]!r}", col)
        kind = mo.lastgroup
        tokens.append((kind, mo.group(kind), mo.start(kind)))
        pos = mo.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, n, m):
        self.tokens = _tokenize(text)
        self.i = 0
        self.n = n
        self.m = m

    def peek(self):
        return self.tokens[self.i]

    def take(self, value=None):
        tok = self.tokens[self.i]
        if value is not None and tok[1] != value:
            found = tok[1] or "end of input"
            raise ExprSyntaxError(f"expected {value!r}, found {found!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, value, pos = self.take()
        if kind == "num":
            return Num(float(value))
        if kind == "op" and value == "(":
            node = self.expr()
            self.take(")")
            return node
        if kind == "name":
            if self.peek()[1] == "(":
                name = ALIASES.get(value, value)
                if name not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {value!r}", pos)
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                if len(args) != FUNCTIONS[name]:
                    raise ExprSyntaxError(
                        f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", pos)
                return Call(name, tuple(args))
            if value == "pi":
                return Call("pi", ())
            mo = _VAR.match(value)
            if mo:
                kind_, idx = mo.group(1), int(mo.group(2))
                limit = self.n if kind_ == "x" else self.m
                if idx <= limit:
                    return Var(kind_, idx)
            raise ExprSyntaxError(f"unknown identifier {value!r}", pos)
        found = value or "end of input"
        raise ExprSyntaxError(f"unexpected token {found!r}", pos)


def parse_expr(text, n, m=0):
    """Parse ``text`` into an expression tree over ``x1..xn`` and ``u1..um``."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(text, n, m).parse()


# precedence levels used by the printer
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3
_ATOM_PREC = 5


def _prec(node):
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _NEG_PREC
    return _ATOM_PREC


def to_text(node):
    """Print a tree so that :func:`parse_expr` rebuilds the identical tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"{node.kind}{node.index}"
    if isinstance(node, Call):
        if node.name == "pi":
            return "pi"
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_text(node.arg)
        if _prec(node.arg) < _NEG_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    if node.op == "^":
        left = to_text(node.left)
        if _prec(node.left) <= _PREC["^"]:
            left = f"({left})"
        right = to_text(node.right)
        if _prec(node.right) < _NEG_PREC:
            right = f"({right})"
        return f"{left}^{right}"
    p = _PREC[node.op]
    left = to_text(node.left)
    if _prec(node.left) < p:
        left = f"({left})"
    right = to_text(node.right)
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def variables(node):
    """Set of ``(kind, index)`` pairs referenced by ``node``."""
    if isinstance(node, Var):
        return {(node.kind, node.index)}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return variables(node.arg)
    if isinstance(node, BinOp):
        return variables(node.left) | variables(node.right)
    out = set()
    for a in node.args:
        out |= variables(a)
    return out


def _fail(msg):
    raise EvaluationError(msg)


def _any(cond):
    return cond.any() if isinstance(cond, np.ndarray) else bool(cond)


def _checked(fn, bad, msg):
    def g(a):
        if _any(bad(a)):
            _fail(msg)
        return fn(a)
    return g


_UNARY = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": _checked(np.tan, lambda a: np.abs(np.cos(a)) < 1e-15,
                    "tan evaluated at an odd multiple of pi/2"),
    "atan": np.arctan,
    "sqrt": _checked(np.sqrt, lambda a: a < 0, "sqrt of a negative number"),
    "abs": np.abs,
    "exp": np.exp,
    "log": _checked(np.log, lambda a: a <= 0, "log of a non-positive number"),
    "sign": np.sign,
}
_BINARY_CALLS = {"atan2": np.arctan2, "min": np.minimum, "max": np.maximum}


def _compile(node):
    """Closure tree for ``node``, built once per expression."""
    if isinstance(node, Num):
        v = node.value
        return lambda x, u: v
    if isinstance(node, Var):
        i = node.index - 1
        if node.kind == "x":
            return lambda x, u: x[..., i]
        return lambda x, u: u[..., i]
    if isinstance(node, Neg):
        f = _compile(node.arg)
        return lambda x, u: -f(x, u)
    if isinstance(node, Call):
        if node.name == "pi":
            return lambda x, u: math.pi
        fs = [_compile(a) for a in node.args]
        if node.name in _BINARY_CALLS:
            op = _BINARY_CALLS[node.name]
            f, g = fs
            return lambda x, u: op(f(x, u), g(x, u))
        op, f = _UNARY[node.name], fs[0]
        return lambda x, u: op(f(x, u))
    f, g = _compile(node.left), _compile(node.right)
    op = node.op
    if op == "+":
        return lambda x, u: f(x, u) + g(x, u)
    if op == "-":
        return lambda x, u: f(x, u) - g(x, u)
    if op == "*":
        return lambda x, u: f(x, u) * g(x, u)
    if op == "/":
        if isinstance(node.right, Num):
            if node.right.value == 0:
                return lambda x, u: _fail("division by zero")
            return lambda x, u: f(x, u) / node.right.value
        def div(x, u):
            b = g(x, u)
            if _any(b == 0):
                _fail("division by zero")
            return f(x, u) / b
        return div
    if isinstance(node.right, Num) and float(node.right.value).is_integer():
        k = int(node.right.value)
        if k == 2:
            def square(x, u):
                a = f(x, u)
                return a * a
            return square
        return lambda x, u: np.power(np.asarray(f(x, u), dtype=float), k)

    def power(x, u):
        a = np.asarray(f(x, u), dtype=float)
        b = np.asarray(g(x, u), dtype=float)
        if np.any((a < 0) & (b != np.round(b))):
            _fail("negative base raised to a non-integer power")
        if np.any((a == 0) & (b < 0)):
            _fail("zero raised to a negative power")
        return np.power(a, b)
    return power


_NO_CONTROLS = np.zeros(0)


def compile_exprs(nodes):
    """Return ``fn(x, u=None)`` stacking the values of ``nodes`` along a last axis.

    One wrapper serves all components, which keeps per-call overhead low
    when small batches are evaluated many times.
    """
    bodies = [_compile(nd) for nd in nodes]
    uses_u = any(k == "u" for nd in nodes for k, _ in variables(nd))
    k = len(bodies)

    def fn(x, u=None):
        x = np.asarray(x, dtype=float)
        if u is None:
            if uses_u:
                raise ValueError("expression references controls but none were given")
            u, shape = _NO_CONTROLS, x.shape[:-1]
        else:
            u = np.asarray(u, dtype=float)
            shape = x.shape[:-1]
            if u.shape[:-1] != shape:
                shape = np.broadcast_shapes(shape, u.shape[:-1])
        out = np.empty(shape + (k,))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for i, body in enumerate(bodies):
                out[..., i] = body(x, u)
        if not np.isfinite(out).all():
            raise EvaluationError("non-finite value (overflow)")
        return out

    return fn


def compile_expr(node):
    """Return ``fn(x, u=None)`` evaluating ``node`` with the semantics of :func:`evaluate`."""
    many = compile_exprs([node])

    def fn(x, u=None):
        return many(x, u)[..., 0]

    return fn


def evaluate(node, x, u=None):
    """Evaluate ``node`` at states ``x`` (shape ``(..., n)``) and controls ``u``.

    Returns an array with the broadcast leading shape of ``x`` and ``u``.
    """
    return compile_expr(node)(x, u)
