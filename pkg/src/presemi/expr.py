"""Scalar expressions of the coordinates x1..xn.

Grammar (lowest to highest precedence)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | "+" unary | power
    power  := atom ("^" unary)?          # right-associative
    atom   := number | "x" digits | func "(" expr ")" | "(" expr ")"

so ``-x1^2`` is ``-(x1^2)`` and ``2^3^2`` is ``2^(3^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import ExprDomainError, ExprSyntaxError

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "abs")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, as written in the source


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class ExprAst:
    root: Node
    dimension: int

    def variables(self) -> frozenset:
        return frozenset(_collect_vars(self.root))

    def is_zero(self) -> bool:
        return isinstance(self.root, Num) and self.root.value == 0.0

    def __call__(self, point):
        return evaluate(self, point)

    def __str__(self):
        return to_source(self)


def _collect_vars(node):
    if isinstance(node, Var):
        yield node.index
    elif isinstance(node, Neg):
        yield from _collect_vars(node.operand)
    elif isinstance(node, BinOp):
        yield from _collect_vars(node.left)
        yield from _collect_vars(node.right)
    elif isinstance(node, Call):
        yield from _collect_vars(node.arg)


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)
_VAR = re.compile(r"x(\d+)\Z")


def _tokenize(source):
    def boff(i):
        return len(source[:i].encode("utf-8"))

    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.lastgroup is None:
            bad = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", boff(bad))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), boff(m.start(kind))))
        pos = m.end()
    tokens.append(("end", "", len(source.encode("utf-8"))))
    return tokens


class _Parser:
    def __init__(self, source, dimension):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.dimension = dimension

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        kind, text, offset = self.take()
        if text != value or kind == "end":
            raise ExprSyntaxError(f"expected {value!r}", offset)

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
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and text == "+":
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
        kind, text, offset = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            m = _VAR.match(text)
            if m:
                index = int(m.group(1))
                if index < 1:
                    raise ExprSyntaxError(f"invalid variable {text!r}", offset)
                if index > self.dimension:
                    raise ExprSyntaxError(
                        f"variable {text!r} exceeds dimension {self.dimension}",
                        offset, variable=index, dimension=self.dimension)
                return Var(index)
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            raise ExprSyntaxError(f"unknown identifier {text!r}", offset)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", offset)
        raise ExprSyntaxError(f"unexpected token {text!r}", offset)


def parse(source: str, dimension: int) -> ExprAst:
    """Parse ``source`` into an expression over x1..x{dimension}.

    Raises ExprSyntaxError (with ``offset``) on malformed input, unknown
    identifiers, or a variable index above ``dimension``.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    if dimension < 1:
        raise ValueError("dimension must be positive")
    p = _Parser(source, dimension)
    node = p.expr()
    kind, text, offset = p.peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected token {text!r}", offset)
    return ExprAst(node, dimension)


# ------------------------------------------------------------- evaluation

def _check(value, what):
    if not math.isfinite(value):
        raise ExprDomainError(f"non-finite result in {what}")
    return value


def _eval(node, point):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(point[node.index - 1])
    if isinstance(node, Neg):
        return -_eval(node.operand, point)
    if isinstance(node, BinOp):
        a = _eval(node.left, point)
        b = _eval(node.right, point)
        op = node.op
        if op == "+":
            return _check(a + b, "+")
        if op == "-":
            return _check(a - b, "-")
        if op == "*":
            return _check(a * b, "*")
        if op == "/":
            if b == 0.0:
                raise ExprDomainError("division by zero")
            return _check(a / b, "/")
        try:
            return _check(math.pow(a, b), "^")
        except (ValueError, ZeroDivisionError):
            raise ExprDomainError(f"power {a!r}^{b!r} undefined") from None
        except OverflowError:
            raise ExprDomainError("overflow in ^") from None
    a = _eval(node.arg, point)
    f = node.func
    if f == "log" and a <= 0.0:
        raise ExprDomainError(f"log of non-positive argument {a!r}")
    if f == "sqrt" and a < 0.0:
        raise ExprDomainError(f"sqrt of negative argument {a!r}")
    try:
        return _check(_MATH[f](a), f)
    except OverflowError:
        raise ExprDomainError(f"overflow in {f}") from None
    except ValueError:
        raise ExprDomainError(f"{f}({a!r}) undefined") from None


_MATH = {"sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp,
         "log": math.log, "sqrt": math.sqrt, "sinh": math.sinh,
         "cosh": math.cosh, "abs": abs}


def evaluate(ast: ExprAst, point) -> float:
    """Evaluate at a single point (length ``ast.dimension``)."""
    if len(point) != ast.dimension:
        raise ValueError(f"point has length {len(point)}, expected {ast.dimension}")
    return _check(float(_eval(ast.root, point)), "expression")


_NP = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
       "log": np.log, "sqrt": np.sqrt, "sinh": np.sinh, "cosh": np.cosh,
       "abs": np.abs}


def _build(node) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(node, Num):
        v = node.value
        return lambda X: np.full(X.shape[:-1], v)
    if isinstance(node, Var):
        k = node.index - 1
        return lambda X: X[..., k]
    if isinstance(node, Neg):
        f = _build(node.operand)
        return lambda X: -f(X)
    if isinstance(node, BinOp):
        a, b = _build(node.left), _build(node.right)
        op = {"+": np.add, "-": np.subtract, "*": np.multiply,
              "/": np.divide, "^": np.power}[node.op]
        return lambda X: op(a(X), b(X))
    f = _NP[node.func]
    a = _build(node.arg)
    return lambda X: f(a(X))


def compile_numpy(ast: ExprAst) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorised evaluator over points of shape (..., n).

    Domain violations produce nan/inf instead of raising; callers decide
    whether that is an error.
    """
    inner = _build(ast.root)
    n = ast.dimension

    def run(X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != n:
            raise ValueError(f"points have {X.shape[-1]} coordinates, expected {n}")
        with np.errstate(all="ignore"):
            return np.asarray(inner(X), dtype=float)

    return run


# --------------------------------------------------------- pretty-printing

def _src(node):
    if isinstance(node, Num):
        if math.isinf(node.value):
            return "1e999"
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return f"-({_src(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_src(node.left)}) {node.op} ({_src(node.right)})"
    return f"{node.func}({_src(node.arg)})"


def to_source(ast: ExprAst) -> str:
    """Render back to parseable text (fully parenthesised)."""
    return _src(ast.root)
