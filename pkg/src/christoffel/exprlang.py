"""Scalar expressions over coordinate variables, with exact derivatives.

The grammar is a small infix language::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := unary ('^' factor)?          # '^' is right-associative
    unary  := '-' unary | atom
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Unary minus binds tighter than '^', so ``-x^2`` means ``(-x)^2``.  Function
names come from the fixed set in :data:`FUNCTIONS`.  ``a^b`` with an integer
literal exponent is evaluated by repeated multiplication (negative bases
allowed); any other exponent requires a positive base.

First and second derivatives are computed by hyper-dual arithmetic: every
intermediate value carries ``(value, d1, d2, d12)`` where ``d1``/``d2`` are
directional first derivatives and ``d12`` the mixed second derivative.  This
is exact up to floating-point rounding; there is no truncation error.  The
:class:`HyperDual` class is the reference implementation of that algebra;
production evaluation runs on a compiled instruction tape (see ``_tape`` and
``_kernels``) that implements identical update rules.

Expressions are immutable after construction and all evaluation entry points
are pure, so they may be shared freely between threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import DomainError, ParseError, UnknownIdentifierError

__all__ = [
    "FUNCTIONS",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "Expression",
    "HyperDual",
    "parse",
    "to_source",
    "compose",
    "differentiate",
    "evaluate_hyperdual",
]

FUNCTIONS = (
    "sin",
    "cos",
    "tan",
    "atan",
    "exp",
    "log",
    "sqrt",
    "sinh",
    "cosh",
    "tanh",
)


# ---------------------------------------------------------------------------
# AST nodes.  Frozen dataclasses give structural equality for parsed trees;
# composed expressions may share subtrees (a DAG), which every traversal in
# this package handles by memoizing on node identity.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based position in the variable list


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Add:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Sub:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Mul:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Div:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Const, Var, Neg, Add, Sub, Mul, Div, Pow, Call]


class Derivative2(NamedTuple):
    """Value, the two seeded first partials, and the mixed second partial."""

    value: float
    d_i: float
    d_j: float
    d_ij: float


class Expression:
    """A parsed (or programmatically built) expression over named variables."""

    __slots__ = ("root", "names", "_tape")

    def __init__(self, root: Node, names: Sequence[str]):
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "names", tuple(names))
        object.__setattr__(self, "_tape", None)

    def __setattr__(self, name, value):  # immutable by convention
        raise AttributeError("Expression is immutable")

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Expression)
            and self.names == other.names
            and self.root == other.root
        )

    def __repr__(self) -> str:
        return f"Expression({str(self)!r}, names={self.names})"

    def __str__(self) -> str:
        return to_source(self.root, self.names)

    def tape(self):
        """Compiled instruction tape (built lazily, cached)."""
        if self._tape is None:
            from ._tape import compile_tape

            object.__setattr__(self, "_tape", compile_tape(self))
        return self._tape

    def eval(self, point: Sequence[float]) -> float:
        """Evaluate at ``point`` (length ``n_vars``)."""
        seeds = self._seeds(point)
        return float(self.tape().run(seeds)[0])

    def derivative2(self, point: Sequence[float], i: int, j: int) -> Derivative2:
        """Exact value, first partials along ``i`` and ``j``, and mixed partial.

        ``i == j`` yields the pure second partial in ``d_ij``.  Indices are
        0-based.
        """
        n = self.n_vars
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"derivative directions must be in [0, {n})")
        seeds = self._seeds(point)
        seeds[i, 1] = 1.0
        seeds[j, 2] = 1.0
        out = self.tape().run(seeds)
        return Derivative2(float(out[0]), float(out[1]), float(out[2]), float(out[3]))

    def gradient(self, point: Sequence[float]) -> tuple[float, np.ndarray]:
        """Value and all first partials, two directions per tape pass."""
        n = self.n_vars
        grad = np.empty(n)
        value = 0.0
        tape = self.tape()
        for i in range(0, n, 2):
            j = min(i + 1, n - 1)
            seeds = self._seeds(point)
            seeds[i, 1] = 1.0
            seeds[j, 2] = 1.0
            out = tape.run(seeds)
            value = float(out[0])
            grad[i] = out[1]
            grad[j] = out[2]
        return value, grad

    def hessian(self, point: Sequence[float]) -> np.ndarray:
        """Full symmetric matrix of second partials at ``point``."""
        n = self.n_vars
        hess = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                d = self.derivative2(point, i, j)
                hess[i, j] = d.d_ij
                hess[j, i] = d.d_ij
        return hess

    def _seeds(self, point: Sequence[float]) -> np.ndarray:
        pt = np.asarray(point, dtype=float)
        if pt.shape != (self.n_vars,):
            raise ValueError(
                f"point has shape {pt.shape}, expected ({self.n_vars},)"
            )
        seeds = np.zeros((self.n_vars, 4))
        seeds[:, 0] = pt
        return seeds


# ---------------------------------------------------------------------------
# Hyper-dual reference algebra.
#
# The groupings below are chosen so that swapping the two seed directions of
# every input swaps d1/d2 of every result bitwise and leaves d12 bitwise
# unchanged (IEEE addition and multiplication are commutative).  The compiled
# kernels mirror these groupings exactly.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperDual:
    """One value with two first-order derivative tags and one mixed tag."""

    value: float
    d1: float = 0.0
    d2: float = 0.0
    d12: float = 0.0

    @staticmethod
    def constant(v: float) -> "HyperDual":
        return HyperDual(float(v), 0.0, 0.0, 0.0)

    def __add__(self, o: "HyperDual") -> "HyperDual":
        return HyperDual(
            self.value + o.value, self.d1 + o.d1, self.d2 + o.d2, self.d12 + o.d12
        )

    def __sub__(self, o: "HyperDual") -> "HyperDual":
        return HyperDual(
            self.value - o.value, self.d1 - o.d1, self.d2 - o.d2, self.d12 - o.d12
        )

    def __neg__(self) -> "HyperDual":
        return HyperDual(-self.value, -self.d1, -self.d2, -self.d12)

    def __mul__(self, o: "HyperDual") -> "HyperDual":
        return HyperDual(
            self.value * o.value,
            self.d1 * o.value + self.value * o.d1,
            self.d2 * o.value + self.value * o.d2,
            self.d12 * o.value
            + (self.d1 * o.d2 + self.d2 * o.d1)
            + self.value * o.d12,
        )

    def __truediv__(self, o: "HyperDual") -> "HyperDual":
        if o.value == 0.0:
            raise ZeroDivisionError("division by zero")
        v = self.value / o.value
        d1 = (self.d1 - v * o.d1) / o.value
        d2 = (self.d2 - v * o.d2) / o.value
        d12 = (self.d12 - (d1 * o.d2 + d2 * o.d1) - v * o.d12) / o.value
        return HyperDual(v, d1, d2, d12)

    def apply(self, f: float, fp: float, fpp: float) -> "HyperDual":
        """Chain rule for a scalar function given f, f', f'' at ``value``."""
        return HyperDual(
            f,
            fp * self.d1,
            fp * self.d2,
            fp * self.d12 + fpp * (self.d1 * self.d2),
        )

    def int_pow(self, k: int) -> "HyperDual":
        if k == 0:
            return HyperDual.constant(1.0)
        out = HyperDual.constant(1.0)
        for _ in range(abs(k)):
            out = out * self
        if k < 0:
            out = HyperDual.constant(1.0) / out
        return out


def _hd_call(name: str, u: HyperDual) -> HyperDual:
    v = u.value
    if name == "sin":
        return u.apply(math.sin(v), math.cos(v), -math.sin(v))
    if name == "cos":
        return u.apply(math.cos(v), -math.sin(v), -math.cos(v))
    if name == "tan":
        t = math.tan(v)
        sec2 = 1.0 + t * t
        return u.apply(t, sec2, 2.0 * t * sec2)
    if name == "atan":
        w = 1.0 / (1.0 + v * v)
        return u.apply(math.atan(v), w, -2.0 * v * w * w)
    if name == "exp":
        e = math.exp(v)
        return u.apply(e, e, e)
    if name == "log":
        if v <= 0.0:
            raise ValueError("log of nonpositive value")
        return u.apply(math.log(v), 1.0 / v, -1.0 / (v * v))
    if name == "sqrt":
        if v < 0.0:
            raise ValueError("sqrt of negative value")
        s = math.sqrt(v)
        return u.apply(s, 0.5 / s, -0.25 / (s * v))
    if name == "sinh":
        return u.apply(math.sinh(v), math.cosh(v), math.sinh(v))
    if name == "cosh":
        return u.apply(math.cosh(v), math.sinh(v), math.cosh(v))
    if name == "tanh":
        t = math.tanh(v)
        sech2 = 1.0 - t * t
        return u.apply(t, sech2, -2.0 * t * sech2)
    raise ValueError(f"unknown function '{name}'")


def evaluate_hyperdual(
    expr: Expression, values: Sequence[HyperDual]
) -> HyperDual:
    """Recursive reference evaluation over hyper-dual inputs.

    Shared subtrees are evaluated once.  The compiled tape must agree with
    this function bitwise; tests enforce that.
    """
    if len(values) != expr.n_vars:
        raise ValueError("wrong number of variable values")
    memo: dict[int, HyperDual] = {}

    def go(node: Node) -> HyperDual:
        key = id(node)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if isinstance(node, Const):
            out = HyperDual.constant(node.value)
        elif isinstance(node, Var):
            out = values[node.index]
        elif isinstance(node, Neg):
            out = -go(node.arg)
        elif isinstance(node, Add):
            out = go(node.left) + go(node.right)
        elif isinstance(node, Sub):
            out = go(node.left) - go(node.right)
        elif isinstance(node, Mul):
            out = go(node.left) * go(node.right)
        elif isinstance(node, Div):
            try:
                out = go(node.left) / go(node.right)
            except ZeroDivisionError:
                raise DomainError(
                    "division by zero", to_source(node, expr.names, limit=120)
                ) from None
        elif isinstance(node, Pow):
            out = _hd_pow(node, go, expr.names)
        elif isinstance(node, Call):
            try:
                out = _hd_call(node.func, go(node.arg))
            except ValueError as err:
                raise DomainError(
                    str(err), to_source(node, expr.names, limit=120)
                ) from None
        else:  # pragma: no cover - exhaustive
            raise TypeError(f"unexpected node {node!r}")
        memo[key] = out
        return out

    return go(expr.root)


def _hd_pow(node: Pow, go: Callable[[Node], HyperDual], names) -> HyperDual:
    k = integer_exponent(node.exponent)
    base = go(node.base)
    if k is not None:
        if k < 0 and base.value == 0.0:
            raise DomainError(
                "zero raised to a negative power", to_source(node, names, limit=120)
            )
        return base.int_pow(k)
    if base.value <= 0.0:
        raise DomainError(
            "power with non-integer exponent requires a positive base",
            to_source(node, names, limit=120),
        )
    exponent = go(node.exponent)
    return _hd_call("exp", exponent * _hd_call("log", base))


def integer_exponent(node: Node) -> Optional[int]:
    """The exponent as an int if it is an integer-valued literal, else None."""
    if isinstance(node, Const) and node.value == round(node.value):
        if abs(node.value) <= 1024:
            return int(node.value)
    return None


# ---------------------------------------------------------------------------
# Lexer and parser.
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


class _Token(NamedTuple):
    kind: str  # 'number' | 'name' | 'op' | 'end'
    text: str
    pos: int
    value: float = 0.0


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            at = len(text) - len(stripped)
            raise ParseError(f"unexpected character '{text[at]}'", at)
        if m.end() == pos:  # trailing whitespace only
            break
        pos = m.end()
        if m.group("number") is not None:
            tokens.append(
                _Token("number", m.group("number"), m.start("number"),
                       float(m.group("number")))
            )
        elif m.group("name") is not None:
            tokens.append(_Token("name", m.group("name"), m.start("name")))
        else:
            tokens.append(_Token("op", m.group("op"), m.start("op")))
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.text = text
        self.variables = {name: i for i, name in enumerate(variables)}
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        tok = self.current
        if tok.kind != "op" or tok.text != op:
            raise ParseError(f"expected '{op}'", tok.pos)
        self.advance()

    def at_op(self, *ops: str) -> bool:
        tok = self.current
        return tok.kind == "op" and tok.text in ops

    def parse(self) -> Node:
        node = self.expr()
        tok = self.current
        if tok.kind != "end":
            raise ParseError(f"unexpected trailing input '{tok.text}'", tok.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.at_op("+", "-"):
            op = self.advance().text
            right = self.term()
            node = Add(node, right) if op == "+" else Sub(node, right)
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.at_op("*", "/"):
            op = self.advance().text
            right = self.factor()
            node = Mul(node, right) if op == "*" else Div(node, right)
        return node

    def factor(self) -> Node:
        node = self.unary()
        if self.at_op("^"):
            self.advance()
            return Pow(node, self.factor())  # right-associative
        return node

    def unary(self) -> Node:
        if self.at_op("-"):
            self.advance()
            inner = self.unary()
            # Fold a negated literal so '-2' is a single constant.
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Neg(inner)
        return self.atom()

    def atom(self) -> Node:
        tok = self.current
        if tok.kind == "number":
            self.advance()
            return Const(tok.value)
        if tok.kind == "name":
            self.advance()
            if self.at_op("("):
                if tok.text not in FUNCTIONS:
                    raise UnknownIdentifierError(tok.text, tok.pos)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Call(tok.text, arg)
            index = self.variables.get(tok.text)
            if index is None:
                raise UnknownIdentifierError(tok.text, tok.pos)
            return Var(index)
        if self.at_op("("):
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError("expected expression", tok.pos)


def parse(text: str, variables: Sequence[str]) -> Expression:
    """Parse ``text`` over the ordered variable names ``variables``."""
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    names = list(variables)
    if len(set(names)) != len(names):
        raise ValueError(f"variable names must be distinct, got {names}")
    return Expression(_Parser(text, names).parse(), names)


# ---------------------------------------------------------------------------
# Printer.  Emits minimally parenthesized source that re-parses to an equal
# AST.  Levels: add/sub 1, mul/div 2, '^' 3, unary 4, atoms 5.
# ---------------------------------------------------------------------------


def _const_text(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def to_source(node: Node, names: Sequence[str], limit: Optional[int] = None) -> str:
    """Render ``node`` as re-parsable source.

    ``limit`` truncates the output (with '...') for diagnostics on large
    composed expressions; truncated output is not meant to re-parse.
    """
    parts: list[str] = []
    budget = [limit if limit is not None else -1]

    def emit(s: str) -> bool:
        if budget[0] >= 0:
            if budget[0] == 0:
                return False
            budget[0] -= len(s)
        parts.append(s)
        return True

    def go(n: Node, min_level: int):
        if budget[0] == 0:
            return
        level, text = _node_level(n, names)
        if text is not None:
            emit(text)
            return
        wrap = level < min_level
        if wrap:
            emit("(")
        if isinstance(n, Neg):
            emit("-")
            go(n.arg, 4)
        elif isinstance(n, (Add, Sub)):
            go(n.left, 1)
            emit("+" if isinstance(n, Add) else "-")
            go(n.right, 2)
        elif isinstance(n, (Mul, Div)):
            go(n.left, 2)
            emit("*" if isinstance(n, Mul) else "/")
            go(n.right, 3)
        elif isinstance(n, Pow):
            go(n.base, 4)
            emit("^")
            go(n.exponent, 3)
        elif isinstance(n, Call):
            emit(n.func)
            emit("(")
            go(n.arg, 1)
            emit(")")
        if wrap:
            emit(")")

    go(node, 1)
    out = "".join(parts)
    if budget[0] == 0:
        out += "..."
    return out


def _node_level(n: Node, names) -> tuple[int, Optional[str]]:
    if isinstance(n, Const):
        text = _const_text(n.value)
        # A leading '-' re-parses as unary minus on the literal, which the
        # parser folds back into the same constant; treat as unary level.
        return (4 if text.startswith("-") else 5), text
    if isinstance(n, Var):
        return 5, names[n.index]
    if isinstance(n, Neg):
        return 4, None
    if isinstance(n, (Add, Sub)):
        return 1, None
    if isinstance(n, (Mul, Div)):
        return 2, None
    if isinstance(n, Pow):
        return 3, None
    return 5, None  # Call prints like an atom


# ---------------------------------------------------------------------------
# Structure-building helpers: substitution and derivative trees.
#
# These exist to build composite *fields* (pushforwards of metrics and
# covectors through a coordinate map); point derivatives should go through
# Expression.derivative2 instead.  The constructors fold constants so that
# derivative trees stay compact; folding never changes the value of an
# expression where it evaluates.
# ---------------------------------------------------------------------------

_ZERO = Const(0.0)
_ONE = Const(1.0)


def _is_const(n: Node, v: float) -> bool:
    return isinstance(n, Const) and n.value == v


def _add(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def _sub(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return Sub(a, b)


def _neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def _div(a: Node, b: Node) -> Node:
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return _ZERO
    return Div(a, b)


def _pow(a: Node, k: float) -> Node:
    if k == 1.0:
        return a
    if k == 0.0:
        return _ONE
    return Pow(a, Const(k))


def compose(expr: Expression, replacements: Sequence[Expression]) -> Expression:
    """Substitute ``replacements[i]`` for variable ``i`` of ``expr``.

    All replacement expressions must share one variable context, which
    becomes the context of the result.  Shared subtrees stay shared, so
    repeated composition grows the expression graph linearly.
    """
    if len(replacements) != expr.n_vars:
        raise ValueError(
            f"need {expr.n_vars} replacement expressions, got {len(replacements)}"
        )
    names = replacements[0].names
    for r in replacements:
        if r.names != names:
            raise ValueError("replacement expressions use different variables")
    roots = [r.root for r in replacements]
    memo: dict[int, Node] = {}

    def go(n: Node) -> Node:
        hit = memo.get(id(n))
        if hit is not None:
            return hit
        if isinstance(n, Var):
            out: Node = roots[n.index]
        elif isinstance(n, Const):
            out = n
        elif isinstance(n, Neg):
            out = _neg(go(n.arg))
        elif isinstance(n, Add):
            out = _add(go(n.left), go(n.right))
        elif isinstance(n, Sub):
            out = _sub(go(n.left), go(n.right))
        elif isinstance(n, Mul):
            out = _mul(go(n.left), go(n.right))
        elif isinstance(n, Div):
            out = _div(go(n.left), go(n.right))
        elif isinstance(n, Pow):
            out = Pow(go(n.base), go(n.exponent))
        else:
            out = Call(n.func, go(n.arg))
        memo[id(n)] = out
        return out

    return Expression(go(expr.root), names)


_FPRIME: dict[str, Callable[[Node], Node]] = {
    "sin": lambda u: Call("cos", u),
    "cos": lambda u: _neg(Call("sin", u)),
    "tan": lambda u: _add(_ONE, _pow(Call("tan", u), 2.0)),
    "atan": lambda u: _div(_ONE, _add(_ONE, _pow(u, 2.0))),
    "exp": lambda u: Call("exp", u),
    "log": lambda u: _div(_ONE, u),
    "sqrt": lambda u: _div(Const(0.5), Call("sqrt", u)),
    "sinh": lambda u: Call("cosh", u),
    "cosh": lambda u: Call("sinh", u),
    "tanh": lambda u: _sub(_ONE, _pow(Call("tanh", u), 2.0)),
}


def differentiate(expr: Expression, var: int) -> Expression:
    """Derivative of ``expr`` with respect to variable ``var``, as a tree.

    Used to build Jacobian-entry *fields* when composing pushforwards; no
    simplification is attempted beyond constant folding.
    """
    if not (0 <= var < expr.n_vars):
        raise IndexError(f"variable index {var} out of range")
    memo: dict[int, Node] = {}

    def go(n: Node) -> Node:
        hit = memo.get(id(n))
        if hit is not None:
            return hit
        if isinstance(n, Const):
            out: Node = _ZERO
        elif isinstance(n, Var):
            out = _ONE if n.index == var else _ZERO
        elif isinstance(n, Neg):
            out = _neg(go(n.arg))
        elif isinstance(n, Add):
            out = _add(go(n.left), go(n.right))
        elif isinstance(n, Sub):
            out = _sub(go(n.left), go(n.right))
        elif isinstance(n, Mul):
            out = _add(_mul(go(n.left), n.right), _mul(n.left, go(n.right)))
        elif isinstance(n, Div):
            num = _sub(_mul(go(n.left), n.right), _mul(n.left, go(n.right)))
            out = _div(num, _mul(n.right, n.right))
        elif isinstance(n, Pow):
            k = integer_exponent(n.exponent)
            if k is not None:
                out = _mul(
                    _mul(Const(float(k)), _pow(n.base, float(k - 1))), go(n.base)
                )
            else:
                # d(a^b) = a^b * (b' log a + b a'/a), valid for a > 0
                bracket = _add(
                    _mul(go(n.exponent), Call("log", n.base)),
                    _mul(n.exponent, _div(go(n.base), n.base)),
                )
                out = _mul(n, bracket)
        else:
            out = _mul(_FPRIME[n.func](n.arg), go(n.arg))
        memo[id(n)] = out
        return out

    return Expression(go(expr.root), expr.names)
