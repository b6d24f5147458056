"""Compilation of expression graphs to a flat register tape.

Instruction ``k`` writes register ``k`` of a ``(n_instructions, 4)`` float64
buffer holding hyper-dual quadruples ``(value, d1, d2, d12)``.  Shared
subtrees are emitted once, so composed expression graphs stay linear in the
number of distinct nodes.  The tape is what the numba and pure-NumPy
backends in ``_kernels`` execute.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from . import _kernels as K
from .errors import DomainError
from .exprlang import (
    Add,
    Call,
    Const,
    Div,
    Mul,
    Neg,
    Pow,
    Sub,
    Var,
    integer_exponent,
    to_source,
)

if TYPE_CHECKING:  # pragma: no cover
    from .exprlang import Expression, Node

_CALL_OPS = {
    "sin": K.OP_SIN,
    "cos": K.OP_COS,
    "tan": K.OP_TAN,
    "atan": K.OP_ATAN,
    "exp": K.OP_EXP,
    "log": K.OP_LOG,
    "sqrt": K.OP_SQRT,
    "sinh": K.OP_SINH,
    "cosh": K.OP_COSH,
    "tanh": K.OP_TANH,
}

_ERROR_MESSAGES = {
    K.ERR_DIV_ZERO: "division by zero",
    K.ERR_LOG_DOMAIN: "log of nonpositive value",
    K.ERR_SQRT_DOMAIN: "sqrt of negative value",
    K.ERR_POW_DOMAIN: "power with non-integer exponent requires a positive base",
    K.ERR_POW_ZERO_NEG: "zero raised to a negative power",
}


class Tape:
    __slots__ = ("ops", "arg1", "arg2", "consts", "nodes", "names")

    def __init__(self, ops, arg1, arg2, consts, nodes, names):
        self.ops = ops
        self.arg1 = arg1
        self.arg2 = arg2
        self.consts = consts
        self.nodes = nodes  # per-instruction source node, for diagnostics
        self.names = names

    def __len__(self) -> int:
        return len(self.ops)

    def run(self, seeds: np.ndarray, evaluator=None) -> np.ndarray:
        """Execute and return the root register ``(value, d1, d2, d12)``.

        ``seeds`` is the ``(n_vars, 4)`` array of variable quadruples.  The
        evaluator defaults to the process-wide backend selection.
        """
        if evaluator is None:
            evaluator = K.active_evaluator()
        buf = np.empty((len(self.ops), 4))
        err, pos = evaluator(self.ops, self.arg1, self.arg2, self.consts, seeds, buf)
        if err != K.ERR_OK:
            raise DomainError(
                _ERROR_MESSAGES[err],
                to_source(self.nodes[pos], self.names, limit=120),
            )
        return buf[-1]


def compile_tape(expr: "Expression") -> Tape:
    """Flatten ``expr`` into a :class:`Tape` (iterative postorder)."""
    ops: list[int] = []
    arg1: list[int] = []
    arg2: list[int] = []
    consts: list[float] = []
    nodes: list["Node"] = []
    slot: dict[int, int] = {}

    def emit(node: "Node", op: int, a: int, b: int = 0) -> None:
        ops.append(op)
        arg1.append(a)
        arg2.append(b)
        nodes.append(node)
        slot[id(node)] = len(ops) - 1

    stack: list[tuple["Node", bool]] = [(expr.root, False)]
    while stack:
        node, ready = stack.pop()
        if id(node) in slot:
            continue
        if not ready:
            stack.append((node, True))
            if isinstance(node, Neg):
                stack.append((node.arg, False))
            elif isinstance(node, (Add, Sub, Mul, Div)):
                stack.append((node.right, False))
                stack.append((node.left, False))
            elif isinstance(node, Pow):
                if integer_exponent(node.exponent) is None:
                    stack.append((node.exponent, False))
                stack.append((node.base, False))
            elif isinstance(node, Call):
                stack.append((node.arg, False))
            continue
        if isinstance(node, Const):
            consts.append(node.value)
            emit(node, K.OP_CONST, len(consts) - 1)
        elif isinstance(node, Var):
            emit(node, K.OP_VAR, node.index)
        elif isinstance(node, Neg):
            emit(node, K.OP_NEG, slot[id(node.arg)])
        elif isinstance(node, Add):
            emit(node, K.OP_ADD, slot[id(node.left)], slot[id(node.right)])
        elif isinstance(node, Sub):
            emit(node, K.OP_SUB, slot[id(node.left)], slot[id(node.right)])
        elif isinstance(node, Mul):
            emit(node, K.OP_MUL, slot[id(node.left)], slot[id(node.right)])
        elif isinstance(node, Div):
            emit(node, K.OP_DIV, slot[id(node.left)], slot[id(node.right)])
        elif isinstance(node, Pow):
            k = integer_exponent(node.exponent)
            if k is not None:
                emit(node, K.OP_POW_INT, slot[id(node.base)], k)
            else:
                emit(node, K.OP_POW, slot[id(node.base)], slot[id(node.exponent)])
        elif isinstance(node, Call):
            emit(node, _CALL_OPS[node.func], slot[id(node.arg)])
        else:  # pragma: no cover - exhaustive
            raise TypeError(f"unexpected node {node!r}")

    return Tape(
        np.asarray(ops, dtype=np.int64),
        np.asarray(arg1, dtype=np.int64),
        np.asarray(arg2, dtype=np.int64),
        np.asarray(consts, dtype=np.float64),
        nodes,
        expr.names,
    )
