"""Float-mode expression evaluation on flat tapes.

An Expr is compiled once per chart into a postorder tape (opcode, argument
and constant arrays).  Evaluating curvature pipelines means running tens of
thousands of such tapes, many with very large derivative trees, so the
interpreter is the package's hot spot.  Two implementations exist:

* ``_evalcore`` — a Cython stack machine, built by setup.py;
* ``_py_eval_tape`` — a pure-Python interpreter with identical semantics.

The compiled kernel is used when importable unless the environment variable
``KILLINGFLAG_PURE`` is set to a nonempty value.  ``backend_name()`` reports
which one is active; benchmarks/bench_eval.py compares them.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import expr as E
from .errors import DomainError

OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_NEG = 6
OP_POW = 7
OP_SIN = 8
OP_COS = 9
OP_EXP = 10
OP_LOG = 11
OP_SQRT = 12

_ERR_MESSAGES = {
    1: "division by zero",
    2: "log of nonpositive value",
    3: "square root of negative value",
}

try:  # pragma: no cover - exercised only when the extension is built
    from . import _evalcore
except ImportError:
    _evalcore = None

_FORCE_PURE = bool(os.environ.get("KILLINGFLAG_PURE"))


def backend_name() -> str:
    if _evalcore is not None and not _FORCE_PURE:
        return "compiled"
    return "pure"


class Tape:
    """A compiled expression: postorder opcode/argument/constant arrays."""

    __slots__ = ("ops", "args", "consts", "stack_size")

    def __init__(self, ops, args, consts, stack_size):
        self.ops = np.asarray(ops, dtype=np.int32)
        self.args = np.asarray(args, dtype=np.int32)
        self.consts = np.asarray(consts, dtype=np.float64)
        self.stack_size = max(stack_size, 1)


def compile_tape(e: E.Expr, chart: tuple) -> Tape:
    """Compile ``e`` against coordinate order ``chart``, with caching."""
    cache = e._tapes
    if cache is None:
        cache = e._tapes = {}
    tape = cache.get(chart)
    if tape is None:
        tape = _compile(e, chart)
        cache[chart] = tape
    return tape


def _compile(root, chart):
    index = {name: i for i, name in enumerate(chart)}
    ops, args, consts = [], [], []
    depth = 0
    max_depth = 0
    # explicit postorder walk: derivative trees can be deep
    work = [(root, False)]
    while work:
        node, emit = work.pop()
        if not emit:
            if isinstance(node, (E.Const, E.Var)):
                work.append((node, True))
            elif isinstance(node, (E.Add, E.Sub, E.Mul, E.Div)):
                work.append((node, True))
                work.append((node.b, False))
                work.append((node.a, False))
            elif isinstance(node, (E.Neg, E.Pow, E.Call)):
                work.append((node, True))
                work.append((node.a, False))
            else:
                raise TypeError(f"not an Expr: {node!r}")
            continue
        if isinstance(node, E.Const):
            ops.append(OP_CONST)
            args.append(len(consts))
            consts.append(float(node.value))
            depth += 1
        elif isinstance(node, E.Var):
            try:
                ops.append(OP_VAR)
                args.append(index[node.name])
            except KeyError:
                from .errors import UnknownVariable

                raise UnknownVariable(node.name, chart) from None
            depth += 1
        elif isinstance(node, E.Add):
            ops.append(OP_ADD)
            args.append(0)
            depth -= 1
        elif isinstance(node, E.Sub):
            ops.append(OP_SUB)
            args.append(0)
            depth -= 1
        elif isinstance(node, E.Mul):
            ops.append(OP_MUL)
            args.append(0)
            depth -= 1
        elif isinstance(node, E.Div):
            ops.append(OP_DIV)
            args.append(0)
            depth -= 1
        elif isinstance(node, E.Neg):
            ops.append(OP_NEG)
            args.append(0)
        elif isinstance(node, E.Pow):
            ops.append(OP_POW)
            args.append(node.k)
        elif isinstance(node, E.Call):
            ops.append(
                {
                    "sin": OP_SIN,
                    "cos": OP_COS,
                    "exp": OP_EXP,
                    "log": OP_LOG,
                    "sqrt": OP_SQRT,
                }[node.fn]
            )
            args.append(0)
        max_depth = max(max_depth, depth)
    return Tape(ops, args, consts, max_depth)


def _py_eval_tape(ops, args, consts, point):
    """Reference interpreter; must agree with the compiled kernel exactly."""
    stack = []
    push = stack.append
    for i in range(len(ops)):
        op = ops[i]
        a = args[i]
        if op == OP_CONST:
            push(consts[a])
        elif op == OP_VAR:
            push(point[a])
        elif op == OP_ADD:
            y = stack.pop()
            stack[-1] = stack[-1] + y
        elif op == OP_SUB:
            y = stack.pop()
            stack[-1] = stack[-1] - y
        elif op == OP_MUL:
            y = stack.pop()
            stack[-1] = stack[-1] * y
        elif op == OP_DIV:
            y = stack.pop()
            if y == 0.0:
                return 0.0, 1
            stack[-1] = stack[-1] / y
        elif op == OP_NEG:
            stack[-1] = -stack[-1]
        elif op == OP_POW:
            x = stack[-1]
            if x == 0.0 and a < 0:
                return 0.0, 1
            stack[-1] = x ** a
        elif op == OP_SIN:
            stack[-1] = math.sin(stack[-1])
        elif op == OP_COS:
            stack[-1] = math.cos(stack[-1])
        elif op == OP_EXP:
            stack[-1] = math.exp(stack[-1])
        elif op == OP_LOG:
            x = stack[-1]
            if x <= 0.0:
                return 0.0, 2
            stack[-1] = math.log(x)
        elif op == OP_SQRT:
            x = stack[-1]
            if x < 0.0:
                return 0.0, 3
            stack[-1] = math.sqrt(x)
    return stack[0], 0


def run_tape(tape: Tape, point, pure: bool = False) -> float:
    """Run a compiled tape at one point; raises DomainError on bad input."""
    pt = np.asarray(point, dtype=np.float64)
    if _evalcore is not None and not _FORCE_PURE and not pure:
        value, err = _evalcore.eval_tape(
            tape.ops, tape.args, tape.consts, pt, np.empty(tape.stack_size)
        )
    else:
        value, err = _py_eval_tape(
            tape.ops.tolist(), tape.args.tolist(), tape.consts.tolist(), pt.tolist()
        )
    if err:
        raise DomainError(_ERR_MESSAGES[err])
    return float(value)


def eval_expr_float(e: E.Expr, chart: tuple, point) -> float:
    return run_tape(compile_tape(e, chart), point)
