"""Symbolic scalar expressions over chart coordinates.

The grammar covers exactly what metric components need: rational
constants, coordinate variables, ``+ - * / ^`` (integer powers only) and
the primitives ``sin cos exp log sqrt``.  Differentiation is closed over
the grammar, so covariant derivatives of any order stay inside it.

Expressions are immutable trees.  Smart constructors fold constants and
apply 0/1 identities, and nothing else: rank decisions downstream happen
after numeric evaluation, so symbolic normal forms are not needed.

Two evaluation modes exist.  Exact mode computes in rationals and only
falls over to float when an irrational primitive is applied to a nonzero
argument (the result is then a float, never a disguised rational).
Float mode runs on a compiled tape, see _tape.py.
"""

from __future__ import annotations

import math
from decimal import Decimal
from fractions import Fraction
from math import isqrt
from typing import Union

from .errors import DomainError, ExprSyntaxError, ShapeMismatch, UnknownVariable

Scalar = Union[Fraction, float]

_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class Expr:
    """Base class for expression nodes."""

    __slots__ = ("_hash", "_tapes", "_dcache")

    def __init__(self):
        self._hash = None
        self._tapes = None
        self._dcache = None

    def key(self):
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.key())
        return self._hash

    def __repr__(self):
        return f"Expr({to_source(self)})"


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        super().__init__()
        self.value = Fraction(value)

    def key(self):
        return ("const", self.value)


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        super().__init__()
        self.name = name

    def key(self):
        return ("var", self.name)


class _Binary(Expr):
    __slots__ = ("a", "b")

    op = "?"

    def __init__(self, a, b):
        super().__init__()
        self.a = a
        self.b = b

    def key(self):
        return (self.op, self.a, self.b)


class Add(_Binary):
    __slots__ = ()
    op = "+"


class Sub(_Binary):
    __slots__ = ()
    op = "-"


class Mul(_Binary):
    __slots__ = ()
    op = "*"


class Div(_Binary):
    __slots__ = ()
    op = "/"


class Neg(Expr):
    __slots__ = ("a",)

    def __init__(self, a):
        super().__init__()
        self.a = a

    def key(self):
        return ("neg", self.a)


class Pow(Expr):
    """Integer power; the exponent is a plain int, not a subexpression."""

    __slots__ = ("a", "k")

    def __init__(self, a, k):
        super().__init__()
        self.a = a
        self.k = int(k)

    def key(self):
        return ("pow", self.a, self.k)


class Call(Expr):
    __slots__ = ("fn", "a")

    def __init__(self, fn, a):
        super().__init__()
        self.fn = fn
        self.a = a

    def key(self):
        return ("call", self.fn, self.a)


ZERO = Const(0)
ONE = Const(1)


def _is_const(e, value=None):
    if not isinstance(e, Const):
        return False
    return value is None or e.value == value


# ---------------------------------------------------------------------------
# Smart constructors.  All tree construction goes through these so that
# constant subtrees collapse; flat metrics then produce literally-zero
# curvature trees instead of towers of vanishing terms.


def const(value) -> Expr:
    return Const(value)


def var(name) -> Expr:
    return Var(name)


def add(a, b) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    return Add(a, b)


def sub(a, b) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return neg(b)
    return Sub(a, b)


def mul(a, b) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    return Mul(a, b)


def div(a, b) -> Expr:
    # Never fold away a symbolic denominator and never fold x/0: division
    # domain errors must surface at evaluation time, not silently vanish.
    if _is_const(b) and b.value != 0:
        if _is_const(a):
            return Const(a.value / b.value)
        if b.value == 1:
            return a
    return Div(a, b)


def neg(a) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def powi(a, k) -> Expr:
    k = int(k)
    if k == 0:
        return ONE
    if k == 1:
        return a
    if _is_const(a) and not (a.value == 0 and k < 0):
        return Const(a.value ** k)
    return Pow(a, k)


def call(fn, a) -> Expr:
    if fn not in _FUNCTIONS:
        raise ValueError(f"unknown function {fn!r}")
    if _is_const(a):
        v = a.value
        # fold only the arithmetically forced points; everything else is
        # evaluation's business
        if fn == "sin" and v == 0:
            return ZERO
        if fn == "cos" and v == 0:
            return ONE
        if fn == "exp" and v == 0:
            return ONE
        if fn == "log" and v == 1:
            return ZERO
        if fn == "sqrt" and v >= 0:
            r = _exact_sqrt(v)
            if r is not None:
                return Const(r)
    return Call(fn, a)


def nsum(terms) -> Expr:
    """Sum a sequence as a balanced tree (keeps recursion depth at log n)."""
    terms = [t for t in terms if not _is_const(t, 0)]
    if not terms:
        return ZERO
    while len(terms) > 1:
        paired = []
        for i in range(0, len(terms) - 1, 2):
            paired.append(add(terms[i], terms[i + 1]))
        if len(terms) % 2:
            paired.append(terms[-1])
        terms = paired
    return terms[0]


def _exact_sqrt(q: Fraction):
    """Square root of a nonnegative rational, or None if irrational."""
    rn, rd = isqrt(q.numerator), isqrt(q.denominator)
    if rn * rn == q.numerator and rd * rd == q.denominator:
        return Fraction(rn, rd)
    return None


# ---------------------------------------------------------------------------
# Parsing


_TOKEN_OPS = ("**", "+", "-", "*", "/", "^", "(", ")")


def _tokenize(source):
    tokens = []  # (kind, text, pos)
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if source.startswith("**", i):
            tokens.append(("op", "^", i))
            i += 2
            continue
        if ch in "+-*/^()":
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            text = source[i:j]
            if text.count(".") > 1:
                raise ExprSyntaxError(
                    f"malformed number {text!r} at position {i}", i, "number"
                )
            tokens.append(("num", text, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r} at position {i}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    """Recursive descent over the token list.

    Precedence, tightest first: integer power, unary minus, * /, + -.
    """

    def __init__(self, tokens, chart):
        self.tokens = tokens
        self.chart = tuple(chart)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, expected):
        kind, text, pos = self.peek()
        shown = text if kind != "end" else "end of input"
        raise ExprSyntaxError(
            f"syntax error at position {pos}: got {shown!r}, expected {expected}",
            pos,
            expected,
        )

    def expect_op(self, op):
        kind, text, pos = self.peek()
        if kind == "op" and text == op:
            return self.take()
        self.fail(repr(op))

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail("end of input")
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                rhs = self.term()
                e = add(e, rhs) if text == "+" else sub(e, rhs)
            else:
                return e

    def term(self):
        e = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                rhs = self.factor()
                e = mul(e, rhs) if text == "*" else div(e, rhs)
            else:
                return e

    def factor(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return neg(self.factor())
        return self.power()

    def power(self):
        e = self.atom()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text == "^":
                self.take()
                e = powi(e, self.exponent())
            else:
                return e

    def exponent(self):
        kind, text, pos = self.peek()
        if kind == "op" and text == "(":
            self.take()
            k = self.exponent()
            self.expect_op(")")
            return k
        sign = 1
        if kind == "op" and text == "-":
            self.take()
            sign = -1
            kind, text, pos = self.peek()
        if kind == "num" and "." not in text and "e" not in text and "E" not in text:
            self.take()
            return sign * int(text)
        self.fail("integer exponent")

    def atom(self):
        kind, text, pos = self.peek()
        if kind == "op" and text == "(":
            self.take()
            e = self.expr()
            self.expect_op(")")
            return e
        if kind == "num":
            self.take()
            return Const(Fraction(Decimal(text)))
        if kind == "name":
            self.take()
            nkind, ntext, _ = self.peek()
            if nkind == "op" and ntext == "(":
                if text not in _FUNCTIONS:
                    raise ExprSyntaxError(
                        f"unknown function {text!r} at position {pos}",
                        pos,
                        "one of " + ", ".join(_FUNCTIONS),
                    )
                self.take()
                arg = self.expr()
                self.expect_op(")")
                return call(text, arg)
            if text not in self.chart:
                raise UnknownVariable(text, self.chart, position=pos)
            return Var(text)
        self.fail("a number, variable, function call or parenthesis")


def parse(source: str, chart) -> Expr:
    """Parse ``source`` against the coordinate names in ``chart``."""
    return _Parser(_tokenize(source), chart).parse()


# ---------------------------------------------------------------------------
# Printing (inverse of parse: parse(to_source(e)) rebuilds e node for node)

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e):
    if isinstance(e, (Add, Sub)):
        return _PREC_ADD
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    if isinstance(e, Neg):
        return _PREC_NEG
    if isinstance(e, Pow):
        return _PREC_POW
    if isinstance(e, Const) and (e.value < 0 or e.value.denominator != 1):
        return _PREC_MUL  # prints as -3 or 1/2
    return _PREC_ATOM


def to_source(e: Expr) -> str:
    """Render ``e`` as parseable source text."""
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, (Add, Sub, Mul, Div)):
        p = _prec(e)
        left = _wrap(e.a, p, tight=False)
        right = _wrap(e.b, p, tight=True)
        return f"{left} {e.op} {right}"
    if isinstance(e, Neg):
        return "-" + _wrap(e.a, _PREC_NEG, tight=True)
    if isinstance(e, Pow):
        base = _wrap(e.a, _PREC_POW, tight=True)
        return f"{base}^{e.k}" if e.k >= 0 else f"{base}^(-{-e.k})"
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.a)})"
    raise TypeError(f"not an Expr: {e!r}")


def _wrap(child, parent_prec, tight):
    text = to_source(child)
    cp = _prec(child)
    if cp < parent_prec or (tight and cp == parent_prec):
        return f"({text})"
    return text


# ---------------------------------------------------------------------------
# Differentiation


def differentiate(e: Expr, v: str) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to coordinate ``v``.

    Repeated application is supported to any order; results are cached on
    the nodes, which pays off heavily on the shared subtrees of curvature
    expressions.
    """
    if e._dcache is None:
        e._dcache = {}
    hit = e._dcache.get(v)
    if hit is not None:
        return hit
    d = _diff(e, v)
    e._dcache[v] = d
    return d


def _diff(e, v):
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Add):
        return add(differentiate(e.a, v), differentiate(e.b, v))
    if isinstance(e, Sub):
        return sub(differentiate(e.a, v), differentiate(e.b, v))
    if isinstance(e, Mul):
        da, db = differentiate(e.a, v), differentiate(e.b, v)
        return add(mul(da, e.b), mul(e.a, db))
    if isinstance(e, Div):
        da, db = differentiate(e.a, v), differentiate(e.b, v)
        if _is_const(db, 0):
            return div(da, e.b)
        num = sub(mul(da, e.b), mul(e.a, db))
        return div(num, powi(e.b, 2))
    if isinstance(e, Neg):
        return neg(differentiate(e.a, v))
    if isinstance(e, Pow):
        da = differentiate(e.a, v)
        return mul(mul(Const(e.k), powi(e.a, e.k - 1)), da)
    if isinstance(e, Call):
        da = differentiate(e.a, v)
        if e.fn == "sin":
            outer = call("cos", e.a)
        elif e.fn == "cos":
            outer = neg(call("sin", e.a))
        elif e.fn == "exp":
            outer = e
        elif e.fn == "log":
            return div(da, e.a)
        elif e.fn == "sqrt":
            return div(da, mul(Const(2), e))
        else:  # pragma: no cover
            raise ValueError(e.fn)
        return mul(outer, da)
    raise TypeError(f"not an Expr: {e!r}")


def variables(e: Expr) -> set:
    """Names of all coordinates referenced by ``e``."""
    out = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.name)
        elif isinstance(node, _Binary):
            stack.append(node.a)
            stack.append(node.b)
        elif isinstance(node, (Neg, Pow, Call)):
            stack.append(node.a)
    return out


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(e: Expr, point, chart, mode: str = "float") -> Scalar:
    """Evaluate ``e`` at ``point`` (aligned with ``chart``).

    Exact mode returns a Fraction whenever the expression is rational at a
    rational point; applying sin/cos/exp/log/sqrt to anything that is not
    an arithmetically forced case yields a float, and floats propagate.
    """
    if len(point) != len(chart):
        raise ShapeMismatch(
            f"point has {len(point)} components but chart has {len(chart)}"
        )
    if mode == "float":
        from ._tape import eval_expr_float

        return eval_expr_float(e, tuple(chart), [float(x) for x in point])
    if mode != "exact":
        raise ValueError(f"mode must be 'exact' or 'float', got {mode!r}")
    env = dict(zip(chart, point))
    return _eval_exact(e, env)


def _eval_exact(e, env):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            v = env[e.name]
        except KeyError:
            raise UnknownVariable(e.name, tuple(env)) from None
        return v if isinstance(v, float) else Fraction(v)
    if isinstance(e, Add):
        return _eval_exact(e.a, env) + _eval_exact(e.b, env)
    if isinstance(e, Sub):
        return _eval_exact(e.a, env) - _eval_exact(e.b, env)
    if isinstance(e, Mul):
        return _eval_exact(e.a, env) * _eval_exact(e.b, env)
    if isinstance(e, Div):
        num, den = _eval_exact(e.a, env), _eval_exact(e.b, env)
        if den == 0:
            raise DomainError("division by zero")
        return num / den
    if isinstance(e, Neg):
        return -_eval_exact(e.a, env)
    if isinstance(e, Pow):
        base = _eval_exact(e.a, env)
        if base == 0 and e.k < 0:
            raise DomainError("zero raised to a negative power")
        return base ** e.k
    if isinstance(e, Call):
        return _eval_call(e.fn, _eval_exact(e.a, env))
    raise TypeError(f"not an Expr: {e!r}")


def _eval_call(fn, x):
    exact = isinstance(x, Fraction)
    if fn == "sin":
        if exact and x == 0:
            return Fraction(0)
        return math.sin(x)
    if fn == "cos":
        if exact and x == 0:
            return Fraction(1)
        return math.cos(x)
    if fn == "exp":
        if exact and x == 0:
            return Fraction(1)
        return math.exp(x)
    if fn == "log":
        if x <= 0:
            raise DomainError(f"log of nonpositive value {x}")
        if exact and x == 1:
            return Fraction(0)
        return math.log(x)
    if fn == "sqrt":
        if x < 0:
            raise DomainError(f"square root of negative value {x}")
        if exact:
            r = _exact_sqrt(x)
            if r is not None:
                return r
        return math.sqrt(x)
    raise ValueError(fn)  # pragma: no cover
