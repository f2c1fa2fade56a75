"""Pointwise metric geometry on top of the expression language.

Everything is computed symbolically first (inverse metric by adjugate,
Christoffel symbols, the curvature tensor and its covariant derivatives to
any order) and only then evaluated at the analysis point, in exact or
float arithmetic.  Numeric differentiation never enters: rank decisions
downstream cannot survive it.

Curvature sign convention.  The stored tensor is the one defined by the
Ricci identity on covectors,

    A_{c;ba} - A_{c;ab} = R_{abc}^d A_d ,

equivalently R_{abc}^d = d_b Gamma^d_{ca} - d_a Gamma^d_{cb}
+ Gamma^e_{ca} Gamma^d_{eb} - Gamma^e_{cb} Gamma^d_{ea}, lowered with the
metric.  With this choice Killing fields satisfy K_{a;bc} = R_{abc}^d K_d
and every connection, curvature-operator and bracket formula downstream
holds literally.  Curvature scalars reported to users (Gaussian curvature,
the constant-curvature kappa) are extracted through the canonical form

    R_{abcd} = c (g_{ac} g_{bd} - g_{ad} g_{bc})

whose sign is calibrated so the unit sphere comes out at c = +1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Optional

import numpy as np

from . import expr as E
from .errors import (
    OrderCapExceeded,
    ShapeMismatch,
    SignatureMismatch,
    SingularMetric,
    WrongDimension,
)
from .linalg import DEFAULT_RTOL, eigh_signature, invert_matrix

Scalar = E.Scalar


def default_order_cap(n: int) -> int:
    """Default cap on curvature derivative order: the flag stabilizes
    within dim W = n(n+1)/2 steps, each consuming one more derivative."""
    return n * (n + 1) // 2 + 2


# ---------------------------------------------------------------------------
# Metric specification


@dataclass(frozen=True)
class MetricSpec:
    """A metric given by closed-form coordinate expressions.

    ``components`` is the full symmetric matrix (as nested tuples of Expr);
    ``signature`` is the declared pair (p, q) of positive/negative
    eigenvalue counts, checked against the evaluated matrix at every
    analysis point.
    """

    dim: int
    coords: tuple
    components: tuple
    signature: tuple

    def __post_init__(self):
        if self.dim < 2:
            raise WrongDimension(f"dimension must be >= 2, got {self.dim}")
        if len(self.coords) != self.dim:
            raise ShapeMismatch("coords length does not match dim")
        if len(self.components) != self.dim or any(
            len(row) != self.dim for row in self.components
        ):
            raise ShapeMismatch("components must be a dim x dim matrix")
        for i in range(self.dim):
            for j in range(self.dim):
                if self.components[i][j] != self.components[j][i]:
                    raise ShapeMismatch(
                        f"components must be symmetric; entries ({i},{j}) and "
                        f"({j},{i}) differ"
                    )
        p, q = self.signature
        if p + q != self.dim or p < 0 or q < 0:
            raise ShapeMismatch(f"signature {self.signature} does not sum to dim")

    @classmethod
    def from_upper_triangle(cls, coords, upper, signature=None):
        """Build from the row-major upper triangle of expression sources."""
        coords = tuple(coords)
        n = len(coords)
        if len(upper) != n * (n + 1) // 2:
            raise ShapeMismatch(
                f"expected {n * (n + 1) // 2} upper-triangle entries, got {len(upper)}"
            )
        full = [[None] * n for _ in range(n)]
        it = iter(upper)
        for i in range(n):
            for j in range(i, n):
                e = next(it)
                if isinstance(e, str):
                    e = E.parse(e, coords)
                full[i][j] = e
                full[j][i] = e
        if signature is None:
            signature = (n, 0)
        return cls(n, coords, tuple(tuple(row) for row in full), tuple(signature))

    @cached_property
    def geometry(self) -> "SymbolicGeometry":
        return SymbolicGeometry(self)

    @property
    def is_riemannian(self) -> bool:
        return self.signature[1] == 0 or self.signature[0] == 0

    def evaluate_at(self, point, mode="float"):
        """Metric matrix evaluated at a point (no invertibility check)."""
        return evaluate_array(self.geometry.g, point, self.coords, mode)

    def validate_at(self, point, mode="float", rtol=DEFAULT_RTOL):
        """Check invertibility and the declared signature at ``point``."""
        gx = self.evaluate_at(point, mode)
        _require_invertible(gx, rtol, point)
        p, q, z = eigh_signature(gx, rtol)
        if z:
            raise SingularMetric(
                f"metric has a null eigenvalue at {_fmt_point(point)}"
            )
        if (p, q) != self.signature:
            raise SignatureMismatch(
                f"metric eigenvalue signs {(p, q)} at {_fmt_point(point)} do "
                f"not match declared signature {self.signature}"
            )
        return gx


def _fmt_point(point):
    return "(" + ", ".join(str(x) for x in point) + ")"


def _require_invertible(gx, rtol, point):
    a = np.array([[float(x) for x in row] for row in gx])
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= rtol * s[0]:
        raise SingularMetric(
            f"metric is singular at {_fmt_point(point)} "
            f"(singular values {s.tolist()})"
        )


# ---------------------------------------------------------------------------
# Tensor values at a point


@dataclass
class TensorValue:
    """Multi-index array at a point.

    ``variance`` is a string with one character per index, 'l' covariant
    or 'u' contravariant.  Entries are Fractions (possibly degraded to
    floats by irrational primitives) in exact mode, floats otherwise.
    """

    entries: np.ndarray
    variance: str
    point: tuple

    def __post_init__(self):
        if self.entries.ndim != len(self.variance):
            raise ShapeMismatch(
                f"variance {self.variance!r} does not match array rank "
                f"{self.entries.ndim}"
            )

    @property
    def rank(self):
        return self.entries.ndim

    @property
    def dim(self):
        return self.entries.shape[0] if self.entries.ndim else 0

    def __getitem__(self, idx):
        return self.entries[idx]

    def max_abs(self) -> float:
        return max_abs(self.entries)


@dataclass
class ChristoffelValue:
    """Connection coefficients Gamma^a_{bc} at a point, symmetric in b, c."""

    entries: np.ndarray
    point: tuple

    def __getitem__(self, idx):
        return self.entries[idx]


def max_abs(arr) -> float:
    a = np.asarray(arr)
    if a.dtype == object:
        best = 0.0
        for x in a.flat:
            best = max(best, abs(float(x)))
        return best
    return float(np.max(np.abs(a))) if a.size else 0.0


# ---------------------------------------------------------------------------
# Symbolic geometry


def _obj_zeros(shape):
    arr = np.empty(shape, dtype=object)
    arr[...] = E.ZERO
    return arr


class SymbolicGeometry:
    """Symbolic curvature data for one metric, cached per derivative order."""

    def __init__(self, metric: MetricSpec):
        self.metric = metric
        self.coords = metric.coords
        self.n = metric.dim
        self._riemann_chain = None

    @cached_property
    def g(self):
        n = self.n
        arr = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                arr[i, j] = self.metric.components[i][j]
        return arr

    @cached_property
    def det(self):
        return _determinant(self.g, self.n)

    @cached_property
    def ginv(self):
        """Inverse metric by adjugate over determinant (symbolic, exact)."""
        n = self.n
        adj = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                minor = _minor(self.g, j, i)
                cof = _determinant(minor, n - 1)
                if (i + j) % 2:
                    cof = E.neg(cof)
                adj[i, j] = cof
        return np.array(
            [[E.div(adj[i, j], self.det) for j in range(n)] for i in range(n)],
            dtype=object,
        )

    @cached_property
    def gamma(self):
        """Gamma^a_{bc} of the Levi-Civita connection."""
        n, coords, g = self.n, self.coords, self.g
        dg = np.empty((n, n, n), dtype=object)  # dg[i,j,m] = d_m g_ij
        for i in range(n):
            for j in range(n):
                for m in range(n):
                    dg[i, j, m] = E.differentiate(g[i, j], coords[m])
        gamma = np.empty((n, n, n), dtype=object)
        half = E.Const(Fraction(1, 2))
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    terms = [
                        E.mul(
                            self.ginv[a, d],
                            E.sub(E.add(dg[d, b, c], dg[d, c, b]), dg[b, c, d]),
                        )
                        for d in range(n)
                    ]
                    gamma[a, b, c] = E.mul(half, E.nsum(terms))
        return gamma

    @cached_property
    def riemann(self):
        """R_{abcd}, all indices lowered, in the Ricci-identity convention."""
        n, coords, gamma = self.n, self.coords, self.gamma
        up = np.empty((n, n, n, n), dtype=object)  # R_{abc}^d
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    for d in range(n):
                        t1 = E.differentiate(gamma[d, c, a], coords[b])
                        t2 = E.differentiate(gamma[d, c, b], coords[a])
                        quad = [
                            E.sub(
                                E.mul(gamma[e, c, a], gamma[d, e, b]),
                                E.mul(gamma[e, c, b], gamma[d, e, a]),
                            )
                            for e in range(n)
                        ]
                        up[a, b, c, d] = E.add(E.sub(t1, t2), E.nsum(quad))
        low = np.empty((n, n, n, n), dtype=object)
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    for d in range(n):
                        low[a, b, c, d] = E.nsum(
                            [E.mul(up[a, b, c, e], self.g[e, d]) for e in range(n)]
                        )
        return low

    def covd(self, arr, variance: str):
        """Covariant derivative; the new (covariant) index is appended last."""
        n, coords, gamma = self.n, self.coords, self.gamma
        out = np.empty(arr.shape + (n,), dtype=object)
        for idx in itertools.product(range(n), repeat=arr.ndim):
            for m in range(n):
                terms = [E.differentiate(arr[idx], coords[m])]
                for pos, flag in enumerate(variance):
                    a_p = idx[pos]
                    for e in range(n):
                        swapped = idx[:pos] + (e,) + idx[pos + 1:]
                        if flag == "u":
                            terms.append(E.mul(gamma[a_p, e, m], arr[swapped]))
                        else:
                            terms.append(
                                E.neg(E.mul(gamma[e, a_p, m], arr[swapped]))
                            )
                out[idx + (m,)] = E.nsum(terms)
        return out

    def riemann_derivatives(self, order: int):
        """[R, DR, DDR, ...] up to ``order`` covariant derivatives."""
        if self._riemann_chain is None:
            self._riemann_chain = [self.riemann]
        chain = self._riemann_chain
        while len(chain) <= order:
            k = len(chain) - 1
            chain.append(self.covd(chain[-1], "l" * (4 + k)))
        return chain[: order + 1]

    @cached_property
    def curvature_scalar(self):
        """Gaussian curvature of a surface as an expression.

        Extracted from the canonical form R_{abcd} = c (g_ac g_bd - g_ad g_bc),
        i.e. c = R_{1212} / det g; calibrated so the unit sphere gives +1.
        """
        if self.n != 2:
            raise WrongDimension("curvature scalar only defined for surfaces")
        return E.div(self.riemann[0, 1, 0, 1], self.det)

    @cached_property
    def curvature_scalar_derivatives(self):
        """(c, c_{;a}, c_{;ab}, c_{;abc}) symbolically, for surface analysis."""
        c = self.curvature_scalar
        dc = np.array(
            [E.differentiate(c, v) for v in self.coords], dtype=object
        )
        c2 = self.covd(dc, "l")
        c3 = self.covd(c2, "ll")
        return c, dc, c2, c3


def _minor(arr, row, col):
    n = arr.shape[0]
    keep_r = [i for i in range(n) if i != row]
    keep_c = [j for j in range(n) if j != col]
    out = np.empty((n - 1, n - 1), dtype=object)
    for i, r in enumerate(keep_r):
        for j, c in enumerate(keep_c):
            out[i, j] = arr[r, c]
    return out


def _determinant(arr, n):
    if n == 0:
        return E.ONE
    if n == 1:
        return arr[0, 0]
    if n == 2:
        return E.sub(
            E.mul(arr[0, 0], arr[1, 1]), E.mul(arr[0, 1], arr[1, 0])
        )
    terms = []
    for j in range(n):
        cof = E.mul(arr[0, j], _determinant(_minor(arr, 0, j), n - 1))
        terms.append(E.neg(cof) if j % 2 else cof)
    return E.nsum(terms)


# ---------------------------------------------------------------------------
# Evaluation of symbolic arrays


def evaluate_array(arr, point, chart, mode="float"):
    """Evaluate an object array of Expr entrywise at a point."""
    chart = tuple(chart)
    if mode == "float":
        out = np.empty(arr.shape, dtype=np.float64)
        pt = [float(x) for x in point]
        for idx in np.ndindex(arr.shape):
            out[idx] = E.evaluate(arr[idx], pt, chart, "float")
        return out
    out = np.empty(arr.shape, dtype=object)
    for idx in np.ndindex(arr.shape):
        out[idx] = E.evaluate(arr[idx], point, chart, "exact")
    return out


# ---------------------------------------------------------------------------
# Public pointwise operations


def inverse_metric(m: MetricSpec, x, mode="float", rtol=DEFAULT_RTOL) -> TensorValue:
    """Inverse metric at ``x`` (two contravariant indices)."""
    gx = m.evaluate_at(x, mode)
    _require_invertible(gx, rtol, x)
    if mode == "exact" and all(
        isinstance(v, Fraction) for v in gx.flat
    ):
        inv = invert_matrix(gx)
    else:
        inv = evaluate_array(m.geometry.ginv, x, m.coords, mode)
    return TensorValue(inv, "uu", tuple(x))


def christoffel(m: MetricSpec, x, mode="float", rtol=DEFAULT_RTOL) -> ChristoffelValue:
    """Levi-Civita connection coefficients at ``x``.

    Metricity (the covariant derivative of g built from the result
    vanishing at x) is verified before returning.
    """
    gx = m.evaluate_at(x, mode)
    _require_invertible(gx, rtol, x)
    gam = evaluate_array(m.geometry.gamma, x, m.coords, mode)
    _check_metricity(m, x, gx, gam, mode, rtol)
    return ChristoffelValue(gam, tuple(x))


def _check_metricity(m, x, gx, gam, mode, rtol):
    n = m.dim
    geo = m.geometry
    dg = np.empty((n, n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            for mm in range(n):
                dg[i, j, mm] = E.differentiate(geo.g[i, j], m.coords[mm])
    dgx = evaluate_array(dg, x, m.coords, mode)
    scale = max(1.0, max_abs(gx)) * max(1.0, max_abs(gam))
    worst = 0.0
    for a, b, mm in itertools.product(range(n), repeat=3):
        resid = dgx[a, b, mm] - sum(
            gam[e, a, mm] * gx[e, b] + gam[e, b, mm] * gx[a, e] for e in range(n)
        )
        worst = max(worst, abs(float(resid)))
    if worst > 1e-8 * scale:
        raise SingularMetric(
            f"metricity check failed at {_fmt_point(x)}: residual {worst}"
        )


def riemann(
    m: MetricSpec,
    x,
    derivative_order: int = 0,
    mode: str = "float",
    cap: Optional[int] = None,
    rtol: float = DEFAULT_RTOL,
):
    """Lowered curvature tensor and its covariant derivatives at ``x``.

    Returns ``[R, R;s, R;st, ...]`` up to the requested order.
    """
    if cap is None:
        cap = default_order_cap(m.dim)
    if derivative_order > cap:
        raise OrderCapExceeded(
            f"derivative order {derivative_order} exceeds cap {cap}"
        )
    gx = m.evaluate_at(x, mode)
    _require_invertible(gx, rtol, x)
    chain = m.geometry.riemann_derivatives(derivative_order)
    out = []
    for k, arr in enumerate(chain):
        out.append(
            TensorValue(
                evaluate_array(arr, x, m.coords, mode), "l" * (4 + k), tuple(x)
            )
        )
    return out


def star(B: TensorValue, T: TensorValue, ginv: TensorValue) -> TensorValue:
    """The curvature-action derivation B*T.

    B is a covariant 4-tensor with curvature symmetries; T is covariant of
    rank >= 2; indices are raised with the supplied inverse metric.  The
    result has the four B slots first and T's trailing indices after.
    """
    n = B.dim
    if B.rank != 4 or B.variance != "llll":
        raise ShapeMismatch("B must be a covariant 4-tensor")
    if T.rank < 2 or "u" in T.variance:
        raise ShapeMismatch("T must be covariant with rank >= 2")
    if T.dim != n or ginv.entries.shape != (n, n):
        raise ShapeMismatch("dimension mismatch between B, T and metric")
    # T with its first index raised: Tr[s, w, rest]
    tr = np.empty(T.entries.shape, dtype=object)
    for idx in np.ndindex(T.entries.shape):
        s = idx[0]
        tr[idx] = sum(ginv[s, t] * T.entries[(t,) + idx[1:]] for t in range(n))
    rest_shape = T.entries.shape[2:]
    out = np.empty((n, n, n, n) + rest_shape, dtype=object)
    for a, b, c, d in itertools.product(range(n), repeat=4):
        for rest in np.ndindex(rest_shape) if rest_shape else [()]:
            total = 0
            for s in range(n):
                total += B[s, b, c, d] * tr[(s, a) + rest]
                total += B[a, s, c, d] * tr[(s, b) + rest]
                total += B[a, b, s, d] * tr[(s, c) + rest]
                total += B[a, b, c, s] * tr[(s, d) + rest]
            out[(a, b, c, d) + rest] = total
    return TensorValue(out, "l" * out.ndim, B.point)


def dot(R: TensorValue, T: TensorValue) -> TensorValue:
    """Contract the rightmost (contravariant) index of R with the leftmost
    (covariant) index of T."""
    if R.rank < 1 or T.rank < 1:
        raise ShapeMismatch("dot needs nonempty tensors")
    if R.variance[-1] != "u" or T.variance[0] != "l":
        raise ShapeMismatch(
            "dot contracts a contravariant last index against a covariant "
            f"first index, got {R.variance!r} . {T.variance!r}"
        )
    n = R.dim
    if T.dim != n:
        raise ShapeMismatch("dimension mismatch")
    out_shape = R.entries.shape[:-1] + T.entries.shape[1:]
    out = np.empty(out_shape, dtype=object)
    left_shape = R.entries.shape[:-1]
    right_shape = T.entries.shape[1:]
    for li in np.ndindex(left_shape) if left_shape else [()]:
        for ri in np.ndindex(right_shape) if right_shape else [()]:
            out[li + ri] = sum(
                R.entries[li + (s,)] * T.entries[(s,) + ri] for s in range(n)
            )
    return TensorValue(out, R.variance[:-1] + T.variance[1:], R.point)


def raise_index(T: TensorValue, pos: int, ginv: TensorValue) -> TensorValue:
    """Raise the covariant index at ``pos`` with the inverse metric."""
    if T.variance[pos] != "l":
        raise ShapeMismatch(f"index {pos} is already contravariant")
    n = T.dim
    out = np.empty(T.entries.shape, dtype=object)
    for idx in np.ndindex(T.entries.shape):
        a = idx[pos]
        out[idx] = sum(
            ginv[a, e] * T.entries[idx[:pos] + (e,) + idx[pos + 1:]]
            for e in range(n)
        )
    variance = T.variance[:pos] + "u" + T.variance[pos + 1:]
    return TensorValue(out, variance, T.point)


def gaussian_curvature(m: MetricSpec, x, mode="float", rtol=DEFAULT_RTOL) -> Scalar:
    """Gaussian curvature of a surface at ``x`` (canonical-form extraction,
    unit sphere calibrated to +1)."""
    if m.dim != 2:
        raise WrongDimension("Gaussian curvature requires a 2-dimensional metric")
    gx = m.evaluate_at(x, mode)
    _require_invertible(gx, rtol, x)
    return E.evaluate(m.geometry.curvature_scalar, x, m.coords, mode)
