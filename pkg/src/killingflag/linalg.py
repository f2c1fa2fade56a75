"""Rank and nullspace decisions, the load-bearing numerics of the package.

Two documented paths:

* exact — matrices whose entries are all rationals are cleared to integers
  row by row and reduced with fraction-free (Bareiss) elimination; kernel
  bases come from a rational RREF, so ranks are exact, not thresholded.
* float — anything containing a float goes through an SVD; the rank counts
  singular values above ``rtol`` times the largest one.

Everything downstream (flag ranks, closure residuals, signatures) funnels
through here so that there is a single tolerance knob.
"""

from __future__ import annotations

from fractions import Fraction
from math import lcm

import numpy as np

DEFAULT_RTOL = 1e-9


def is_exact_matrix(rows) -> bool:
    return all(
        isinstance(x, (Fraction, int)) and not isinstance(x, bool)
        for row in rows
        for x in row
    )


def _clear_denominators(rows):
    out = []
    for row in rows:
        fr = [Fraction(x) for x in row]
        mult = lcm(*(f.denominator for f in fr)) if fr else 1
        out.append([int(f * mult) for f in fr])
    return out


def bareiss_rank(rows) -> int:
    """Rank of a rational matrix by fraction-free Gaussian elimination."""
    if not rows or not rows[0]:
        return 0
    m = _clear_denominators(rows)
    n_rows, n_cols = len(m), len(m[0])
    prev = 1
    r = 0
    for c in range(n_cols):
        piv = None
        for i in range(r, n_rows):
            if m[i][c] != 0:
                piv = i
                break
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        for i in range(r + 1, n_rows):
            for j in range(c + 1, n_cols):
                m[i][j] = (m[i][j] * m[r][c] - m[i][c] * m[r][j]) // prev
            m[i][c] = 0
        prev = m[r][c]
        r += 1
        if r == n_rows:
            break
    return r


def exact_rref(rows):
    """Reduced row echelon form over Fractions: (rref rows, pivot columns)."""
    m = [[Fraction(x) for x in row] for row in rows]
    if not m or not m[0]:
        return m, []
    n_rows, n_cols = len(m), len(m[0])
    pivots = []
    r = 0
    for c in range(n_cols):
        piv = None
        for i in range(r, n_rows):
            if m[i][c] != 0:
                piv = i
                break
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = 1 / m[r][c]
        m[r] = [x * inv for x in m[r]]
        for i in range(n_rows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == n_rows:
            break
    return m, pivots


def exact_nullspace(rows, n_cols=None):
    """Rational kernel basis of the row system; vectors are Fraction arrays."""
    if n_cols is None:
        n_cols = len(rows[0]) if rows else 0
    if not rows:
        rref, pivots = [], []
    else:
        rref, pivots = exact_rref(rows)
    free = [c for c in range(n_cols) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * n_cols
        v[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            v[pc] = -rref[i][fc]
        basis.append(np.array(v, dtype=object))
    return basis


def float_rank_nullspace(a, rtol=DEFAULT_RTOL, floor=0.0):
    """SVD rank and kernel basis.

    A singular value counts toward the rank when it exceeds both
    ``rtol * sigma_max`` and the absolute ``floor``.  The floor is what
    distinguishes an analytically-zero matrix (entries are rounding noise)
    from a genuinely tiny-rank one; callers anchor it to the scale of the
    data the matrix was built from.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        n_cols = a.shape[1] if a.ndim == 2 else 0
        return 0, [np.eye(n_cols)[i] for i in range(n_cols)]
    _, s, vh = np.linalg.svd(a)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        thresh = max(rtol * s[0], floor)
        rank = int(np.sum(s > thresh))
    basis = [vh[i] for i in range(rank, a.shape[1])]
    return rank, basis


def rank_and_nullspace(rows, rtol=DEFAULT_RTOL, n_cols=None, floor=0.0):
    """Rank and kernel basis, dispatching on entry exactness.

    ``rows`` is a sequence of row sequences (possibly empty).  Returns
    ``(rank, basis)`` where basis vectors are Fraction object arrays on the
    exact path and unit float vectors on the float path.  ``floor`` is the
    absolute singular-value cutoff for the float path; exact entries need
    no cutoff.
    """
    rows = [list(r) for r in rows]
    if n_cols is None:
        n_cols = len(rows[0]) if rows else 0
    if not rows or n_cols == 0:
        return 0, [_unit_exact(n_cols, i) for i in range(n_cols)]
    if is_exact_matrix(rows):
        rank = bareiss_rank(rows)
        basis = exact_nullspace(rows, n_cols)
        return rank, basis
    a = np.array([[float(x) for x in row] for row in rows])
    return float_rank_nullspace(a, rtol, floor)


def _unit_exact(n, i):
    v = np.array([Fraction(0)] * n, dtype=object)
    v[i] = Fraction(1)
    return v


def matrix_rank(rows, rtol=DEFAULT_RTOL) -> int:
    rank, _ = rank_and_nullspace(rows, rtol)
    return rank


def span_residual(basis, v, rtol=DEFAULT_RTOL):
    """Sup-norm of the component of ``v`` outside span(basis).

    Exact inputs give an exact residual; float inputs a least-squares one.
    """
    _, resid = solve_in_span(basis, v, rtol)
    return resid


def _exact_lstsq(basis, v):
    """Exact normal-equation solve for projection coefficients."""
    n = len(basis)
    gram = [
        [sum(Fraction(basis[i][k]) * Fraction(basis[j][k]) for k in range(len(v)))
         for j in range(n)]
        for i in range(n)
    ]
    rhs = [sum(Fraction(basis[i][k]) * Fraction(v[k]) for k in range(len(v)))
           for i in range(n)]
    aug = [gram[i] + [rhs[i]] for i in range(n)]
    rref, pivots = exact_rref(aug)
    coeffs = [Fraction(0)] * n
    for i, pc in enumerate(pivots):
        if pc < n:
            coeffs[pc] = rref[i][n]
    return coeffs


def solve_in_span(basis, v, rtol=DEFAULT_RTOL):
    """Coefficients expressing ``v`` in ``basis`` plus the sup-norm residual."""
    if len(basis) == 0:
        resid = max((abs(x) for x in v), default=0)
        return [], resid
    exact = is_exact_matrix([list(b) for b in basis]) and is_exact_matrix([list(v)])
    if exact:
        coeffs = _exact_lstsq(basis, v)
        resid = max(
            abs(v[j] - sum(coeffs[i] * basis[i][j] for i in range(len(basis))))
            for j in range(len(v))
        )
        return coeffs, resid
    b = np.array([[float(x) for x in bb] for bb in basis]).T
    vv = np.array([float(x) for x in v])
    coeffs, *_ = np.linalg.lstsq(b, vv, rcond=None)
    resid = float(np.max(np.abs(vv - b @ coeffs)))
    return list(coeffs), resid


def invert_matrix(a):
    """Inverse of a small square matrix; exact for rational entries."""
    rows = [list(r) for r in a]
    n = len(rows)
    if is_exact_matrix(rows):
        aug = [[Fraction(x) for x in rows[i]] + _unit_row(n, i) for i in range(n)]
        rref, pivots = exact_rref(aug)
        if pivots != list(range(n)):
            from .errors import SingularMetric

            raise SingularMetric("matrix is not invertible")
        inv = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                inv[i, j] = rref[i][n + j]
        return inv
    return np.linalg.inv(np.array([[float(x) for x in r] for r in rows]))


def _unit_row(n, i):
    row = [Fraction(0)] * n
    row[i] = Fraction(1)
    return row


def eigh_signature(sym, rtol=DEFAULT_RTOL, floor=0.0):
    """Signature (n_plus, n_minus, n_zero) of a symmetric matrix.

    Eigenvalues within ``max(rtol * max|eig|, floor)`` of zero count as
    zero; the floor lets callers anchor the decision to the scale of the
    data rather than to rounding noise.
    """
    a = np.array([[float(x) for x in row] for row in sym])
    if a.size == 0:
        return (0, 0, 0)
    w = np.linalg.eigvalsh((a + a.T) / 2.0)
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    thresh = max(rtol * scale, floor)
    if thresh == 0.0:
        thresh = 0.0 if scale == 0.0 else rtol * scale
    n_pos = int(np.sum(w > thresh))
    n_neg = int(np.sum(w < -thresh))
    return (n_pos, n_neg, len(w) - n_pos - n_neg)
