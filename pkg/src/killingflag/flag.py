"""The Killing bundle W = T*M + Lambda^2 T*M and its derived flag.

A local Killing field K corresponds to the parallel section
X = (K, L) with L_ab = K_{a;b} for the connection

    nabla_i X = (K_{a;i} - L_{ai}) dx^a
              + (L_{ab;i} - R_{abi}^c K_c) dx^a ^ dx^b .

Its curvature acts on fibre elements as

    F(i,j)(X) = (R_{ijkl;s} K^s + (R * L)_{ijkl}) dx^k ^ dx^l ,

a matrix from the fibre W_x (dimension N = n(n+1)/2) to 2-form-valued
2-forms.  The number of independent local Killing fields about x equals
the dimension of the terminal fibre of the derived flag of ker F.

Pointwise realization: a section is parallel iff F(X) and all its total
covariant derivatives vanish, and for parallel X those derivatives reduce
to (nabla^k F)(X).  So the k-th flag subspace is computed as the kernel of
the stacked matrices [F; DF; ...; D^k F] at x, where each D differentiates
the coefficient tensors with the Levi-Civita connection on form indices
and the W connection above on the fibre slot:

    K-coeff'  =  D_m K-coeff + (1/2) L-coeff^{uv} R_{uvm}^c
    L-coeff'  =  D_m L-coeff + K-coeff^u d^v_m - K-coeff^v d^u_m

This coincides with the flag wherever the ranks are locally constant,
which is exactly the regularity hypothesis; regularity is monitored by
recomputing ranks at probe points near x.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import List, Optional

import numpy as np

from . import expr as E
from .config import AnalysisConfig
from .errors import (
    OrderCapExceeded,
    RegularityWarning,
    ShapeMismatch,
    SignatureMismatch,
    SingularMetric,
)
from .linalg import rank_and_nullspace
from .tensor import MetricSpec, TensorValue, evaluate_array, max_abs, _obj_zeros

_PROBE_SEED = 20240917


def pair_list(n: int):
    """Index pairs (a, b) with a < b, lexicographic: the Lambda^2 basis order."""
    return [(a, b) for a in range(n) for b in range(a + 1, n)]


def fibre_dim(n: int) -> int:
    return n * (n + 1) // 2


# ---------------------------------------------------------------------------
# Fibre elements


@dataclass
class WElement:
    """A vector in the fibre W_x: a covector K and a 2-form L.

    L is stored as the full antisymmetric matrix; the coordinate vector
    exposes K_1..K_n followed by L_{ab} for a < b in lexicographic order.
    """

    point: tuple
    k: np.ndarray
    l: np.ndarray

    @property
    def n(self):
        return len(self.k)

    def vec(self) -> np.ndarray:
        parts = list(self.k) + [self.l[a, b] for a, b in pair_list(self.n)]
        return np.array(parts, dtype=object)

    @classmethod
    def from_vec(cls, point, v, n):
        v = list(v)
        if len(v) != fibre_dim(n):
            raise ShapeMismatch(
                f"expected a vector of length {fibre_dim(n)}, got {len(v)}"
            )
        k = np.array(v[:n], dtype=object)
        l = _antisym_from_pairs(v[n:], n)
        return cls(tuple(point), k, l)

    def max_abs(self) -> float:
        return max(
            max((abs(float(x)) for x in self.k), default=0.0),
            max((abs(float(x)) for x in self.l.flat), default=0.0),
        )


def _antisym_from_pairs(values, n):
    l = np.zeros((n, n), dtype=object)
    l[...] = Fraction(0)
    for (a, b), v in zip(pair_list(n), values):
        l[a, b] = v
        l[b, a] = -v
    return l


@dataclass
class WJet:
    """1-jet of a W-valued section at a point.

    dk[a, i] = d_i K_a and dl[a, b, i] = d_i L_ab are plain partial
    derivatives; the connection supplies the Christoffel corrections.
    """

    point: tuple
    k: np.ndarray
    l: np.ndarray
    dk: np.ndarray
    dl: np.ndarray


# ---------------------------------------------------------------------------
# Symbolic operator levels, cached per metric


def _slot_index(slot, s, fixed):
    idx = list(fixed)
    idx.insert(slot, s)
    return tuple(idx)


class _FlagLevels:
    """Coefficient tensors of F and its covariant derivatives.

    Level p stores K-coefficients [c, i, j, k, l, m_1..m_p] and
    L-coefficients [u, v, i, j, k, l, m_1..m_p] (fibre slots first), so
    that the operator applied to X = (K, L) reads

        M_p(X) = K-coeff[a, ...] K_a + 1/2 L-coeff[u, v, ...] L_uv .
    """

    def __init__(self, metric: MetricSpec):
        self.metric = metric
        self.geo = metric.geometry
        n = metric.dim
        geo = self.geo
        r_d1 = geo.riemann_derivatives(1)[1]
        phik0 = np.empty((n,) * 5, dtype=object)
        for i, j, k, l, a in itertools.product(range(n), repeat=5):
            phik0[a, i, j, k, l] = E.nsum(
                [E.mul(r_d1[i, j, k, l, s], geo.ginv[s, a]) for s in range(n)]
            )
        phil0 = _obj_zeros((n,) * 6)
        # coefficient of L_{t,w} in (R*L)_{ijkl}, slot by slot
        for i, j, k, l in itertools.product(range(n), repeat=4):
            slots = (
                ((j, k, l), i, 0),
                ((i, k, l), j, 1),
                ((i, j, l), k, 2),
                ((i, j, k), l, 3),
            )
            for fixed, w, slot in slots:
                for t in range(n):
                    coeff = E.nsum(
                        [
                            E.mul(
                                geo.riemann[_slot_index(slot, s, fixed)],
                                geo.ginv[s, t],
                            )
                            for s in range(n)
                        ]
                    )
                    phil0[(t, w, i, j, k, l)] = E.add(
                        phil0[(t, w, i, j, k, l)], coeff
                    )
                    phil0[(w, t, i, j, k, l)] = E.sub(
                        phil0[(w, t, i, j, k, l)], coeff
                    )
        self._phik = [phik0]
        self._phil = [phil0]
        # R_{uvm}^c, used by the K-coefficient recursion
        self._r_up = np.empty((n,) * 4, dtype=object)
        for u, v, mm, c in itertools.product(range(n), repeat=4):
            self._r_up[u, v, mm, c] = E.nsum(
                [E.mul(geo.riemann[u, v, mm, e], geo.ginv[e, c]) for e in range(n)]
            )

    def ensure(self, level: int):
        n = self.metric.dim
        geo = self.geo
        while len(self._phik) <= level:
            p = len(self._phik) - 1
            phik, phil = self._phik[-1], self._phil[-1]
            dk = geo.covd(phik, "u" + "l" * (4 + p))
            dl = geo.covd(phil, "uu" + "l" * (4 + p))
            new_k = np.empty(dk.shape, dtype=object)
            for idx in itertools.product(range(n), repeat=dk.ndim):
                c = idx[0]
                mid = idx[1:-1]
                mm = idx[-1]
                curv = E.nsum(
                    [
                        E.mul(phil[(u, v) + mid[: 4 + p]], self._r_up[u, v, mm, c])
                        for u in range(n)
                        for v in range(n)
                    ]
                )
                new_k[idx] = E.add(
                    dk[idx], E.mul(E.Const(Fraction(1, 2)), curv)
                )
            new_l = np.empty(dl.shape, dtype=object)
            for idx in itertools.product(range(n), repeat=dl.ndim):
                u, v = idx[0], idx[1]
                mid = idx[2:-1]
                mm = idx[-1]
                term = dl[idx]
                if v == mm:
                    term = E.add(term, phik[(u,) + mid[: 4 + p]])
                if u == mm:
                    term = E.sub(term, phik[(v,) + mid[: 4 + p]])
                new_l[idx] = term
            self._phik.append(new_k)
            self._phil.append(new_l)

    def rows_at(self, level: int, x, mode: str):
        """Numeric rows of the level-``level`` block at ``x``."""
        self.ensure(level)
        n = self.metric.dim
        coords = self.metric.coords
        phik = evaluate_array(self._phik[level], x, coords, mode)
        phil = evaluate_array(self._phil[level], x, coords, mode)
        pairs = pair_list(n)
        rows = []
        for i, j in pairs:
            for k, l in pairs:
                for ms in itertools.product(range(n), repeat=level):
                    row = [phik[(a, i, j, k, l) + ms] for a in range(n)]
                    row += [phil[(u, v, i, j, k, l) + ms] for u, v in pairs]
                    rows.append(row)
        return rows


@lru_cache(maxsize=None)
def _levels(metric: MetricSpec) -> _FlagLevels:
    return _FlagLevels(metric)


def rank_floor(m: MetricSpec, x, mode: str, rtol: float) -> float:
    """Absolute singular-value floor for rank decisions at ``x``.

    Anchored to the metric scale so that analytically-zero curvature
    blocks (rounding noise around 1e-16) are recognized as zero; entries
    that are genuinely tiny relative to the geometry are below the floor
    on purpose and exact mode exists for such cases.
    """
    gx = m.evaluate_at(x, mode)
    ginvx = evaluate_array(m.geometry.ginv, x, m.coords, mode)
    return rtol * max(1.0, max_abs(gx), max_abs(ginvx))


# ---------------------------------------------------------------------------
# Curvature operator


@dataclass
class CurvatureOperator:
    """F as a matrix from W_x to 2-form (x) 2-form components.

    Rows are indexed by pairs ((i<j), (k<l)); the K block holds the
    R_{ijkl;s} K^s coefficients (zero iff the curvature is parallel at x)
    and the L block the (R * L)_{ijkl} coefficients (identically zero for
    surfaces).
    """

    matrix: np.ndarray
    k_block: np.ndarray
    l_block: np.ndarray
    row_labels: list
    point: tuple
    kernel_dim: int
    kernel_basis: list


def curvature_operator(
    m: MetricSpec, x, mode: str = "float", rtol: float = 1e-9
) -> CurvatureOperator:
    """The curvature of the W connection at ``x``; its kernel starts the flag."""
    m.validate_at(x, mode, rtol)
    n = m.dim
    rows = _levels(m).rows_at(0, x, mode)
    pairs = pair_list(n)
    labels = [(ij, kl) for ij in pairs for kl in pairs]
    mat = np.array(rows, dtype=object)
    rank, basis = rank_and_nullspace(
        rows, rtol, n_cols=fibre_dim(n), floor=rank_floor(m, x, mode, rtol)
    )
    return CurvatureOperator(
        matrix=mat,
        k_block=mat[:, :n],
        l_block=mat[:, n:],
        row_labels=labels,
        point=tuple(x),
        kernel_dim=fibre_dim(n) - rank,
        kernel_basis=basis,
    )


# ---------------------------------------------------------------------------
# Derived flag


@dataclass
class RegularityWitness:
    """Rank sequences recomputed at probe points around the base point."""

    base_ranks: tuple
    probe_points: list
    probe_ranks: list
    skipped: list
    agree: bool


@dataclass
class FlagResult:
    """Ranks and kernel bases of the derived flag, ending in the terminal
    fibre whose dimension counts independent local Killing fields."""

    point: tuple
    ranks: List[int]
    bases: List[list]
    terminal_rank: int
    stabilized_at: int
    mode: str
    regularity_witness: Optional[RegularityWitness] = None

    @property
    def terminal_basis(self):
        return self.bases[-1]

    def terminal_elements(self, n):
        return [WElement.from_vec(self.point, v, n) for v in self.terminal_basis]


def derived_flag(
    m: MetricSpec, x, config: AnalysisConfig = AnalysisConfig(), _probing=False
) -> FlagResult:
    """Compute the derived flag of W at ``x``.

    The rank sequence is nonincreasing by construction (each level stacks
    more rows onto the same kernel computation).  Stabilization: two
    consecutive equal ranks, or structurally when the kernel is all of W
    at level 0 or has shrunk to zero.  No stabilization within the
    derivative-order cap raises OrderCapExceeded, never silently.
    """
    x = tuple(x)
    mode = config.mode
    rtol = config.rank_rtol
    m.validate_at(x, mode, rtol)
    n = m.dim
    cap = config.order_cap(n)
    levels = _levels(m)
    big_n = fibre_dim(n)

    rows: list = []
    ranks: List[int] = []
    bases: List[list] = []
    level = 0
    stabilized_at = None
    while True:
        if level + 1 > cap:
            raise OrderCapExceeded(
                f"flag did not stabilize within derivative order cap {cap} "
                f"(ranks so far: {ranks})"
            )
        rows.extend(levels.rows_at(level, x, mode))
        rank, basis = rank_and_nullspace(rows, rtol, n_cols=big_n)
        r = big_n - rank
        ranks.append(r)
        bases.append(basis)
        if level == 0 and r == big_n:
            # F vanishes: the kernel is all of W and the flag is constant
            stabilized_at = 0
            break
        if r == 0:
            stabilized_at = level
            break
        if level > 0 and ranks[-2] == r:
            stabilized_at = level - 1
            break
        level += 1

    result = FlagResult(
        point=x,
        ranks=ranks,
        bases=bases,
        terminal_rank=ranks[-1],
        stabilized_at=stabilized_at,
        mode=mode,
    )
    if not _probing and config.probe_samples > 0:
        witness = regularity_probe(
            m, x, config.probe_samples, config.probe_radius, config
        )
        result.regularity_witness = witness
        if not witness.agree:
            warnings.warn(
                RegularityWarning(
                    f"flag ranks at probe points near {x} disagree with the "
                    f"base sequence {tuple(ranks)}: {witness.probe_ranks}"
                )
            )
    return result


def regularity_probe(
    m: MetricSpec,
    x,
    samples: int,
    radius,
    config: AnalysisConfig = AnalysisConfig(),
) -> RegularityWitness:
    """Recompute the flag at points perturbed within ``radius`` of ``x``.

    Agreement of all rank sequences is heuristic evidence that the
    connection is regular at x; a singular metric at a probe point skips
    that probe and records it.
    """
    x = tuple(x)
    base = derived_flag(m, x, config.with_(probe_samples=0), _probing=True)
    rng = np.random.default_rng(_PROBE_SEED)
    grain = 10**6
    probe_points = []
    probe_ranks = []
    skipped = []
    for _ in range(max(samples, 0)):
        offs = [
            Fraction(int(rng.integers(-grain, grain + 1)), grain) for _ in range(m.dim)
        ]
        if config.mode == "exact":
            pt = tuple(
                Fraction(xi) + Fraction(radius) * o for xi, o in zip(x, offs)
            )
        else:
            pt = tuple(float(xi) + float(radius) * float(o) for xi, o in zip(x, offs))
        try:
            res = derived_flag(m, pt, config.with_(probe_samples=0), _probing=True)
        except (SingularMetric, SignatureMismatch) as err:
            skipped.append({"point": pt, "reason": str(err)})
            continue
        probe_points.append(pt)
        probe_ranks.append(tuple(res.ranks))
    agree = all(pr == tuple(base.ranks) for pr in probe_ranks)
    return RegularityWitness(
        base_ranks=tuple(base.ranks),
        probe_points=probe_points,
        probe_ranks=probe_ranks,
        skipped=skipped,
        agree=agree,
    )


# ---------------------------------------------------------------------------
# The connection and the embedding of explicit fields


def connection_apply(m: MetricSpec, jet: WJet, mode: str = "float"):
    """Apply the W connection to a 1-jet: returns [nabla_i X for each i]."""
    n = m.dim
    x = jet.point
    gam = evaluate_array(m.geometry.gamma, x, m.coords, mode)
    riem = evaluate_array(m.geometry.riemann, x, m.coords, mode)
    ginv = evaluate_array(m.geometry.ginv, x, m.coords, mode)
    if jet.k.shape != (n,) or jet.l.shape != (n, n):
        raise ShapeMismatch("jet does not match the metric dimension")
    out = []
    for i in range(n):
        k_part = np.empty(n, dtype=object)
        for a in range(n):
            k_cov = jet.dk[a, i] - sum(gam[e, a, i] * jet.k[e] for e in range(n))
            k_part[a] = k_cov - jet.l[a, i]
        l_part = np.zeros((n, n), dtype=object)
        for a in range(n):
            for b in range(n):
                l_cov = jet.dl[a, b, i] - sum(
                    gam[e, a, i] * jet.l[e, b] + gam[e, b, i] * jet.l[a, e]
                    for e in range(n)
                )
                # R_{abi}^c K_c with the index raised through the metric
                curv = sum(
                    riem[a, b, i, e] * ginv[e, c] * jet.k[c]
                    for e in range(n)
                    for c in range(n)
                )
                l_part[a, b] = l_cov - curv
        out.append(WElement(tuple(x), k_part, l_part))
    return out


def covector_field_jet(m: MetricSpec, k_sources, x, mode: str = "float") -> WJet:
    """1-jet at ``x`` of the W section (K, K_;) of a covector field.

    ``k_sources`` are expression strings or Exprs for the components K_a.
    This is the embedding that sends a Killing field to its parallel
    section; for non-Killing fields it is still a well-defined jet.
    """
    coords = m.coords
    n = m.dim
    ks = [
        E.parse(s, coords) if isinstance(s, str) else s for s in k_sources
    ]
    if len(ks) != n:
        raise ShapeMismatch(f"expected {n} covector components, got {len(ks)}")
    karr = np.array(ks, dtype=object)
    geo = m.geometry
    l_sym = geo.covd(karr, "l")  # K_{a;b}
    dk_sym = np.empty((n, n), dtype=object)
    for a in range(n):
        for i in range(n):
            dk_sym[a, i] = E.differentiate(ks[a], coords[i])
    dl_sym = np.empty((n, n, n), dtype=object)
    for a in range(n):
        for b in range(n):
            for i in range(n):
                dl_sym[a, b, i] = E.differentiate(l_sym[a, b], coords[i])
    return WJet(
        point=tuple(x),
        k=evaluate_array(karr, x, coords, mode),
        l=evaluate_array(l_sym, x, coords, mode),
        dk=evaluate_array(dk_sym, x, coords, mode),
        dl=evaluate_array(dl_sym, x, coords, mode),
    )


def embed_covector_field(m: MetricSpec, k_sources, x, mode: str = "float") -> WElement:
    """Value at ``x`` of the section (K, K_;): the map phi into W."""
    jet = covector_field_jet(m, k_sources, x, mode)
    return WElement(jet.point, jet.k, jet.l)
