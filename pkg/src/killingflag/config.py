"""Analysis configuration shared by the pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Union

from .tensor import default_order_cap


def default_jet_order(n: int) -> int:
    """Default Taylor order for the jet oracle: comfortably beyond the
    flag's stabilization depth at desk-scale dimensions."""
    return n * (n + 1) // 2 + 3


@dataclass(frozen=True)
class AnalysisConfig:
    """Knobs for one analysis run.

    mode: 'exact' computes in rationals where possible, 'float' throughout.
    rank_rtol: relative tolerance for all rank and residual decisions.
    max_derivative_order: cap on curvature derivative order (None: dim-based
        default n(n+1)/2 + 2).
    jet_order: Taylor order of the independent oracle (None: n(n+1)/2 + 3).
    probe_samples / probe_radius: regularity probing around the base point;
        0 samples disables probing.
    """

    mode: str = "float"
    rank_rtol: float = 1e-9
    max_derivative_order: Optional[int] = None
    jet_order: Optional[int] = None
    probe_samples: int = 4
    probe_radius: Union[Fraction, float] = Fraction(1, 100)

    def __post_init__(self):
        if self.mode not in ("exact", "float"):
            raise ValueError(f"mode must be 'exact' or 'float', got {self.mode!r}")
        if self.rank_rtol <= 0:
            raise ValueError("rank_rtol must be positive")
        if self.probe_samples < 0:
            raise ValueError("probe_samples must be nonnegative")
        if self.probe_radius <= 0:
            raise ValueError("probe_radius must be positive")
        for name in ("max_derivative_order", "jet_order"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be at least 1")

    def order_cap(self, n: int) -> int:
        if self.max_derivative_order is not None:
            return self.max_derivative_order
        return default_order_cap(n)

    def oracle_order(self, n: int) -> int:
        if self.jet_order is not None:
            return self.jet_order
        return default_jet_order(n)

    def with_(self, **kw) -> "AnalysisConfig":
        return replace(self, **kw)
