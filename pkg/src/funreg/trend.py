"""Long-term trend term: a natural cubic spline in an observation index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import Interval, SplineBasis, eval_basis_extrapolated, make_basis
from .errors import RankDeficientError


@dataclass(frozen=True)
class TrendSpec:
    """Natural cubic spline over the observation index.

    Either ``knot_spacing`` (index units, e.g. 90 for one knot per three
    months of daily data) or explicit interior ``knots`` is used.  ``kind``
    "none" drops the term.
    """

    kind: str = "natural_cubic"
    knot_spacing: float | None = 90.0
    knots: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("natural_cubic", "none"):
            raise ValueError(f"unknown trend kind {self.kind!r}")
        if self.kind == "natural_cubic" and self.knots is None:
            if self.knot_spacing is None or not self.knot_spacing > 0:
                raise ValueError("trend needs a positive knot_spacing or explicit knots")

    def basis(self, index) -> SplineBasis | None:
        """Trend basis spanning the range of ``index``."""
        if self.kind == "none":
            return None
        index = np.asarray(index, dtype=float)
        lo, hi = float(index.min()), float(index.max())
        if not lo < hi:
            raise RankDeficientError(["trend"], "index takes a single value")
        if self.knots is not None:
            inner = [k for k in self.knots if lo < k < hi]
        else:
            pieces = max(1, int(round((hi - lo) / self.knot_spacing)))
            inner = lo + np.arange(1, pieces) * (hi - lo) / pieces
        return make_basis("natural_cubic", 4, inner, Interval(lo, hi))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "knot_spacing": self.knot_spacing,
            "knots": None if self.knots is None else list(self.knots),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrendSpec":
        knots = d.get("knots")
        return cls(d.get("kind", "natural_cubic"), d.get("knot_spacing"), None if knots is None else tuple(knots))


def trend_design(basis: SplineBasis | None, index) -> np.ndarray:
    """Trend columns at ``index``, without the constant direction.

    The cardinal natural basis has only its first function nonzero at the
    left end, so dropping that column removes the constant (which the model
    intercept carries) and pins the trend to zero at the first index.
    Indices outside the basis range are extrapolated linearly.
    """
    index = np.asarray(index, dtype=float)
    if basis is None:
        return np.zeros((index.size, 0))
    return eval_basis_extrapolated(basis, index)[:, 1:]
