"""Spline bases on a closed interval and their exact integral matrices.

Two kinds of basis are supported:

* ``bspline``: clamped B-splines of arbitrary order (order = degree + 1) with
  the boundary knots repeated ``order`` times.
* ``natural_cubic``: cubic splines whose second derivative vanishes at both
  ends of the domain (so they continue linearly beyond it).  The basis used is
  the cardinal one: function ``j`` equals 1 at knot ``j`` and 0 at all other
  knots, so the functions still sum to one.

Gram and penalty matrices are integrated with Gauss-Legendre rules on every
polynomial piece, which is exact up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError

__all__ = [
    "Interval",
    "SplineBasis",
    "make_equispaced_basis",
    "make_basis",
    "eval_basis",
    "eval_basis_extrapolated",
    "gram",
    "penalty",
    "windowed_grams",
]

_KINDS = ("bspline", "natural_cubic")


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]`` with ``lo < hi``."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise DomainError(f"invalid interval [{self.lo}, {self.hi}]: need finite lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def tol(self) -> float:
        return 1e-12 * max(1.0, abs(self.lo), abs(self.hi))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = self.tol()
        return (x >= self.lo - t) & (x <= self.hi + t)


@dataclass(frozen=True)
class SplineBasis:
    """Spline system over ``domain``.

    Parameters
    ----------
    kind : {"bspline", "natural_cubic"}
    order : int
        Polynomial order (degree + 1).  Always 4 for ``natural_cubic``.
    interior_knots : tuple of float
        Strictly ascending, strictly inside the domain.
    domain : Interval
    """

    kind: str
    order: int
    interior_knots: tuple
    domain: Interval

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}; expected one of {_KINDS}")
        order = int(self.order)
        if self.kind == "natural_cubic" and order != 4:
            raise ValueError("natural_cubic bases are cubic (order 4)")
        if order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        knots = tuple(float(k) for k in self.interior_knots)
        arr = np.asarray(knots)
        if arr.size:
            if np.any(np.diff(arr) <= 0):
                raise DomainError("interior knots must be strictly ascending")
            if arr[0] <= self.domain.lo or arr[-1] >= self.domain.hi:
                raise DomainError("interior knots must lie strictly inside the domain")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "interior_knots", knots)

    @property
    def dim(self) -> int:
        n = len(self.interior_knots)
        return n + 2 if self.kind == "natural_cubic" else n + self.order

    @property
    def breakpoints(self) -> np.ndarray:
        """Domain ends and interior knots, ascending."""
        return np.concatenate([[self.domain.lo], self.interior_knots, [self.domain.hi]])

    @cached_property
    def knot_vector(self) -> np.ndarray:
        """Full clamped knot vector of the underlying B-spline system."""
        k = self.order
        return np.concatenate(
            [np.full(k, self.domain.lo), self.interior_knots, np.full(k, self.domain.hi)]
        )

    @cached_property
    def _natural_map(self) -> np.ndarray:
        # Columns: B-spline coefficients of the cardinal natural cubic splines.
        t = self.knot_vector
        nodes = self.breakpoints
        m = len(t) - 4
        rows = np.vstack(
            [
                _bspline_design(t, 4, nodes, 0),
                _bspline_design(t, 4, nodes[[0, -1]], 2),
            ]
        )
        rhs = np.zeros((m, nodes.size))
        rhs[: nodes.size] = np.eye(nodes.size)
        return np.linalg.solve(rows, rhs)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "order": self.order,
            "interior_knots": list(self.interior_knots),
            "domain": [self.domain.lo, self.domain.hi],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplineBasis":
        return cls(d["kind"], d["order"], tuple(d["interior_knots"]), Interval(*d["domain"]))


def make_basis(kind: str, order: int, interior_knots: Iterable[float], domain: Interval) -> SplineBasis:
    return SplineBasis(kind, 4 if kind == "natural_cubic" else order, tuple(interior_knots), domain)


def make_equispaced_basis(kind: str, order: int, n_interior: int, domain: Interval) -> SplineBasis:
    """Basis with ``n_interior`` knots splitting ``domain`` into equal pieces."""
    if n_interior < 0:
        raise ValueError(f"n_interior must be >= 0, got {n_interior}")
    if not isinstance(domain, Interval):
        domain = Interval(*domain)
    k = np.arange(1, n_interior + 1)
    knots = domain.lo + k * (domain.hi - domain.lo) / (n_interior + 1)
    return make_basis(kind, order, knots, domain)


def _bspline_design(t: np.ndarray, k: int, x: np.ndarray, deriv: int) -> np.ndarray:
    """Dense Cox-de Boor evaluation of all order-``k`` B-splines on knots ``t``."""
    x = np.asarray(x, dtype=float)
    m = len(t) - k
    # span index: last i with t[i] <= x < t[i+1], right end folded into the last piece
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, k - 1, m - 1)
    n_ord1 = len(t) - 1
    vals = np.zeros((x.size, n_ord1))
    vals[np.arange(x.size), span] = 1.0

    xc = x[:, None]
    for r in range(2, k - deriv + 1):
        j = np.arange(len(t) - r)
        left_den = t[j + r - 1] - t[j]
        right_den = t[j + r] - t[j + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            wl = np.where(left_den > 0, (xc - t[j]) / left_den, 0.0)
            wr = np.where(right_den > 0, (t[j + r] - xc) / right_den, 0.0)
        vals = wl * vals[:, :-1] + wr * vals[:, 1:]

    for r in range(k - deriv + 1, k + 1):
        j = np.arange(len(t) - r)
        left_den = t[j + r - 1] - t[j]
        right_den = t[j + r] - t[j + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            cl = np.where(left_den > 0, (r - 1) / left_den, 0.0)
            cr = np.where(right_den > 0, (r - 1) / right_den, 0.0)
        vals = cl * vals[:, :-1] - cr * vals[:, 1:]
    return vals


def _check_points(basis: SplineBasis, points) -> np.ndarray:
    x = np.atleast_1d(np.asarray(points, dtype=float))
    if x.ndim != 1:
        raise ValueError("points must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise DomainError("points must be finite")
    inside = basis.domain.contains(x)
    if not np.all(inside):
        bad = x[~inside]
        raise DomainError(
            f"{bad.size} point(s) outside domain [{basis.domain.lo}, {basis.domain.hi}], "
            f"e.g. {bad[0]!r}"
        )
    return np.clip(x, basis.domain.lo, basis.domain.hi)


def eval_basis(basis: SplineBasis, points, deriv: int = 0) -> np.ndarray:
    """Basis values (or derivatives) at ``points``; shape ``(n_points, dim)``."""
    deriv = int(deriv)
    if deriv < 0:
        raise ValueError("deriv must be >= 0")
    if deriv >= basis.order:
        raise ValueError(f"deriv {deriv} too high for a basis of order {basis.order}")
    x = _check_points(basis, points)
    out = _bspline_design(basis.knot_vector, basis.order, x, deriv)
    if basis.kind == "natural_cubic":
        out = out @ basis._natural_map
    return out


def eval_basis_extrapolated(basis: SplineBasis, points, deriv: int = 0) -> np.ndarray:
    """Like :func:`eval_basis` but continues every function linearly past the ends.

    Used for trend and exposure splines, where a held-out block may fall
    outside the range seen during fitting.
    """
    x = np.atleast_1d(np.asarray(points, dtype=float))
    lo, hi = basis.domain.lo, basis.domain.hi
    out = np.empty((x.size, basis.dim))
    mid = basis.domain.contains(x)
    if mid.any():
        out[mid] = eval_basis(basis, x[mid], deriv)
    for edge, mask in ((lo, x < lo), (hi, x > hi)):
        mask = mask & ~mid
        if not mask.any():
            continue
        slope = eval_basis(basis, [edge], 1)[0] if basis.order > 1 else np.zeros(basis.dim)
        if deriv == 0:
            value = eval_basis(basis, [edge], 0)[0]
            out[mask] = value + (x[mask] - edge)[:, None] * slope
        elif deriv == 1:
            out[mask] = slope
        else:
            out[mask] = 0.0
    return out


def _gl_order(left: SplineBasis, right: SplineBasis) -> int:
    return max(1, math.ceil((left.order + right.order) / 2))


def _overlap(left: SplineBasis, right: SplineBasis) -> Interval:
    lo = max(left.domain.lo, right.domain.lo)
    hi = min(left.domain.hi, right.domain.hi)
    if not lo < hi:
        raise DomainError("bases have non-overlapping domains")
    return Interval(lo, hi)


def _segment_nodes(edges: np.ndarray, n_nodes: int):
    """Gauss-Legendre nodes/weights on each piece ``[edges[i], edges[i+1]]``."""
    z, w = leggauss(n_nodes)
    a, b = edges[:-1, None], edges[1:, None]
    half = (b - a) / 2
    nodes = (a + b) / 2 + half * z
    weights = half * w
    return nodes.ravel(), weights.ravel()


def _piece_edges(left: SplineBasis, right: SplineBasis, cuts: Sequence[float], lo: float, hi: float):
    pts = np.concatenate([left.breakpoints, right.breakpoints, np.asarray(cuts, dtype=float)])
    pts = pts[(pts >= lo) & (pts <= hi)]
    return np.unique(np.concatenate([[lo, hi], pts]))


def gram(
    left: SplineBasis,
    right: SplineBasis,
    derivs: tuple = (0, 0),
    window: Interval | tuple | None = None,
) -> np.ndarray:
    """Matrix of integrals ``∫ B_left_j^(d1) B_right_k^(d2)`` over ``window``.

    ``window`` defaults to the overlap of the two domains; its ends may fall
    anywhere, pieces are split there so the rule stays exact.
    """
    d1, d2 = (int(d) for d in derivs)
    full = _overlap(left, right)
    if window is None:
        window = full
    elif not isinstance(window, Interval):
        lo, hi = (float(v) for v in window)
        if not lo < hi:
            raise DomainError(f"empty integration window [{lo}, {hi}]")
        window = Interval(lo, hi)
    tol = full.tol()
    if window.lo < full.lo - tol or window.hi > full.hi + tol:
        raise DomainError(
            f"window [{window.lo}, {window.hi}] exceeds common domain [{full.lo}, {full.hi}]"
        )
    lo, hi = max(window.lo, full.lo), min(window.hi, full.hi)
    edges = _piece_edges(left, right, (), lo, hi)
    nodes, weights = _segment_nodes(edges, _gl_order(left, right))
    bl = eval_basis(left, nodes, d1)
    br = bl if (right is left and d1 == d2) else eval_basis(right, nodes, d2)
    return (bl * weights[:, None]).T @ br


def penalty(basis: SplineBasis, deriv_order: int = 2) -> np.ndarray:
    """Roughness matrix ``∫ B_j^(d) B_k^(d)``."""
    if deriv_order >= basis.order:
        raise ValueError(f"penalty order {deriv_order} needs a basis of order > {deriv_order}")
    g = gram(basis, basis, (deriv_order, deriv_order))
    return (g + g.T) / 2


def windowed_grams(left: SplineBasis, right: SplineBasis, starts, stops) -> np.ndarray:
    """Stack of ``gram(left, right, window=[starts[g], stops[g]])``.

    Built from a single cumulative sweep over the common domain, so pieces
    outside a window contribute exact zeros.  Windows with ``start == stop``
    give zero matrices.  Returns an array of shape ``(n_windows, dim_l, dim_r)``.
    """
    starts = np.asarray(starts, dtype=float)
    stops = np.asarray(stops, dtype=float)
    if starts.shape != stops.shape or starts.ndim != 1:
        raise ValueError("starts and stops must be 1-d arrays of equal length")
    if np.any(stops < starts):
        raise DomainError("window stop before start")
    full = _overlap(left, right)
    tol = full.tol()
    if starts.size and (starts.min() < full.lo - tol or stops.max() > full.hi + tol):
        raise DomainError("window outside the common domain")
    starts = np.clip(starts, full.lo, full.hi)
    stops = np.clip(stops, full.lo, full.hi)
    cuts = np.unique(np.concatenate([starts, stops]))
    edges = _piece_edges(left, right, cuts, full.lo, full.hi)
    n = _gl_order(left, right)
    nodes, weights = _segment_nodes(edges, n)
    bl = eval_basis(left, nodes)
    br = eval_basis(right, nodes)
    per_node = (bl * weights[:, None])[:, :, None] * br[:, None, :]
    per_piece = per_node.reshape(edges.size - 1, n, left.dim, right.dim).sum(axis=1)
    cum = np.concatenate([np.zeros((1, left.dim, right.dim)), np.cumsum(per_piece, axis=0)])
    ia = np.searchsorted(edges, starts)
    ib = np.searchsorted(edges, stops)
    return cum[ib] - cum[ia]
