"""Classical comparison models on the same log-count response.

* Scalar-summary models: log counts on a trend spline plus a penalized
  cubic spline in one lag-1 daily summary (min, mean, max or diurnal range).
* Distributed-lag model: log counts on a trend spline plus a cross-basis
  (temperature spline x lag spline) over the previous ``max_lag`` days.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import Interval, SplineBasis, eval_basis, eval_basis_extrapolated, make_basis, make_equispaced_basis, penalty
from .errors import RankDeficientError
from .linalg import PenalizedDesign, embed, relative_grid, select_gcv
from .trend import TrendSpec, trend_design

__all__ = [
    "SUMMARY_KINDS",
    "summarize_day",
    "ScalarBaselineFit",
    "fit_scalar_baseline",
    "predict_scalar_baseline",
    "nearest_rank_percentile",
    "CrossBasis",
    "build_crossbasis",
    "DlnmFit",
    "fit_dlnm",
    "predict_dlnm",
    "lag_response",
]

SUMMARY_KINDS = ("min", "mean", "max", "diurnal_range")


def summarize_day(readings) -> dict:
    """Daily min / mean / max / diurnal range of one day's readings."""
    r = np.asarray(readings, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("no readings for this day")
    lo, hi = float(r.min()), float(r.max())
    return {"min": lo, "mean": float(r.mean()), "max": hi, "diurnal_range": hi - lo}


def _log_response(counts, offset):
    y = np.asarray(counts, dtype=float)
    if np.any(y + offset <= 0):
        raise ValueError("counts must be positive (or use a positive log_offset)")
    return np.log(y + offset)


@dataclass
class ScalarBaselineFit:
    kind: str
    intercept: float
    trend_coeffs: np.ndarray
    smooth_coeffs: np.ndarray  # coefficients of exposure basis functions 1..dim-1
    exposure_basis: SplineBasis
    trend_basis: SplineBasis | None
    lam: float
    edf: float
    log_offset: float
    fitted: np.ndarray

    def smooth(self, x) -> np.ndarray:
        """Fitted exposure effect (zero at the low end of the training range)."""
        return eval_basis_extrapolated(self.exposure_basis, x)[:, 1:] @ self.smooth_coeffs


def fit_scalar_baseline(
    counts,
    exposure,
    index,
    trend: TrendSpec | None = None,
    smooth_df: int = 10,
    log_lambda_grid=tuple(range(-8, 5)),
    kind: str = "mean",
    log_offset: float = 0.0,
) -> ScalarBaselineFit:
    """Penalized-spline regression of log counts on one scalar exposure.

    ``smooth_df`` is the dimension of the cubic B-spline basis spanning the
    observed exposure range; the roughness weight is chosen by GCV.
    """
    trend = trend or TrendSpec()
    y = _log_response(counts, log_offset)
    x = np.asarray(exposure, dtype=float)
    index = np.asarray(index, dtype=float)
    if not (x.size == y.size == index.size):
        raise ValueError("counts, exposure and index must have equal length")
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise RankDeficientError(["exposure"], "exposure is constant")
    xb = make_equispaced_basis("bspline", 4, max(smooth_df - 4, 0), Interval(lo, hi))
    tb = trend.basis(index)
    N = trend_design(tb, index)
    X = eval_basis(xb, x)[:, 1:]
    n = y.size
    Z = np.hstack([np.ones((n, 1)), N, X])
    nt = N.shape[1]
    sl_x = slice(1 + nt, Z.shape[1])
    P = embed(penalty(xb)[1:, 1:], sl_x, Z.shape[1])
    blocks = [("intercept", slice(0, 1)), ("trend", slice(1, 1 + nt)), ("exposure", sl_x)]
    design = PenalizedDesign(Z, [P], blocks)
    sol, _ = select_gcv(design, y, [relative_grid(design, 0, log_lambda_grid)])
    c = sol.coef
    return ScalarBaselineFit(
        kind=kind,
        intercept=float(c[0]),
        trend_coeffs=c[1 : 1 + nt].copy(),
        smooth_coeffs=c[sl_x].copy(),
        exposure_basis=xb,
        trend_basis=tb,
        lam=sol.lambdas[0],
        edf=sol.edf,
        log_offset=log_offset,
        fitted=Z @ c,
    )


def predict_scalar_baseline(fit: ScalarBaselineFit, exposure, index) -> np.ndarray:
    eta = (
        fit.intercept
        + trend_design(fit.trend_basis, index) @ fit.trend_coeffs
        + fit.smooth(np.asarray(exposure, dtype=float))
    )
    return np.exp(eta) - fit.log_offset


def nearest_rank_percentile(values, pct: float) -> float:
    """Smallest value with at least ``pct`` percent of the data at or below it."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no values")
    rank = max(1, math.ceil(pct / 100.0 * v.size))
    return float(v[rank - 1])


@dataclass
class CrossBasis:
    temp_basis: SplineBasis
    lag_basis: SplineBasis
    design: np.ndarray  # (n_days, dim_temp * dim_lag), column index j * dim_lag + k
    complete: np.ndarray  # bool per day: full lag history available
    max_lag: int

    @property
    def width(self) -> int:
        return self.design.shape[1]


def _lag_knots(max_lag: int, n_knots: int) -> np.ndarray:
    top = math.log1p(max_lag)
    return np.expm1(np.arange(1, n_knots + 1) * top / (n_knots + 1))


def build_crossbasis(
    daily_temps,
    max_lag: int = 60,
    temp_knot_pcts=(10, 75, 90),
    n_lag_knots: int = 3,
    temp_range: tuple | None = None,
) -> CrossBasis:
    """Cross-basis of a daily temperature series.

    Row ``d`` equals ``sum_{l=0..max_lag} temp_basis(x[d-l]) ⊗ lag_basis(l)``.
    The first ``max_lag`` rows lack a full history and are flagged.
    """
    x = np.asarray(daily_temps, dtype=float)
    max_lag = int(max_lag)
    if x.size <= max_lag:
        raise ValueError(f"series of {x.size} days is too short for max_lag={max_lag}")
    lo, hi = temp_range if temp_range is not None else (float(x.min()), float(x.max()))
    if not hi > lo:
        # degenerate range (constant series): widen symmetrically so the basis exists
        lo, hi = lo - 0.5, hi + 0.5
    knots = sorted({nearest_rank_percentile(x, p) for p in temp_knot_pcts})
    knots = [k for k in knots if lo < k < hi]
    tb = make_basis("bspline", 4, knots, Interval(lo, hi))
    lb = make_basis("bspline", 4, _lag_knots(max_lag, n_lag_knots), Interval(0.0, float(max_lag)))
    T = eval_basis_extrapolated(tb, x)  # (n, dt)
    L = eval_basis(lb, np.arange(max_lag + 1))  # (max_lag+1, dl)
    n = x.size
    # lagged temperature basis: Tl[d, l, j] = T[d - l, j], zero before the series start
    design = np.zeros((n, tb.dim * lb.dim))
    for lag in range(max_lag + 1):
        block = np.zeros((n, tb.dim))
        block[lag:] = T[: n - lag]
        design += np.einsum("dj,k->djk", block, L[lag]).reshape(n, -1)
    complete = np.arange(n) >= max_lag
    return CrossBasis(tb, lb, design, complete, max_lag)


@dataclass
class DlnmFit:
    intercept: float
    trend_coeffs: np.ndarray
    cb_coeffs: np.ndarray  # (dim_temp, dim_lag); first temperature row fixed at zero
    trend_basis: SplineBasis | None
    lam: float
    log_offset: float
    temp_basis: SplineBasis
    lag_basis: SplineBasis


def _identified_columns(cb: CrossBasis) -> np.ndarray:
    # drop the first temperature function: with a partition of unity the
    # remaining columns no longer span the intercept
    dl = cb.lag_basis.dim
    return np.arange(dl, cb.width)


def fit_dlnm(
    counts,
    crossbasis: CrossBasis,
    index,
    trend: TrendSpec | None = None,
    rows=None,
    lam: float | str = 0.0,
    log_lambda_grid=tuple(range(-8, 3)),
    log_offset: float = 0.0,
    trend_index=None,
) -> DlnmFit:
    """Least squares of log counts on trend + cross-basis.

    ``rows`` selects the training days (default: every complete row).
    ``lam`` = 0 gives the unpenalized fit; a number or "gcv" adds a ridge
    penalty on the cross-basis block.  ``trend_index`` (defaults to
    ``index``) is the variable the trend spline runs over.
    """
    trend = trend or TrendSpec()
    counts = np.asarray(counts, dtype=float)
    index = np.asarray(index, dtype=float)
    trend_index = index if trend_index is None else np.asarray(trend_index, dtype=float)
    n_all = crossbasis.design.shape[0]
    if counts.size != n_all or index.size != n_all or trend_index.size != n_all:
        raise ValueError("counts, index and cross-basis rows must align")
    sel = np.zeros(n_all, bool)
    if rows is None:
        sel[:] = True
    else:
        sel[np.asarray(rows)] = True
    sel &= crossbasis.complete
    if not sel.any():
        raise ValueError("no complete cross-basis rows to fit")
    y = _log_response(counts[sel], log_offset)
    cols = _identified_columns(crossbasis)
    W = crossbasis.design[sel][:, cols]
    tb = trend.basis(trend_index[sel])
    N = trend_design(tb, trend_index[sel])
    n = y.size
    Z = np.hstack([np.ones((n, 1)), N, W])
    nt = N.shape[1]
    sl_cb = slice(1 + nt, Z.shape[1])
    blocks = [("intercept", slice(0, 1)), ("trend", slice(1, 1 + nt)), ("crossbasis", sl_cb)]
    ridge = embed(np.eye(cols.size), sl_cb, Z.shape[1])
    design = PenalizedDesign(Z, [ridge], blocks)
    if lam == "gcv":
        sol, _ = select_gcv(design, y, [relative_grid(design, 0, log_lambda_grid)])
    else:
        sol = design.solve(y, (float(lam),))
    c = sol.coef
    theta = np.zeros(crossbasis.width)
    theta[cols] = c[sl_cb]
    return DlnmFit(
        intercept=float(c[0]),
        trend_coeffs=c[1 : 1 + nt].copy(),
        cb_coeffs=theta.reshape(crossbasis.temp_basis.dim, crossbasis.lag_basis.dim),
        trend_basis=tb,
        lam=sol.lambdas[0],
        log_offset=log_offset,
        temp_basis=crossbasis.temp_basis,
        lag_basis=crossbasis.lag_basis,
    )


def predict_dlnm(fit: DlnmFit, crossbasis: CrossBasis, index, rows=None, trend_index=None) -> np.ndarray:
    """Predicted counts for ``rows`` (default all rows; incomplete rows give NaN)."""
    index = np.asarray(index, dtype=float)
    trend_index = index if trend_index is None else np.asarray(trend_index, dtype=float)
    rows = np.arange(crossbasis.design.shape[0]) if rows is None else np.asarray(rows)
    eta = (
        fit.intercept
        + trend_design(fit.trend_basis, trend_index[rows]) @ fit.trend_coeffs
        + crossbasis.design[rows] @ fit.cb_coeffs.ravel()
    )
    out = np.exp(eta) - fit.log_offset
    return np.where(crossbasis.complete[rows], out, np.nan)


def lag_response(fit: DlnmFit, temp: float, ref: float, lags=None) -> np.ndarray:
    """Log-rate contrast between ``temp`` and ``ref`` at each lag."""
    lags = np.arange(int(fit.lag_basis.domain.hi) + 1) if lags is None else np.asarray(lags, dtype=float)
    tv = eval_basis_extrapolated(fit.temp_basis, [temp, ref])
    contrast = (tv[0] - tv[1]) @ fit.cb_coeffs  # (dim_lag,)
    return eval_basis(fit.lag_basis, lags) @ contrast
