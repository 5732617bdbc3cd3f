"""Function-on-function regression with a historical (lagged-window) surface.

Model, for year ``i`` and day-of-year ``t``::

    ln(y_i(t)) = s(i) + beta0(t) + ∫_{max(0, t-L)}^{t} x_i(s) beta1(s, t) ds + e_i(t)

with ``beta1(s, t) = psi(s)' B eta(t)``.  The response is evaluated on a
daily grid, so the model is a penalized least-squares problem in
``[beta0 | trend | vec(B)]``.  Only entries of ``B`` whose tensor basis
function meets at least one integration window enter the design; the rest
cannot influence any prediction and stay at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import Interval, SplineBasis, eval_basis, make_equispaced_basis, penalty, windowed_grams
from .errors import DomainError, RankDeficientError
from .linalg import PenalizedDesign, embed, relative_grid, select_gcv
from .smoother import FunctionalDatum
from .trend import TrendSpec, trend_design

__all__ = ["FflmSpec", "FflmFit", "fit_fflm", "fit_fflm_matrix", "predict_fflm", "eval_surface"]

YEAR_DOMAIN = Interval(0.0, 365.0)


def _default_surface_basis() -> SplineBasis:
    return make_equispaced_basis("bspline", 4, 12, YEAR_DOMAIN)


@dataclass(frozen=True)
class FflmSpec:
    s_basis: SplineBasis = field(default_factory=_default_surface_basis)
    t_basis: SplineBasis = field(default_factory=_default_surface_basis)
    year_trend: TrendSpec = field(default_factory=lambda: TrendSpec(knot_spacing=10.0))
    lag_max: float = 60.0
    t_grid: tuple | None = None
    lam_s: float | str = "gcv"
    lam_t: float | str = "gcv"
    log_lambda_grid_s: tuple = (-6, -4.5, -3, -1.5, 0)
    log_lambda_grid_t: tuple = (-6, -4.5, -3, -1.5, 0)
    log_offset: float = 0.0

    def __post_init__(self):
        if not self.lag_max > 0:
            raise ValueError("lag_max must be positive")
        if self.s_basis.domain != self.t_basis.domain:
            raise DomainError("s and t bases must share a domain")
        for name in ("lam_s", "lam_t"):
            v = getattr(self, name)
            if isinstance(v, str) and v != "gcv":
                raise ValueError(f"{name} must be a nonnegative number or 'gcv'")
            if not isinstance(v, str) and v < 0:
                raise ValueError(f"{name} must be nonnegative")
        grid = self.grid
        if grid.min() < self.t_basis.domain.lo:
            raise DomainError("t_grid point below the domain start")
        if grid.max() > self.t_basis.domain.hi or np.any(np.diff(grid) <= 0):
            raise DomainError("t_grid must be ascending inside the domain")

    @property
    def grid(self) -> np.ndarray:
        if self.t_grid is None:
            d = self.t_basis.domain
            return np.arange(np.ceil(d.lo), np.floor(d.hi) - (np.floor(d.hi) == d.hi) + 1.0)
        return np.asarray(self.t_grid, dtype=float)


@dataclass
class FflmFit:
    beta0_coeffs: np.ndarray
    surface: np.ndarray  # (dim_s, dim_t), zeros where inactive
    active: np.ndarray  # bool (dim_s, dim_t)
    year_trend_coeffs: np.ndarray
    lambdas: tuple
    residual_matrix: np.ndarray
    spec: FflmSpec
    trend_basis: SplineBasis | None
    edf: float

    @property
    def t_grid(self) -> np.ndarray:
        return self.spec.grid


def _window_starts(spec: FflmSpec, grid: np.ndarray) -> np.ndarray:
    return np.maximum(spec.s_basis.domain.lo, grid - spec.lag_max)


def active_mask(spec: FflmSpec, rtol: float = 1e-8) -> np.ndarray:
    """Tensor coefficients that meet the integration windows.

    The weight of pair ``(j, k)`` is ``sum_g eta_k(t_g) ∫_{window g} psi_j``;
    pairs whose weight is below ``rtol`` times the largest one only touch a
    window at the tip of a support and are dropped with the structurally
    inert ones.
    """
    grid = spec.grid
    d = spec.s_basis.domain
    one = SplineBasis("bspline", 1, (), d)
    G = windowed_grams(one, spec.s_basis, _window_starts(spec, grid), grid)[:, 0, :]
    weight = np.abs(G).T @ np.abs(eval_basis(spec.t_basis, grid))
    return weight > rtol * weight.max()


def _temperature_coeffs(temperature: Sequence[FunctionalDatum], spec: FflmSpec):
    if len(temperature) == 0:
        raise ValueError("no temperature curves")
    xb = temperature[0].basis
    for fd in temperature[1:]:
        if fd.basis != xb:
            raise ValueError("temperature curves must share one basis")
    if xb.domain != spec.s_basis.domain:
        raise DomainError("temperature curves and surface basis cover different domains")
    return xb, np.vstack([fd.coeffs for fd in temperature])


def _surface_features(xb, C, spec: FflmSpec, active: np.ndarray) -> np.ndarray:
    """Rows (year, grid point); columns the active tensor coefficients."""
    grid = spec.grid
    G = windowed_grams(xb, spec.s_basis, _window_starts(spec, grid), grid)
    H = np.einsum("ix,gxj->igj", C, G)
    E = eval_basis(spec.t_basis, grid)
    jj, kk = np.nonzero(active)
    F = H[:, :, jj] * E[None, :, kk]
    return F.reshape(-1, jj.size)


def _year_trend(spec: FflmSpec, years):
    try:
        return spec.year_trend.basis(years)
    except RankDeficientError:
        raise RankDeficientError(["year_trend"], "needs at least two distinct years") from None


def _linear_predictor(fit: FflmFit, xb, C, years) -> np.ndarray:
    spec = fit.spec
    grid = spec.grid
    E = eval_basis(spec.t_basis, grid)
    F = _surface_features(xb, C, spec, fit.active)
    surf = (F @ fit.surface[fit.active]).reshape(C.shape[0], grid.size)
    trend = trend_design(fit.trend_basis, years) @ fit.year_trend_coeffs
    return (E @ fit.beta0_coeffs)[None, :] + trend[:, None] + surf


def fit_fflm_matrix(log_response, temperature: Sequence[FunctionalDatum], years, spec: FflmSpec | None = None) -> FflmFit:
    """Fit from a ``(n_years, n_grid)`` matrix of log responses on ``spec.grid``."""
    spec = spec or FflmSpec()
    Y = np.asarray(log_response, dtype=float)
    years = np.asarray(years, dtype=float)
    xb, C = _temperature_coeffs(temperature, spec)
    grid = spec.grid
    n_years = C.shape[0]
    if Y.shape != (n_years, grid.size) or years.size != n_years:
        raise ValueError(
            f"need one response row and one year per temperature curve "
            f"({n_years} curves, response shape {Y.shape}, {years.size} years)"
        )
    if not np.all(np.isfinite(Y)):
        raise ValueError("log responses must be finite")

    trend_basis = _year_trend(spec, years)
    active = active_mask(spec)
    E = eval_basis(spec.t_basis, grid)
    N = trend_design(trend_basis, years)
    F = _surface_features(xb, C, spec, active)
    dt, nt, na = E.shape[1], N.shape[1], F.shape[1]
    Z = np.hstack([np.tile(E, (n_years, 1)), np.repeat(N, grid.size, axis=0), F])
    p = Z.shape[1]
    sl_b0, sl_tr, sl_s = slice(0, dt), slice(dt, dt + nt), slice(dt + nt, p)

    idx = np.flatnonzero(active.ravel())
    Ps = np.kron(penalty(spec.s_basis), np.eye(spec.t_basis.dim))[np.ix_(idx, idx)]
    Pt = np.kron(np.eye(spec.s_basis.dim), penalty(spec.t_basis))[np.ix_(idx, idx)]
    blocks = [("beta0", sl_b0), ("year_trend", sl_tr), ("surface", sl_s)]
    design = PenalizedDesign(Z, [embed(Ps, sl_s, p), embed(Pt, sl_s, p)], blocks)
    y = Y.ravel()

    if spec.lam_s == "gcv" or spec.lam_t == "gcv":
        gs = relative_grid(design, 0, spec.log_lambda_grid_s) if spec.lam_s == "gcv" else [float(spec.lam_s)]
        gt = relative_grid(design, 1, spec.log_lambda_grid_t) if spec.lam_t == "gcv" else [float(spec.lam_t)]
        sol, _ = select_gcv(design, y, [gs, gt])
    else:
        sol = design.solve(y, (float(spec.lam_s), float(spec.lam_t)))

    coef = sol.coef
    surface = np.zeros(active.shape)
    surface[active] = coef[sl_s]
    resid = (y - Z @ coef).reshape(n_years, grid.size)
    fit = FflmFit(
        beta0_coeffs=coef[sl_b0].copy(),
        surface=surface,
        active=active,
        year_trend_coeffs=coef[sl_tr].copy(),
        lambdas=sol.lambdas,
        residual_matrix=resid,
        spec=spec,
        trend_basis=trend_basis,
        edf=sol.edf,
    )
    fit._design = design  # kept for diagnostics (normal-equation checks)
    fit._response = y
    fit._solution = sol
    return fit


def fit_fflm(mortality: Sequence[FunctionalDatum], temperature: Sequence[FunctionalDatum], years, spec: FflmSpec | None = None) -> FflmFit:
    """Fit from smoothed mortality curves (count scale) and temperature curves.

    The mortality curves are evaluated on the daily grid and logged; any
    nonpositive smoothed value is an error.
    """
    spec = spec or FflmSpec()
    if len(mortality) != len(temperature):
        raise ValueError(f"{len(mortality)} mortality curves but {len(temperature)} temperature curves")
    if len(np.asarray(years)) != len(mortality):
        raise ValueError("one year label per curve required")
    grid = spec.grid
    M = np.vstack([fd(grid) for fd in mortality]) + spec.log_offset
    if np.any(M <= 0):
        i, g = np.argwhere(M <= 0)[0]
        raise ValueError(
            f"smoothed mortality is nonpositive (year position {i}, t={grid[g]}); log undefined"
        )
    return fit_fflm_matrix(np.log(M), temperature, years, spec)


def predict_fflm(fit: FflmFit, temperature: Sequence[FunctionalDatum], years) -> np.ndarray:
    """Predicted daily counts, shape ``(n_years, n_grid)``."""
    xb, C = _temperature_coeffs(temperature, fit.spec)
    years = np.asarray(years, dtype=float)
    if years.size != C.shape[0]:
        raise ValueError("one year label per temperature curve required")
    return np.exp(_linear_predictor(fit, xb, C, years)) - fit.spec.log_offset


def eval_surface(fit: FflmFit, s_points, t_points) -> np.ndarray:
    """``beta1(s, t)`` on a grid; NaN where ``s`` lies outside ``[t - L, t]``."""
    spec = fit.spec
    s = np.asarray(s_points, dtype=float)
    t = np.asarray(t_points, dtype=float)
    vals = eval_basis(spec.s_basis, s) @ fit.surface @ eval_basis(spec.t_basis, t).T
    inside = (s[:, None] <= t[None, :]) & (s[:, None] >= t[None, :] - spec.lag_max)
    return np.where(inside, vals, np.nan)
