"""Scalar-on-function regression of log daily counts on the previous day's curve.

Model::

    ln(y_i + offset) = beta0 + s(i) + ∫ x_{i-1}(s) beta1(s) ds + e_i

``beta1`` is expanded in a spline basis, the integral reduces to
``c_i' J b`` with ``J`` the cross Gram matrix between the exposure basis and
the coefficient basis, and ``b`` carries a second-derivative roughness
penalty.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import Interval, SplineBasis, eval_basis, gram, make_equispaced_basis, penalty
from .errors import DomainError
from .linalg import PenalizedDesign, embed, relative_grid, select_gcv
from .smoother import FunctionalDatum
from .trend import TrendSpec, trend_design

__all__ = [
    "SflmSpec",
    "SflmFit",
    "BootstrapBand",
    "fit_sflm",
    "predict_sflm",
    "wild_bootstrap_band",
    "draw_multipliers",
]


def _default_beta_basis() -> SplineBasis:
    return make_equispaced_basis("bspline", 4, 10, Interval(0.0, 24.0))


@dataclass(frozen=True)
class SflmSpec:
    beta_basis: SplineBasis = field(default_factory=_default_beta_basis)
    trend: TrendSpec = field(default_factory=TrendSpec)
    lam: float | str = "gcv"
    log_lambda_grid: tuple = tuple(range(-8, 3))
    log_offset: float = 0.0
    penalty_deriv: int = 2

    def __post_init__(self):
        if isinstance(self.lam, str):
            if self.lam != "gcv":
                raise ValueError("lam must be a nonnegative number or 'gcv'")
            if not self.log_lambda_grid:
                raise ValueError("gcv needs a non-empty log_lambda_grid")
        elif self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.log_offset < 0:
            raise ValueError("log_offset must be nonnegative")


@dataclass
class SflmFit:
    beta0: float
    trend_coeffs: np.ndarray
    beta1: FunctionalDatum
    lam: float
    residuals: np.ndarray
    fitted: np.ndarray
    spec: SflmSpec
    trend_basis: SplineBasis | None
    exposure_basis: SplineBasis
    edf: float
    design_hash: str

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([[self.beta0], self.trend_coeffs, self.beta1.coeffs])


@dataclass
class BootstrapBand:
    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    estimate: np.ndarray
    level: float
    n_reps: int
    seed: int


def _exposure_matrix(exposures: Sequence[FunctionalDatum]):
    if len(exposures) == 0:
        raise ValueError("no exposures")
    basis = exposures[0].basis
    for fd in exposures[1:]:
        if fd.basis != basis:
            raise ValueError("exposures must share one basis")
    return basis, np.vstack([fd.coeffs for fd in exposures])


def _log_response(counts, offset: float) -> np.ndarray:
    y = np.asarray(counts, dtype=float)
    if np.any(~np.isfinite(y)):
        raise ValueError("counts must be finite")
    if np.any(y + offset <= 0):
        bad = int(np.argmax(y + offset <= 0))
        raise ValueError(f"count {y[bad]} at position {bad} is not positive; set log_offset > 0")
    return np.log(y + offset)


def _design_hash(y, C, index, spec: SflmSpec) -> str:
    h = hashlib.sha256()
    for a in (y, C, index):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    h.update(repr((spec.beta_basis.to_dict(), spec.trend.to_dict(), spec.log_offset)).encode())
    return h.hexdigest()[:16]


class _SflmProblem:
    """Design, blocks and penalty for one data set."""

    def __init__(self, counts, exposures, index, spec: SflmSpec, trend_basis="auto"):
        self.spec = spec
        self.y = _log_response(counts, spec.log_offset)
        self.xbasis, self.C = _exposure_matrix(exposures)
        self.index = np.asarray(index, dtype=float)
        n = self.y.size
        if self.C.shape[0] != n or self.index.size != n:
            raise ValueError("counts, exposures and index must have equal length")
        bb = spec.beta_basis
        if self.xbasis.domain != bb.domain:
            raise DomainError("exposure and coefficient bases cover different domains")
        self.J = gram(self.xbasis, bb)
        self.trend_basis = spec.trend.basis(self.index) if trend_basis == "auto" else trend_basis
        N = trend_design(self.trend_basis, self.index)
        Z = np.hstack([np.ones((n, 1)), N, self.C @ self.J])
        nt = N.shape[1]
        self.sl_trend = slice(1, 1 + nt)
        self.sl_beta = slice(1 + nt, 1 + nt + bb.dim)
        P = embed(penalty(bb, spec.penalty_deriv), self.sl_beta, Z.shape[1])
        blocks = [("intercept", slice(0, 1)), ("trend", self.sl_trend), ("beta1", self.sl_beta)]
        self.design = PenalizedDesign(Z, [P], blocks)
        self.hash = _design_hash(self.y, self.C, self.index, spec)

    def solve(self, lam=None):
        spec = self.spec
        if lam is not None:
            return self.design.solve(self.y, (lam,))
        if spec.lam == "gcv":
            grid = relative_grid(self.design, 0, spec.log_lambda_grid)
            sol, _ = select_gcv(self.design, self.y, [grid])
            return sol
        return self.design.solve(self.y, (float(spec.lam),))

    def package(self, sol) -> SflmFit:
        b = sol.coef
        fitted = self.design.Z @ b
        return SflmFit(
            beta0=float(b[0]),
            trend_coeffs=b[self.sl_trend].copy(),
            beta1=FunctionalDatum(self.spec.beta_basis, b[self.sl_beta].copy(), "beta1"),
            lam=sol.lambdas[0],
            residuals=self.y - fitted,
            fitted=fitted,
            spec=self.spec,
            trend_basis=self.trend_basis,
            exposure_basis=self.xbasis,
            edf=sol.edf,
            design_hash=self.hash,
        )


def fit_sflm(counts, exposures: Sequence[FunctionalDatum], index, spec: SflmSpec | None = None) -> SflmFit:
    """Fit the scalar-on-function model.

    Parameters
    ----------
    counts : array of positive counts ``y_i``
    exposures : curves ``x_{i-1}`` (one per count, sharing a basis)
    index : observation index used by the trend spline
    spec : SflmSpec

    Raises
    ------
    RankDeficientError
        If the penalized design leaves a direction unidentified; the error
        names the coefficient block(s).
    """
    spec = spec or SflmSpec()
    prob = _SflmProblem(counts, exposures, index, spec)
    return prob.package(prob.solve())


def predict_sflm(fit: SflmFit, exposures: Sequence[FunctionalDatum], index) -> np.ndarray:
    """Predicted counts ``exp(eta) - offset``."""
    xbasis, C = _exposure_matrix(exposures)
    if xbasis.domain != fit.beta1.basis.domain:
        raise DomainError("exposures cover a different domain than the fitted coefficient")
    index = np.asarray(index, dtype=float)
    if index.size != C.shape[0]:
        raise ValueError("one index per exposure required")
    J = gram(xbasis, fit.beta1.basis)
    eta = fit.beta0 + trend_design(fit.trend_basis, index) @ fit.trend_coeffs + C @ J @ fit.beta1.coeffs
    return np.exp(eta) - fit.spec.log_offset


def draw_multipliers(n: int, seed: int, rep: int, law: str = "rademacher") -> np.ndarray:
    """Wild-bootstrap weights for replicate ``rep``; seeded per replicate."""
    rng = np.random.default_rng([int(seed), int(rep)])
    if law == "rademacher":
        return rng.integers(0, 2, size=n) * 2.0 - 1.0
    if law == "mammen":
        r5 = np.sqrt(5.0)
        p = (r5 + 1) / (2 * r5)
        lo, hi = -(r5 - 1) / 2, (r5 + 1) / 2
        return np.where(rng.random(n) < p, lo, hi)
    raise ValueError(f"unknown multiplier law {law!r}")


def wild_bootstrap_band(
    fit: SflmFit,
    counts,
    exposures: Sequence[FunctionalDatum],
    index,
    n_reps: int = 500,
    level: float = 0.95,
    seed: int = 0,
    grid=None,
    law: str = "rademacher",
) -> BootstrapBand:
    """Pointwise wild-bootstrap band for ``beta1``.

    Each replicate flips the fitted residuals with random multipliers,
    refits with the original smoothing parameter and evaluates ``beta1`` on
    ``grid``; the band is the pair of empirical ``(a/2, 1-a/2)`` quantiles.
    """
    if n_reps < 2:
        raise ValueError("n_reps must be at least 2")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    bb = fit.beta1.basis
    if grid is None:
        grid = np.linspace(bb.domain.lo, bb.domain.hi, 97)
    grid = np.asarray(grid, dtype=float)
    if not np.all(bb.domain.contains(grid)):
        raise DomainError("bootstrap grid outside the coefficient domain")
    prob = _SflmProblem(counts, exposures, index, fit.spec, trend_basis=fit.trend_basis)
    if prob.hash != fit.design_hash:
        raise ValueError("fit was not produced from the supplied data")
    sol = prob.design.solve(prob.y, (fit.lam,))
    op = prob.design.operator(sol)[prob.sl_beta]
    n = prob.y.size
    V = np.column_stack([draw_multipliers(n, seed, r, law) for r in range(n_reps)])
    Ystar = fit.fitted[:, None] + V * fit.residuals[:, None]
    E = eval_basis(bb, grid)
    curves = E @ (op @ Ystar)
    alpha = 1.0 - level
    lower = np.quantile(curves, alpha / 2, axis=1)
    upper = np.quantile(curves, 1 - alpha / 2, axis=1)
    return BootstrapBand(grid, lower, upper, E @ fit.beta1.coeffs, level, n_reps, seed)
