"""Turn sampled series into spline curves by penalized least squares.

The default rule mirrors the usual functional-data practice of fixing knots
at equal spacing and picking their number by leave-one-out cross-validation.
A GCV rule over the roughness weight is available as well.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import SplineBasis, eval_basis, make_equispaced_basis, penalty
from .errors import DomainError, RankDeficientError
from .linalg import PenalizedDesign, relative_grid

__all__ = [
    "SampledSeries",
    "FunctionalDatum",
    "SmoothConfig",
    "SmoothDiagnostics",
    "smooth",
    "smooth_batch",
    "evaluate",
]

_RULES = ("fixed", "gcv", "loocv")


@dataclass(frozen=True)
class SampledSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if t.size == 0:
            raise ValueError("empty series")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly ascending")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("series contains non-finite entries")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class FunctionalDatum:
    """One curve: coefficients in a spline basis."""

    basis: SplineBasis
    coeffs: np.ndarray
    label: object = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.basis.dim,):
            raise ValueError(f"expected {self.basis.dim} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    def __call__(self, points, deriv: int = 0) -> np.ndarray:
        return evaluate(self, points, deriv)


def evaluate(fd: FunctionalDatum, points, deriv: int = 0) -> np.ndarray:
    return eval_basis(fd.basis, points, deriv) @ fd.coeffs


@dataclass(frozen=True)
class SmoothConfig:
    """How to smooth.

    ``rule`` is one of

    * ``"fixed"``: use ``basis`` and ``lam`` as given;
    * ``"loocv"``: equispaced bases with each of ``candidate_knot_counts``
      interior knots (same kind/order/domain as ``basis``), ``lam`` fixed,
      the count with the lowest leave-one-out score wins, ties to fewer knots;
    * ``"gcv"``: ``basis`` fixed, ``lam`` chosen by GCV over
      ``log_lambda_grid`` (log10, relative to ``tr(Phi'Phi) / tr(P)``).
    """

    basis: SplineBasis
    rule: str = "loocv"
    lam: float = 0.0
    penalty_deriv: int = 2
    candidate_knot_counts: tuple = ()
    log_lambda_grid: tuple = tuple(range(-8, 3))

    def __post_init__(self):
        if self.rule not in _RULES:
            raise ValueError(f"unknown smoothing rule {self.rule!r}; expected one of {_RULES}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.rule == "gcv" and len(self.log_lambda_grid) == 0:
            raise ValueError("gcv rule needs a non-empty log_lambda_grid")
        if any(int(k) < 0 for k in self.candidate_knot_counts):
            raise ValueError("knot counts must be nonnegative")

    def candidates(self) -> list[SplineBasis]:
        if self.rule != "loocv" or not self.candidate_knot_counts:
            return [self.basis]
        b = self.basis
        counts = sorted({int(k) for k in self.candidate_knot_counts})
        return [make_equispaced_basis(b.kind, b.order, k, b.domain) for k in counts]


@dataclass
class SmoothDiagnostics:
    lambda_used: float
    knots_used: int
    loocv_score: float
    edf: float
    scores: dict = field(default_factory=dict)


class _Group:
    """Series sharing sample times, hence one design matrix."""

    def __init__(self, times: np.ndarray, members: list[int], values: np.ndarray):
        self.times = times
        self.members = members
        self.Y = values  # (n_times, n_members)


def _group(series: Sequence[SampledSeries]) -> list[_Group]:
    groups: dict[bytes, list[int]] = {}
    for i, s in enumerate(series):
        groups.setdefault(s.times.tobytes(), []).append(i)
    out = []
    for idx in groups.values():
        t = series[idx[0]].times
        out.append(_Group(t, idx, np.column_stack([series[i].values for i in idx])))
    return out


def _fit_groups(groups, basis: SplineBasis, cfg: SmoothConfig, lam: float | None, log_grid=None):
    """Fit every group with one basis; return per-curve coeffs and scores.

    Exactly one of ``lam`` / ``log_grid`` is used.  When a grid is given the
    pooled GCV picks the weight.
    """
    P = penalty(basis, cfg.penalty_deriv) if basis.order > cfg.penalty_deriv else None
    designs = []
    for g in groups:
        if not np.all(basis.domain.contains(g.times)):
            raise DomainError("series times fall outside the basis domain")
        Phi = eval_basis(basis, g.times)
        designs.append(PenalizedDesign(Phi, [P] if P is not None else []))

    if log_grid is not None:
        if P is None:
            raise ValueError("gcv rule needs penalty_deriv < basis order")
        d0 = max(designs, key=lambda d: d.n)
        grid = sorted(relative_grid(d0, 0, log_grid), reverse=True)
        best, best_lam = np.inf, None
        for lam_c in grid:
            try:
                score = np.mean(
                    [_gcv_group(d, g.Y, lam_c) for d, g in zip(designs, groups)], dtype=float
                )
            except RankDeficientError:
                continue
            if best_lam is None or score < best - 1e-9 * abs(best):
                best, best_lam = score, lam_c
        if best_lam is None:
            raise RankDeficientError(["coeffs"], "no smoothing parameter gives a solvable fit")
        lam = best_lam

    lams = (lam,) if P is not None else ()
    coeffs = {}
    loo = {}
    edfs = []
    for d, g in zip(designs, groups):
        sol = d.solve(g.Y[:, 0], lams)
        op = d.operator(sol)
        C = op @ g.Y
        h = d.leverages(sol)
        R = g.Y - d.Z @ C
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = 1.0 - h
            ok = denom > 1e-10
            scores = np.where(
                ok.all(), np.mean((R / np.where(ok, denom, 1.0)[:, None]) ** 2, axis=0), np.inf
            )
        for j, i in enumerate(g.members):
            coeffs[i] = C[:, j]
            loo[i] = float(scores[j])
        edfs.append(sol.edf)
    return coeffs, loo, lam, float(np.mean(edfs))


def _gcv_group(d: PenalizedDesign, Y: np.ndarray, lam: float) -> float:
    sol = d.solve(Y[:, 0], (lam,))
    C = d.operator(sol) @ Y
    R = Y - d.Z @ C
    denom = (d.n - sol.edf) ** 2
    if denom <= 0:
        return np.inf
    return float(np.mean(d.n * np.sum(R**2, axis=0) / denom))


def smooth_batch(series: Sequence[SampledSeries], cfg: SmoothConfig, labels=None):
    """Smooth several series with one shared basis and roughness weight.

    The basis (or weight) is selected with the pooled criterion, i.e. the
    mean over curves of the per-curve score.  Returns ``(curves, diagnostics)``.
    """
    series = list(series)
    if not series:
        raise ValueError("empty set of series")
    labels = list(labels) if labels is not None else [None] * len(series)
    groups = _group(series)
    for s in series:
        if s.times.size < cfg.basis.dim and cfg.rule == "fixed" and cfg.lam == 0:
            warnings.warn("series shorter than basis dimension; fit is not identifiable")
            break

    best = None
    scores = {}
    failure = None
    for basis in cfg.candidates():
        try:
            if cfg.rule == "gcv":
                coeffs, loo, lam, edf = _fit_groups(groups, basis, cfg, None, cfg.log_lambda_grid)
            else:
                coeffs, loo, lam, edf = _fit_groups(groups, basis, cfg, cfg.lam)
        except RankDeficientError as exc:
            if cfg.rule == "loocv" and len(cfg.candidates()) > 1:
                failure = exc
                scores[len(basis.interior_knots)] = np.inf
                continue
            raise
        pooled = float(np.mean(list(loo.values())))
        scores[len(basis.interior_knots)] = pooled
        # candidates come in ascending knot count: strict improvement needed
        if best is None or pooled < best[0] - 1e-12 * abs(best[0]):
            best = (pooled, basis, coeffs, lam, edf)
    if best is None:
        raise failure
    pooled, basis, coeffs, lam, edf = best
    curves = [FunctionalDatum(basis, coeffs[i], labels[i]) for i in range(len(series))]
    diag = SmoothDiagnostics(lam, len(basis.interior_knots), pooled, edf, scores)
    return curves, diag


def smooth(series: SampledSeries, cfg: SmoothConfig, label=None):
    """Smooth one series; returns ``(FunctionalDatum, SmoothDiagnostics)``."""
    curves, diag = smooth_batch([series], cfg, [label])
    return curves[0], diag
