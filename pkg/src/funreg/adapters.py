"""Prepared data sets and model adapters used by cross-validation and the CLI.

Two layouts exist:

* :class:`SummerData` -- daily counts paired with the previous day's hourly
  temperature curve (scalar response).
* :class:`AnnualData` -- years x 365 daily counts and temperatures (curve
  response).

Exposure smoothing uses only exposure values, so it is done once per data
set.  Anything that touches the response (mortality smoothing, spline
domains, smoothing parameters) is recomputed from the training folds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import Interval, make_equispaced_basis
from .baselines import (
    SUMMARY_KINDS,
    build_crossbasis,
    fit_dlnm,
    fit_scalar_baseline,
    predict_dlnm,
    predict_scalar_baseline,
    summarize_day,
)
from .dataio import align_summer_pairs, build_annual_matrix
from .evalharness import DailyDataset, HourlyDataset, make_folds
from .fflm import FflmSpec, fit_fflm, predict_fflm
from .sflm import SflmSpec, fit_sflm, predict_sflm
from .smoother import SampledSeries, SmoothConfig, smooth_batch
from .trend import TrendSpec

__all__ = [
    "default_hourly_smoothing",
    "default_annual_smoothing",
    "default_mortality_smoothing",
    "SummerData",
    "AnnualData",
    "prepare_summer",
    "prepare_annual",
    "SflmAdapter",
    "ScalarAdapter",
    "FflmAdapter",
    "DlnmAdapter",
    "make_adapter",
    "MODEL_NAMES",
]

DAY = Interval(0.0, 24.0)
YEAR = Interval(0.0, 365.0)

MODEL_NAMES = ("sflm", "gam_min", "gam_mean", "gam_max", "gam_dr", "fflm", "dlnm")
SUMMER_MODELS = ("sflm", "gam_min", "gam_mean", "gam_max", "gam_dr")
ANNUAL_MODELS = ("fflm", "dlnm")
_GAM_KIND = {"gam_min": "min", "gam_mean": "mean", "gam_max": "max", "gam_dr": "diurnal_range"}


def default_hourly_smoothing() -> SmoothConfig:
    return SmoothConfig(
        basis=make_equispaced_basis("bspline", 4, 5, DAY),
        rule="loocv",
        candidate_knot_counts=(3, 4, 5, 6, 7, 8, 10, 12),
    )


def default_annual_smoothing() -> SmoothConfig:
    return SmoothConfig(
        basis=make_equispaced_basis("bspline", 4, 24, YEAR),
        rule="loocv",
        candidate_knot_counts=(8, 12, 16, 24, 32, 48, 64),
    )


def default_mortality_smoothing() -> SmoothConfig:
    return SmoothConfig(
        basis=make_equispaced_basis("bspline", 4, 8, YEAR),
        rule="loocv",
        candidate_knot_counts=(2, 3, 4, 6, 8, 10, 12, 16),
    )


# ---------------------------------------------------------------- prepared data


@dataclass
class SummerData:
    dates: list
    actual: np.ndarray
    index: np.ndarray
    curves: list
    summaries: dict
    smoothing: object
    n_dropped: int = 0
    resolution: str = "hourly"

    @property
    def n_obs(self) -> int:
        return self.actual.size

    def folds(self):
        return make_folds(self.dates)


def prepare_summer(data, smooth_cfg: SmoothConfig | None = None, months=(6, 7, 8), min_readings: int = 18) -> SummerData:
    """Align, smooth and summarise a data set of hourly readings and counts.

    ``data`` is a :class:`HourlyDataset` or a pair ``(hourly, counts)``.
    """
    hourly, counts = (data.hourly, data.counts) if isinstance(data, HourlyDataset) else data
    pairs = align_summer_pairs(hourly, counts, months=months, min_readings=min_readings)
    cfg = smooth_cfg or default_hourly_smoothing()
    series = [SampledSeries(t, v) for t, v in zip(pairs.exposure_times, pairs.exposure_values)]
    curves, diag = smooth_batch(series, cfg, labels=pairs.dates)
    summ = [summarize_day(v) for v in pairs.exposure_values]
    summaries = {k: np.array([s[k] for s in summ]) for k in SUMMARY_KINDS}
    return SummerData(
        dates=pairs.dates,
        actual=pairs.counts,
        index=np.arange(len(pairs), dtype=float),
        curves=curves,
        summaries=summaries,
        smoothing=diag,
        n_dropped=pairs.n_dropped,
    )


@dataclass
class AnnualData:
    years: np.ndarray  # calendar year per row
    temps: np.ndarray  # (n_years, 365)
    counts: np.ndarray  # (n_years, 365)
    curves: list  # smoothed temperature per year
    smoothing: object
    lag_max: int = 60
    resolution: str = "daily"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def actual(self) -> np.ndarray:
        return self.counts.ravel()

    @property
    def n_obs(self) -> int:
        return self.counts.size

    @property
    def year_of_obs(self) -> np.ndarray:
        return np.repeat(self.years.astype(float), 365)

    @property
    def eval_mask(self) -> np.ndarray:
        # the first lag_max days of the series have no complete lag history
        # for a distributed-lag model; they are left out for every model
        m = np.ones(self.n_obs, bool)
        m[: self.lag_max] = False
        return m

    @property
    def dates(self):
        from .dataio import _year_days

        return [d for y in self.years for d in _year_days(int(y))]

    def folds(self):
        return make_folds(self.dates)


def prepare_annual(data, years=None, smooth_cfg: SmoothConfig | None = None, lag_max: int = 60, tolerance: int = 0, max_interp_gap: int = 0) -> AnnualData:
    """Build the year x day matrices and smooth the temperature curves.

    ``data`` is a :class:`DailyDataset` or a pair ``(daily_temps, counts)``.
    """
    temps, counts = (data.daily_temps, data.counts) if isinstance(data, DailyDataset) else data
    if years is None:
        years = sorted({r.date.year for r in counts})
    years = np.asarray(years, dtype=int)
    T = build_annual_matrix(temps, years, tolerance, max_interp_gap)
    Y = build_annual_matrix(counts, years, tolerance, max_interp_gap)
    grid = np.arange(365.0)
    cfg = smooth_cfg or default_annual_smoothing()
    curves, diag = smooth_batch([SampledSeries(grid, row) for row in T], cfg, labels=years.tolist())
    return AnnualData(years, T, Y, curves, diag, lag_max=lag_max)


# ---------------------------------------------------------------- adapters


@dataclass
class _Fitted:
    model: object
    predictor: object

    def predict(self, data, test_idx):
        return self.predictor(self.model, data, np.asarray(test_idx))


def _require(data, resolution: str, name: str):
    got = getattr(data, "resolution", None)
    if got != resolution:
        raise ValueError(
            f"model {name!r} needs {resolution} exposures; the data set has {got or 'unknown'} resolution"
        )


@dataclass(frozen=True)
class SflmAdapter:
    spec: SflmSpec = field(default_factory=SflmSpec)
    name: str = "sflm"

    @property
    def log_offset(self):
        return self.spec.log_offset

    @property
    def trend(self):
        return self.spec.trend

    def fit(self, data: SummerData, train_idx):
        _require(data, "hourly", self.name)
        tr = np.asarray(train_idx)
        fit = fit_sflm(data.actual[tr], [data.curves[i] for i in tr], data.index[tr], self.spec)

        def predictor(fit, data, te):
            return predict_sflm(fit, [data.curves[i] for i in te], data.index[te])

        return _Fitted(fit, predictor)


@dataclass(frozen=True)
class ScalarAdapter:
    kind: str = "mean"
    trend: TrendSpec = field(default_factory=TrendSpec)
    smooth_df: int = 10
    log_lambda_grid: tuple = tuple(range(-8, 5))
    log_offset: float = 0.0

    @property
    def name(self) -> str:
        return "gam_dr" if self.kind == "diurnal_range" else f"gam_{self.kind}"

    def fit(self, data: SummerData, train_idx):
        _require(data, "hourly", self.name)
        tr = np.asarray(train_idx)
        x = data.summaries[self.kind]
        fit = fit_scalar_baseline(
            data.actual[tr], x[tr], data.index[tr], self.trend, self.smooth_df,
            self.log_lambda_grid, self.kind, self.log_offset,
        )

        def predictor(fit, data, te):
            return predict_scalar_baseline(fit, data.summaries[self.kind][te], data.index[te])

        return _Fitted(fit, predictor)


def _whole_years(data: AnnualData, idx) -> np.ndarray:
    idx = np.asarray(idx)
    pos = np.unique(idx // 365)
    if idx.size != pos.size * 365:
        raise ValueError("annual models need folds made of whole years")
    return pos


@dataclass(frozen=True)
class FflmAdapter:
    spec: FflmSpec = field(default_factory=FflmSpec)
    mortality_smoothing: SmoothConfig = field(default_factory=default_mortality_smoothing)
    name: str = "fflm"

    @property
    def log_offset(self):
        return self.spec.log_offset

    @property
    def trend(self):
        return self.spec.year_trend

    def fit(self, data: AnnualData, train_idx):
        _require(data, "daily", self.name)
        pos = _whole_years(data, train_idx)
        grid = np.arange(365.0)
        mort, _ = smooth_batch([SampledSeries(grid, data.counts[p]) for p in pos], self.mortality_smoothing)
        fit = fit_fflm(mort, [data.curves[p] for p in pos], data.years[pos], self.spec)

        def predictor(fit, data, te):
            tpos = _whole_years(data, te)
            P = predict_fflm(fit, [data.curves[p] for p in tpos], data.years[tpos])
            row = {p: k for k, p in enumerate(tpos)}
            return P[[row[p] for p in te // 365], te % 365]

        return _Fitted(fit, predictor)


@dataclass(frozen=True)
class DlnmAdapter:
    trend: TrendSpec = field(default_factory=lambda: TrendSpec(knot_spacing=10.0))
    max_lag: int = 60
    temp_knot_pcts: tuple = (10, 75, 90)
    n_lag_knots: int = 3
    lam: float | str = 0.0
    log_offset: float = 0.0
    name: str = "dlnm"

    def crossbasis(self, data: AnnualData):
        key = ("cb", self.max_lag, tuple(self.temp_knot_pcts), self.n_lag_knots)
        if key not in data._cache:
            data._cache[key] = build_crossbasis(
                data.temps.ravel(), self.max_lag, self.temp_knot_pcts, self.n_lag_knots
            )
        return data._cache[key]

    def fit(self, data: AnnualData, train_idx):
        _require(data, "daily", self.name)
        cb = self.crossbasis(data)
        yr = data.year_of_obs
        fit = fit_dlnm(
            data.actual, cb, np.arange(data.n_obs, dtype=float), self.trend,
            rows=np.asarray(train_idx), lam=self.lam, log_offset=self.log_offset, trend_index=yr,
        )

        def predictor(fit, data, te):
            return predict_dlnm(fit, cb, np.arange(data.n_obs, dtype=float), rows=te, trend_index=data.year_of_obs)

        return _Fitted(fit, predictor)


def make_adapter(name: str, sflm_spec: SflmSpec | None = None, fflm_spec: FflmSpec | None = None, **kw):
    """Adapter by model name, with the trend spec shared inside each layout."""
    sflm_spec = sflm_spec or SflmSpec()
    fflm_spec = fflm_spec or FflmSpec()
    if name == "sflm":
        return SflmAdapter(sflm_spec)
    if name in _GAM_KIND:
        return ScalarAdapter(_GAM_KIND[name], sflm_spec.trend, log_offset=sflm_spec.log_offset, **kw.get("gam", {}))
    if name == "fflm":
        mort = kw.get("mortality_smoothing")
        return FflmAdapter(fflm_spec, mort) if mort else FflmAdapter(fflm_spec)
    if name == "dlnm":
        return DlnmAdapter(fflm_spec.year_trend, int(fflm_spec.lag_max), log_offset=fflm_spec.log_offset, **kw.get("dlnm", {}))
    raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
