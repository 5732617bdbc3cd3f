"""Blocked cross-validation, synthetic data and coverage experiments."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .dataio import DailyRecord, DailyValue, HourlyRecord, _year_days

__all__ = [
    "FoldPlan",
    "make_folds",
    "CrossValReport",
    "ModelAdapter",
    "cross_validate",
    "compare_models",
    "SyntheticDGP",
    "HourlyDataset",
    "DailyDataset",
    "simulate",
    "double_bump",
    "coverage_experiment",
    "config_digest",
]


def config_digest(config) -> str:
    """Stable short digest of a JSON-serialisable configuration."""
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- folds


@dataclass(frozen=True)
class FoldPlan:
    fold_ids: np.ndarray  # calendar year of each observation
    years: tuple

    @property
    def n_folds(self) -> int:
        return len(self.years)

    def split(self, k: int):
        test = np.flatnonzero(self.fold_ids == self.years[k])
        train = np.flatnonzero(self.fold_ids != self.years[k])
        return train, test


def make_folds(dates) -> FoldPlan:
    """One fold per calendar year present in ``dates``."""
    dates = list(dates)
    if not dates:
        raise ValueError("no dates to split into folds")
    ids = np.array([d.year for d in dates])
    return FoldPlan(ids, tuple(sorted(set(ids.tolist()))))


# ---------------------------------------------------------------- CV


class ModelAdapter(Protocol):
    """What :func:`cross_validate` needs from a model.

    ``fit`` trains on the observations ``train_idx`` of ``data``;
    ``predict`` returns count-scale predictions for ``test_idx``.
    """

    name: str
    log_offset: float
    trend: object

    def fit(self, data, train_idx: np.ndarray) -> "ModelAdapter": ...

    def predict(self, data, test_idx: np.ndarray) -> np.ndarray: ...


@dataclass
class CrossValReport:
    model_name: str
    fold_labels: list
    per_fold_rmse: np.ndarray
    fold_sse: np.ndarray
    fold_n: np.ndarray
    overall_rmse: float
    n_obs: int
    config_digest: str

    def rows(self):
        for lab, r, s, n in zip(self.fold_labels, self.per_fold_rmse, self.fold_sse, self.fold_n):
            yield {"model": self.model_name, "fold": lab, "rmse": float(r), "sse": float(s), "n": int(n)}


def cross_validate(adapter: ModelAdapter, data, folds: FoldPlan, digest: str = "") -> CrossValReport:
    """Leave-one-block-out CV with pooled RMSE on the count scale.

    ``data`` must provide ``actual`` (observed counts per observation) and may
    provide ``eval_mask`` (observations that enter the error; all by
    default).
    """
    if folds.n_folds < 2:
        raise ValueError(f"cross-validation needs at least two folds, got {folds.n_folds}")
    actual = np.asarray(data.actual, dtype=float)
    n = actual.size
    if folds.fold_ids.size != n:
        raise ValueError("fold plan and data disagree on the number of observations")
    mask = np.asarray(getattr(data, "eval_mask", np.ones(n, bool)))
    sse, counts = [], []
    for k in range(folds.n_folds):
        train, test = folds.split(k)
        if test.size == 0:
            raise ValueError(f"fold {folds.years[k]} has no test observations")
        if np.intersect1d(train, test).size or train.size + test.size != n:
            raise AssertionError("train/test leakage in fold plan")
        model = adapter.fit(data, train)
        pred = np.asarray(model.predict(data, test), dtype=float)
        keep = mask[test]
        err = pred[keep] - actual[test][keep]
        if not np.all(np.isfinite(err)):
            raise ValueError(f"{adapter.name}: non-finite predictions in fold {folds.years[k]}")
        sse.append(float(err @ err))
        counts.append(int(keep.sum()))
    sse = np.array(sse)
    counts = np.array(counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_fold = np.sqrt(sse / counts)
    total = int(counts.sum())
    return CrossValReport(
        model_name=adapter.name,
        fold_labels=list(folds.years),
        per_fold_rmse=per_fold,
        fold_sse=sse,
        fold_n=counts,
        overall_rmse=float(math.sqrt(sse.sum() / total)),
        n_obs=total,
        config_digest=digest,
    )


def compare_models(adapters: Sequence[ModelAdapter], data, folds: FoldPlan, digest: str = "") -> list[CrossValReport]:
    """Cross-validate several models, asserting they share response and trend."""
    adapters = list(adapters)
    ref = adapters[0]
    for a in adapters[1:]:
        if a.log_offset != ref.log_offset or a.trend != ref.trend:
            raise ValueError(
                f"models {ref.name!r} and {a.name!r} use different response transforms or trend specs"
            )
    return [cross_validate(a, data, folds, digest) for a in adapters]


# ---------------------------------------------------------------- synthetic data


def double_bump(s, amplitude=0.025, centers=(8.0, 19.0), width=1.5):
    """Morning/evening bump coefficient curve on [0, 24]."""
    s = np.asarray(s, dtype=float)
    return amplitude * sum(np.exp(-0.5 * ((s - c) / width) ** 2) for c in centers)


_SUMMER_DEFAULTS = {
    "start_year": 2007,
    "baseline": math.log(17.0),
    "seasonal_mean": 21.0,
    "seasonal_amplitude": 4.0,
    "daily_ar": 0.7,
    "daily_sd": 1.0,
    "diurnal_amplitude": 7.0,
    "diurnal_amplitude_sd": 2.0,
    "diurnal_phase_sd": 3.0,
    "hourly_ar": 0.6,
    "hourly_sd": 0.8,
    "bump_amplitude": 0.025,
    "scalar_slope": 0.03,
    "trend_amplitude": 0.0,
}

_ANNUAL_DEFAULTS = {
    "start_year": 1981,
    "baseline": math.log(17.0),
    "baseline_amplitude": 0.12,
    "temp_mean": 6.0,
    "temp_amplitude": 15.0,
    "daily_ar": 0.8,
    "daily_sd": 3.0,
    "lag_max": 60,
    "effect_scale": 0.004,
    "effect_decay": 15.0,
    "season_contrast": 0.8,
    "season_peak": 290.0,
    "trend_amplitude": 0.03,
}


@dataclass(frozen=True)
class SyntheticDGP:
    """Data-generating process for synthetic validation data.

    ``kind``: ``sflm_truth`` (double-bump coefficient on the previous day's
    hourly curve), ``scalar_truth`` (linear effect of the previous day's
    mean), ``null`` (constant rate) or ``fflm_truth`` (annual curves with a
    lag-window surface).  ``noise_sd`` adds Gaussian noise on the log rate;
    ``count_law`` is ``poisson`` or ``round``.  All defaults are illustrative
    mid-latitude values.
    """

    kind: str = "sflm_truth"
    params: dict = field(default_factory=dict)
    noise_sd: float = 0.0
    seed: int = 0
    count_law: str = "poisson"

    def __post_init__(self):
        if self.kind not in ("sflm_truth", "scalar_truth", "null", "fflm_truth"):
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        if self.count_law not in ("poisson", "round"):
            raise ValueError(f"unknown count law {self.count_law!r}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        base = _ANNUAL_DEFAULTS if self.kind == "fflm_truth" else _SUMMER_DEFAULTS
        unknown = set(self.params) - set(base)
        if unknown:
            raise ValueError(f"unknown DGP parameter(s): {sorted(unknown)}")

    def resolved(self) -> dict:
        base = _ANNUAL_DEFAULTS if self.kind == "fflm_truth" else _SUMMER_DEFAULTS
        return {**base, **self.params}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HourlyDataset:
    hourly: list
    counts: list
    truth: dict


@dataclass
class DailyDataset:
    daily_temps: list
    counts: list
    truth: dict


def _ar1(rng, n: int, phi: float, sd: float) -> np.ndarray:
    e = rng.normal(0.0, sd * math.sqrt(1 - phi**2), size=n)
    out = np.empty(n)
    out[0] = rng.normal(0.0, sd)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + e[i]
    return out


def _draw_counts(rng, eta: np.ndarray, law: str) -> np.ndarray:
    if not np.all(np.isfinite(eta)):
        raise ValueError("non-finite linear predictor")
    rate = np.exp(eta)
    if law == "round":
        return np.rint(rate).astype(int)
    return rng.poisson(rate)


def _simulate_summer(dgp: SyntheticDGP, n_units: int, rng) -> HourlyDataset:
    p = dgp.resolved()
    days = []
    for k in range(n_units):
        y = p["start_year"] + k
        d = dt.date(y, 5, 31)
        while d <= dt.date(y, 8, 31):
            days.append(d)
            d += dt.timedelta(days=1)
    nd = len(days)
    doy = np.array([d.timetuple().tm_yday for d in days], dtype=float)
    seasonal = p["seasonal_mean"] + p["seasonal_amplitude"] * np.sin(2 * np.pi * (doy - 110) / 365)
    anomaly = _ar1(rng, nd, p["daily_ar"], p["daily_sd"])
    amp = np.maximum(p["diurnal_amplitude"] + p["diurnal_amplitude_sd"] * rng.normal(size=nd), 0.0)
    hours = np.arange(24.0)
    phase = p["diurnal_phase_sd"] * rng.normal(size=nd)
    diurnal = np.sin(2 * np.pi * (hours[None, :] - 9.0 - phase[:, None]) / 24.0)
    noise = _ar1(rng, nd * 24, p["hourly_ar"], p["hourly_sd"]).reshape(nd, 24)
    temps = (seasonal + anomaly)[:, None] + amp[:, None] * diurnal + noise

    hourly = [
        HourlyRecord(dt.datetime(d.year, d.month, d.day, h), float(temps[i, h]))
        for i, d in enumerate(days)
        for h in range(24)
    ]
    # exposure enters as the departure from the hourly climatology
    ref = seasonal.mean() + p["diurnal_amplitude"] * np.sin(2 * np.pi * (hours - 9.0) / 24.0)
    beta = np.zeros(24)
    slope = 0.0
    if dgp.kind == "sflm_truth":
        beta = double_bump(hours, p["bump_amplitude"])
    elif dgp.kind == "scalar_truth":
        slope = p["scalar_slope"]
    # response day i uses exposure day i-1; the first day of each block is exposure only
    resp = [i for i, d in enumerate(days) if d.month != 5]
    n_resp = len(resp)
    idx = np.arange(n_resp, dtype=float)
    eta = np.full(n_resp, p["baseline"])
    prev = np.array(resp) - 1
    eta += (temps[prev] - ref) @ beta
    eta += slope * (temps[prev].mean(axis=1) - seasonal.mean())
    eta += p["trend_amplitude"] * np.sin(2 * np.pi * idx / max(n_resp, 1))
    if dgp.noise_sd > 0:
        eta += rng.normal(0.0, dgp.noise_sd, size=n_resp)
    y = _draw_counts(rng, eta, dgp.count_law)
    counts = [DailyRecord(days[i], int(c)) for i, c in zip(resp, y)]
    truth = {
        "kind": dgp.kind,
        "beta_hours": hours,
        "beta_values": beta,
        "scalar_slope": slope,
        "hourly_reference": ref,
        "baseline": p["baseline"],
        "eta": eta,
    }
    return HourlyDataset(hourly, counts, truth)


def annual_surface(s, t, p: dict) -> np.ndarray:
    """True lag-window surface of the annual DGP; zero outside ``[t-L, t]``."""
    s = np.asarray(s, dtype=float)[:, None]
    t = np.asarray(t, dtype=float)[None, :]
    lag = t - s
    season = 1.0 + p["season_contrast"] * np.cos(2 * np.pi * (t - p["season_peak"]) / 365.0)
    val = -p["effect_scale"] * season * np.exp(-lag / p["effect_decay"])
    return np.where((lag >= 0) & (lag <= p["lag_max"]), val, 0.0)


def _simulate_annual(dgp: SyntheticDGP, n_units: int, rng) -> DailyDataset:
    p = dgp.resolved()
    grid = np.arange(365.0)
    clim = p["temp_mean"] + p["temp_amplitude"] * np.sin(2 * np.pi * (grid - 110) / 365)
    anomaly = _ar1(rng, n_units * 365, p["daily_ar"], p["daily_sd"]).reshape(n_units, 365)
    temps = clim[None, :] + anomaly
    beta0 = p["baseline"] + p["baseline_amplitude"] * np.cos(2 * np.pi * (grid - 15) / 365)
    W = annual_surface(grid, grid, p)  # (s, t)
    eff = anomaly @ W  # sum over s of anomaly(s) * beta(s, t), unit day spacing
    years = np.arange(n_units)
    trend = p["trend_amplitude"] * np.sin(2 * np.pi * years / max(n_units, 2))
    eta = beta0[None, :] + eff + trend[:, None]
    if dgp.noise_sd > 0:
        eta = eta + rng.normal(0.0, dgp.noise_sd, size=eta.shape)
    y = _draw_counts(rng, eta.ravel(), dgp.count_law).reshape(eta.shape)
    temps_out, counts = [], []
    for k in range(n_units):
        for d, day in enumerate(_year_days(p["start_year"] + k)):
            temps_out.append(DailyValue(day, float(temps[k, d])))
            counts.append(DailyRecord(day, int(y[k, d])))
    truth = {
        "kind": dgp.kind,
        "beta0": beta0,
        "eta": eta,
        "climatology": clim,
        "params": p,
    }
    return DailyDataset(temps_out, counts, truth)


def simulate(dgp: SyntheticDGP, n_units: int, stream: int | None = None):
    """Generate a synthetic data set.

    ``n_units`` is the number of summers (hourly kinds) or years
    (``fflm_truth``).  The output depends only on ``(dgp, n_units, stream)``.
    """
    if n_units < 1:
        raise ValueError("n_units must be positive")
    key = [int(dgp.seed)] if stream is None else [int(dgp.seed), int(stream)]
    rng = np.random.default_rng(key)
    if dgp.kind == "fflm_truth":
        return _simulate_annual(dgp, n_units, rng)
    return _simulate_summer(dgp, n_units, rng)


# ---------------------------------------------------------------- coverage


def coverage_experiment(
    dgp: SyntheticDGP,
    n_monte_carlo: int,
    n_reps: int = 500,
    level: float = 0.95,
    n_grid: int = 25,
    n_units: int = 5,
    sflm_spec=None,
    smooth_cfg=None,
    atol: float = 1e-10,
):
    """Empirical pointwise coverage of wild-bootstrap bands for ``beta1``.

    Each Monte-Carlo replicate simulates a data set (stream ``r``), fits the
    scalar-on-function model and builds a band; the truth is the DGP's
    coefficient curve (zero unless ``sflm_truth``).  Returns
    ``(grid, coverage)``.
    """
    from .adapters import prepare_summer
    from .sflm import SflmSpec, fit_sflm, wild_bootstrap_band

    if n_monte_carlo < 10:
        raise ValueError("coverage needs at least 10 Monte-Carlo replicates")
    if dgp.kind == "fflm_truth":
        raise ValueError("coverage experiments use a scalar-response DGP")
    spec = sflm_spec or SflmSpec()
    d = spec.beta_basis.domain
    grid = np.linspace(d.lo, d.hi, n_grid)
    truth = double_bump(grid, dgp.resolved()["bump_amplitude"]) if dgp.kind == "sflm_truth" else np.zeros(n_grid)
    hits = np.zeros(n_grid)
    for r in range(n_monte_carlo):
        data = prepare_summer(simulate(dgp, n_units, stream=r), smooth_cfg)
        fit = fit_sflm(data.actual, data.curves, data.index, spec)
        band = wild_bootstrap_band(
            fit, data.actual, data.curves, data.index, n_reps=n_reps, level=level, seed=r, grid=grid
        )
        hits += (band.lower - atol <= truth) & (truth <= band.upper + atol)
    return grid, hits / n_monte_carlo
