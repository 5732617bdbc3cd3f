"""Run configuration: nested defaults, YAML overrides, validation and digest.

Precedence is config file > command-line flags > built-in defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .adapters import MODEL_NAMES
from .basis import Interval, make_equispaced_basis
from .errors import ConfigError
from .fflm import FflmSpec
from .sflm import SflmSpec
from .smoother import SmoothConfig
from .trend import TrendSpec

__all__ = ["DEFAULTS", "load_config", "resolve", "digest", "sflm_spec", "fflm_spec", "smoothing"]

_LOG_GRID = [-8, -7, -6, -5, -4, -3, -2, -1, 0, 1, 2]


def _smoothing(n_interior, candidates, domain):
    return {
        "n_interior": n_interior,
        "rule": "loocv",
        "lambda": 0.0,
        "candidate_knot_counts": candidates,
        "log_lambda_grid": list(_LOG_GRID),
        "domain": domain,
    }


DEFAULTS: dict = {
    "seed": 0,
    "data": {"months": [6, 7, 8], "min_readings": 18, "tolerance": 0, "max_interp_gap": 0},
    "smoothing": {
        "hourly": _smoothing(5, [3, 4, 5, 6, 7, 8, 10, 12], [0.0, 24.0]),
        "annual": _smoothing(24, [8, 12, 16, 24, 32, 48, 64], [0.0, 365.0]),
        "mortality": _smoothing(8, [2, 3, 4, 6, 8, 10, 12, 16], [0.0, 365.0]),
    },
    "sflm": {
        "beta_knots": 10,
        "lambda": "gcv",
        "log_lambda_grid": list(_LOG_GRID),
        "log_offset": 0.0,
        "trend": {"kind": "natural_cubic", "knot_spacing": 90.0, "knots": None},
    },
    "fflm": {
        "s_knots": 12,
        "t_knots": 12,
        "lag_max": 60.0,
        "lambda_s": "gcv",
        "lambda_t": "gcv",
        "log_lambda_grid_s": [-6, -4.5, -3, -1.5, 0],
        "log_lambda_grid_t": [-6, -4.5, -3, -1.5, 0],
        "log_offset": 0.0,
        "year_trend": {"kind": "natural_cubic", "knot_spacing": 10.0, "knots": None},
    },
    "gam": {"smooth_df": 10, "log_lambda_grid": list(range(-8, 5))},
    "dlnm": {"temp_knot_pcts": [10, 75, 90], "n_lag_knots": 3, "lambda": 0.0},
    "bootstrap": {"n_reps": 500, "level": 0.95, "law": "rademacher", "grid_points": 97},
    "cv": {"models": ["sflm", "gam_min", "gam_mean", "gam_max", "gam_dr"]},
    "simulate": {"kind": "sflm_truth", "n_units": 5, "noise_sd": 0.0, "count_law": "poisson", "params": {}},
    "export": {"grid_points": 97, "surface_grid": 50},
}

# keys whose value is a free-form mapping (not validated key by key)
_OPEN = {("simulate", "params")}
# keys accepting either a number or the string "gcv"
_LAMBDA = {("sflm", "lambda"), ("fflm", "lambda_s"), ("fflm", "lambda_t"), ("dlnm", "lambda")}
# keys that may be null
_NULLABLE = {("sflm", "trend", "knots"), ("fflm", "year_trend", "knots"), ("sflm", "trend", "knot_spacing"), ("fflm", "year_trend", "knot_spacing")}


def _check(default, given, path, problems):
    for key, val in given.items():
        here = path + (key,)
        dotted = ".".join(map(str, here))
        if not isinstance(default, dict) or key not in default:
            problems.append(f"{dotted}: unknown key")
            continue
        ref = default[key]
        if here in _OPEN:
            if not isinstance(val, dict):
                problems.append(f"{dotted}: expected a mapping")
            continue
        if isinstance(ref, dict):
            if not isinstance(val, dict):
                problems.append(f"{dotted}: expected a mapping")
            else:
                _check(ref, val, here, problems)
            continue
        if val is None:
            if here not in _NULLABLE:
                problems.append(f"{dotted}: may not be null")
            continue
        if here in _LAMBDA:
            if val != "gcv" and (isinstance(val, bool) or not isinstance(val, (int, float)) or val < 0):
                problems.append(f"{dotted}: expected a nonnegative number or 'gcv'")
            continue
        if isinstance(ref, bool):
            ok = isinstance(val, bool)
        elif isinstance(ref, (int, float)) or ref is None:
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
        elif isinstance(ref, list):
            ok = isinstance(val, list)
        else:
            ok = isinstance(val, type(ref))
        if not ok:
            problems.append(f"{dotted}: expected {type(ref).__name__}, got {type(val).__name__}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _semantic(cfg: dict, problems: list):
    unknown = [m for m in cfg["cv"]["models"] if m not in MODEL_NAMES]
    if unknown:
        problems.append(f"cv.models: unknown model(s) {unknown}")
    if not 0 < cfg["bootstrap"]["level"] < 1:
        problems.append("bootstrap.level: must lie in (0, 1)")
    if cfg["bootstrap"]["n_reps"] < 2:
        problems.append("bootstrap.n_reps: must be at least 2")
    if cfg["bootstrap"]["law"] not in ("rademacher", "mammen"):
        problems.append("bootstrap.law: expected 'rademacher' or 'mammen'")
    if cfg["data"]["max_interp_gap"] > 3:
        problems.append("data.max_interp_gap: at most 3 consecutive days may be interpolated")
    for name, sc in cfg["smoothing"].items():
        if sc["rule"] not in ("fixed", "gcv", "loocv"):
            problems.append(f"smoothing.{name}.rule: expected fixed, gcv or loocv")
    if cfg["simulate"]["kind"] not in ("sflm_truth", "fflm_truth", "scalar_truth", "null"):
        problems.append("simulate.kind: expected sflm_truth, fflm_truth, scalar_truth or null")
    if not cfg["fflm"]["lag_max"] > 0:
        problems.append("fflm.lag_max: must be positive")


def resolve(file_cfg: dict | None = None, flags: dict | None = None) -> dict:
    """Defaults, then flag overrides, then the config file; all problems raised together."""
    problems: list[str] = []
    for source in (flags or {}, file_cfg or {}):
        if not isinstance(source, dict):
            raise ConfigError(["<root>: configuration must be a mapping"])
        _check(DEFAULTS, source, (), problems)
    if problems:
        raise ConfigError(problems)
    cfg = _merge(_merge(DEFAULTS, flags or {}), file_cfg or {})
    _semantic(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> dict:
    """Parse a YAML config file (empty file means no overrides)."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return data or {}


def digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _lam(v):
    return v if v == "gcv" else float(v)


def _trend(d: dict) -> TrendSpec:
    return TrendSpec.from_dict(d)


def smoothing(cfg: dict, which: str) -> SmoothConfig:
    sc = cfg["smoothing"][which]
    basis = make_equispaced_basis("bspline", 4, int(sc["n_interior"]), Interval(*sc["domain"]))
    return SmoothConfig(
        basis=basis,
        rule=sc["rule"],
        lam=float(sc["lambda"]),
        candidate_knot_counts=tuple(sc["candidate_knot_counts"]),
        log_lambda_grid=tuple(sc["log_lambda_grid"]),
    )


def sflm_spec(cfg: dict) -> SflmSpec:
    c = cfg["sflm"]
    dom = Interval(*cfg["smoothing"]["hourly"]["domain"])
    return SflmSpec(
        beta_basis=make_equispaced_basis("bspline", 4, int(c["beta_knots"]), dom),
        trend=_trend(c["trend"]),
        lam=_lam(c["lambda"]),
        log_lambda_grid=tuple(c["log_lambda_grid"]),
        log_offset=float(c["log_offset"]),
    )


def fflm_spec(cfg: dict) -> FflmSpec:
    c = cfg["fflm"]
    dom = Interval(*cfg["smoothing"]["annual"]["domain"])
    return FflmSpec(
        s_basis=make_equispaced_basis("bspline", 4, int(c["s_knots"]), dom),
        t_basis=make_equispaced_basis("bspline", 4, int(c["t_knots"]), dom),
        year_trend=_trend(c["year_trend"]),
        lag_max=float(c["lag_max"]),
        lam_s=_lam(c["lambda_s"]),
        lam_t=_lam(c["lambda_t"]),
        log_lambda_grid_s=tuple(c["log_lambda_grid_s"]),
        log_lambda_grid_t=tuple(c["log_lambda_grid_t"]),
        log_offset=float(c["log_offset"]),
    )
