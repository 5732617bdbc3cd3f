"""Fitted models to and from versioned JSON records."""

from __future__ import annotations

import numpy as np

from .basis import SplineBasis, penalty
from .baselines import DlnmFit, ScalarBaselineFit
from .dataio import load_record, save_record
from .errors import DataFormatError
from .fflm import FflmFit, FflmSpec
from .sflm import SflmFit, SflmSpec
from .smoother import FunctionalDatum
from .trend import TrendSpec

__all__ = ["fit_to_payload", "fit_from_payload", "save_fit", "load_fit"]


def _b(basis):
    return None if basis is None else basis.to_dict()


def _unb(d):
    return None if d is None else SplineBasis.from_dict(d)


def _sflm_spec(spec: SflmSpec) -> dict:
    return {
        "beta_basis": spec.beta_basis.to_dict(),
        "trend": spec.trend.to_dict(),
        "lam": spec.lam,
        "log_lambda_grid": list(spec.log_lambda_grid),
        "log_offset": spec.log_offset,
        "penalty_deriv": spec.penalty_deriv,
    }


def _fflm_spec(spec: FflmSpec) -> dict:
    return {
        "s_basis": spec.s_basis.to_dict(),
        "t_basis": spec.t_basis.to_dict(),
        "year_trend": spec.year_trend.to_dict(),
        "lag_max": spec.lag_max,
        "t_grid": None if spec.t_grid is None else list(spec.t_grid),
        "lam_s": spec.lam_s,
        "lam_t": spec.lam_t,
        "log_lambda_grid_s": list(spec.log_lambda_grid_s),
        "log_lambda_grid_t": list(spec.log_lambda_grid_t),
        "log_offset": spec.log_offset,
    }


def fit_to_payload(fit) -> tuple[str, dict]:
    """``(kind, payload)`` describing ``fit`` completely."""
    if isinstance(fit, SflmFit):
        return "sflm", {
            "spec": _sflm_spec(fit.spec),
            "beta0": fit.beta0,
            "trend_coeffs": fit.trend_coeffs,
            "beta1_coeffs": fit.beta1.coeffs,
            "lam": fit.lam,
            "penalty": penalty(fit.spec.beta_basis, fit.spec.penalty_deriv),
            "residuals": fit.residuals,
            "fitted": fit.fitted,
            "trend_basis": _b(fit.trend_basis),
            "exposure_basis": fit.exposure_basis.to_dict(),
            "edf": fit.edf,
            "design_hash": fit.design_hash,
        }
    if isinstance(fit, FflmFit):
        return "fflm", {
            "spec": _fflm_spec(fit.spec),
            "beta0_coeffs": fit.beta0_coeffs,
            "surface": fit.surface,
            "active": fit.active,
            "year_trend_coeffs": fit.year_trend_coeffs,
            "lambdas": list(fit.lambdas),
            "penalty_s": penalty(fit.spec.s_basis),
            "penalty_t": penalty(fit.spec.t_basis),
            "residual_matrix": fit.residual_matrix,
            "trend_basis": _b(fit.trend_basis),
            "edf": fit.edf,
        }
    if isinstance(fit, ScalarBaselineFit):
        return "gam", {
            "kind": fit.kind,
            "intercept": fit.intercept,
            "trend_coeffs": fit.trend_coeffs,
            "smooth_coeffs": fit.smooth_coeffs,
            "exposure_basis": fit.exposure_basis.to_dict(),
            "trend_basis": _b(fit.trend_basis),
            "lam": fit.lam,
            "penalty": penalty(fit.exposure_basis)[1:, 1:],
            "edf": fit.edf,
            "log_offset": fit.log_offset,
            "fitted": fit.fitted,
        }
    if isinstance(fit, DlnmFit):
        return "dlnm", {
            "intercept": fit.intercept,
            "trend_coeffs": fit.trend_coeffs,
            "cb_coeffs": fit.cb_coeffs,
            "trend_basis": _b(fit.trend_basis),
            "lam": fit.lam,
            "log_offset": fit.log_offset,
            "temp_basis": fit.temp_basis.to_dict(),
            "lag_basis": fit.lag_basis.to_dict(),
        }
    raise TypeError(f"cannot serialise {type(fit).__name__}")


def fit_from_payload(kind: str, p: dict):
    a = np.asarray
    if kind == "sflm":
        s = p["spec"]
        spec = SflmSpec(
            beta_basis=SplineBasis.from_dict(s["beta_basis"]),
            trend=TrendSpec.from_dict(s["trend"]),
            lam=s["lam"],
            log_lambda_grid=tuple(s["log_lambda_grid"]),
            log_offset=s["log_offset"],
            penalty_deriv=s["penalty_deriv"],
        )
        return SflmFit(
            beta0=p["beta0"],
            trend_coeffs=a(p["trend_coeffs"], float),
            beta1=FunctionalDatum(spec.beta_basis, a(p["beta1_coeffs"], float), "beta1"),
            lam=p["lam"],
            residuals=a(p["residuals"], float),
            fitted=a(p["fitted"], float),
            spec=spec,
            trend_basis=_unb(p["trend_basis"]),
            exposure_basis=SplineBasis.from_dict(p["exposure_basis"]),
            edf=p["edf"],
            design_hash=p["design_hash"],
        )
    if kind == "fflm":
        s = p["spec"]
        spec = FflmSpec(
            s_basis=SplineBasis.from_dict(s["s_basis"]),
            t_basis=SplineBasis.from_dict(s["t_basis"]),
            year_trend=TrendSpec.from_dict(s["year_trend"]),
            lag_max=s["lag_max"],
            t_grid=None if s["t_grid"] is None else tuple(s["t_grid"]),
            lam_s=s["lam_s"],
            lam_t=s["lam_t"],
            log_lambda_grid_s=tuple(s["log_lambda_grid_s"]),
            log_lambda_grid_t=tuple(s["log_lambda_grid_t"]),
            log_offset=s["log_offset"],
        )
        return FflmFit(
            beta0_coeffs=a(p["beta0_coeffs"], float),
            surface=a(p["surface"], float),
            active=a(p["active"], bool),
            year_trend_coeffs=a(p["year_trend_coeffs"], float),
            lambdas=tuple(p["lambdas"]),
            residual_matrix=a(p["residual_matrix"], float),
            spec=spec,
            trend_basis=_unb(p["trend_basis"]),
            edf=p["edf"],
        )
    if kind == "gam":
        return ScalarBaselineFit(
            kind=p["kind"],
            intercept=p["intercept"],
            trend_coeffs=a(p["trend_coeffs"], float),
            smooth_coeffs=a(p["smooth_coeffs"], float),
            exposure_basis=SplineBasis.from_dict(p["exposure_basis"]),
            trend_basis=_unb(p["trend_basis"]),
            lam=p["lam"],
            edf=p["edf"],
            log_offset=p["log_offset"],
            fitted=a(p["fitted"], float),
        )
    if kind == "dlnm":
        return DlnmFit(
            intercept=p["intercept"],
            trend_coeffs=a(p["trend_coeffs"], float),
            cb_coeffs=a(p["cb_coeffs"], float),
            trend_basis=_unb(p["trend_basis"]),
            lam=p["lam"],
            log_offset=p["log_offset"],
            temp_basis=SplineBasis.from_dict(p["temp_basis"]),
            lag_basis=SplineBasis.from_dict(p["lag_basis"]),
        )
    raise DataFormatError(f"unknown fit kind {kind!r}")


def save_fit(path, fit, config_digest: str = "", extra: dict | None = None):
    kind, payload = fit_to_payload(fit)
    if extra:
        payload = {**payload, "extra": extra}
    save_record(path, f"fit:{kind}", payload, config_digest)


def load_fit(path, kind: str | None = None):
    """Load a saved fit; ``kind`` (sflm, fflm, gam, dlnm) is checked when given."""
    rec = load_record(path)
    stored = str(rec.get("kind", ""))
    if not stored.startswith("fit:"):
        raise DataFormatError(f"{path}: not a fit record ({stored!r})")
    stored = stored[4:]
    if kind is not None and stored != kind:
        raise DataFormatError(f"{path}: expected a {kind} fit, found {stored}")
    return fit_from_payload(stored, rec["payload"])
