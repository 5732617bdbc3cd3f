"""Command-line entry point: ``funreg {smooth,fit,bootstrap,cv,simulate}``.

Every tabular output starts with ``# schema_version`` and ``# config_digest``
comment lines; missing values are written as ``NA``.  Each run also writes
``run_summary.json`` (status, timings, digests, resolved config).

Exit codes: 0 success, 2 configuration/usage, 3 input data, 4 numerical
(rank deficiency, domain), 5 other invalid requests.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .adapters import ANNUAL_MODELS, MODEL_NAMES, SUMMER_MODELS, make_adapter, prepare_annual, prepare_summer
from .basis import eval_basis
from .baselines import lag_response, nearest_rank_percentile
from .config import digest, fflm_spec, load_config, resolve, sflm_spec, smoothing
from .dataio import (
    SCHEMA_VERSION,
    build_annual_matrix,
    load_daily_counts,
    load_daily_temps,
    load_hourly_temps,
    save_record,
    write_daily_counts,
    write_daily_temps,
    write_hourly_temps,
)
from .errors import ConfigError, DataFormatError, DomainError, RankDeficientError
from .evalharness import SyntheticDGP, annual_surface, compare_models, double_bump, simulate
from .fflm import eval_surface
from .persist import load_fit, save_fit
from .sflm import wild_bootstrap_band
from .smoother import SampledSeries, smooth_batch

log = logging.getLogger("funreg")

NA = "NA"


class UsageError(ValueError):
    """Bad combination of inputs (e.g. model and data resolution)."""


def _cell(v) -> str:
    if v is None:
        return NA
    if isinstance(v, (float, np.floating)):
        return NA if not np.isfinite(v) else repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path: Path, header, rows, config_digest: str):
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n# config_digest: {config_digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def read_table(path) -> tuple[dict, list[str], list[list[str]]]:
    """Parse a table written by :func:`write_table`: ``(meta, header, rows)``."""
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            meta[k] = v
        else:
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


# ---------------------------------------------------------------- helpers


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


def _summer_data(args, cfg):
    _need(args, "hourly", "counts")
    hourly = load_hourly_temps(args.hourly)
    counts = load_daily_counts(args.counts)
    d = cfg["data"]
    return prepare_summer((hourly, counts), smoothing(cfg, "hourly"), tuple(d["months"]), d["min_readings"])


def _annual_data(args, cfg):
    _need(args, "daily_temps", "counts")
    counts = load_daily_counts(args.counts)
    years = sorted({r.date.year for r in counts})
    temps = load_daily_temps(args.daily_temps, years)
    d = cfg["data"]
    return prepare_annual(
        (temps, counts), years, smoothing(cfg, "annual"), int(cfg["fflm"]["lag_max"]), d["tolerance"], d["max_interp_gap"]
    )


def _adapter(name: str, cfg):
    return make_adapter(
        name,
        sflm_spec(cfg),
        fflm_spec(cfg),
        gam={"smooth_df": cfg["gam"]["smooth_df"], "log_lambda_grid": tuple(cfg["gam"]["log_lambda_grid"])},
        dlnm={
            "temp_knot_pcts": tuple(cfg["dlnm"]["temp_knot_pcts"]),
            "n_lag_knots": cfg["dlnm"]["n_lag_knots"],
            "lam": cfg["dlnm"]["lambda"],
        },
        mortality_smoothing=smoothing(cfg, "mortality"),
    )


def _check_resolution(models, args):
    hourly = getattr(args, "hourly", None) is not None
    daily = getattr(args, "daily_temps", None) is not None
    for m in models:
        if m in SUMMER_MODELS and not hourly:
            raise UsageError(
                f"model {m!r} regresses on hourly exposure curves; supply --hourly "
                f"(daily temperatures have the wrong time resolution)"
            )
        if m in ANNUAL_MODELS and not daily:
            raise UsageError(f"model {m!r} needs whole-year daily temperatures; supply --daily-temps")
    kinds = {m in SUMMER_MODELS for m in models}
    if len(kinds) > 1:
        raise UsageError("cannot compare hourly-exposure and annual-curve models in one run")


# ---------------------------------------------------------------- commands


def cmd_smooth(args, cfg, dig, out: Path) -> list[str]:
    given = [n for n in ("hourly", "daily_temps", "counts") if getattr(args, n, None) is not None]
    if len(given) != 1:
        raise UsageError("smooth takes exactly one of --hourly, --daily-temps, --counts")
    which = given[0]
    if which == "hourly":
        recs = load_hourly_temps(args.hourly)
        by_day: dict = {}
        for r in recs:
            by_day.setdefault(r.date, []).append(r)
        days = [d for d in sorted(by_day) if len(by_day[d]) >= cfg["data"]["min_readings"]]
        if not days:
            raise DataFormatError("no day has enough hourly readings")
        series = [
            SampledSeries([r.timestamp.hour for r in by_day[d]], [r.temp_c for r in by_day[d]]) for d in days
        ]
        labels = [d.isoformat() for d in days]
        cfg_s = smoothing(cfg, "hourly")
    else:
        recs = load_daily_temps(args.daily_temps) if which == "daily_temps" else load_daily_counts(args.counts)
        years = sorted({r.date.year for r in recs})
        M = build_annual_matrix(recs, years, cfg["data"]["tolerance"], cfg["data"]["max_interp_gap"])
        grid = np.arange(365.0)
        series = [SampledSeries(grid, row) for row in M]
        labels = [str(y) for y in years]
        cfg_s = smoothing(cfg, "annual" if which == "daily_temps" else "mortality")
    curves, diag = smooth_batch(series, cfg_s, labels)
    save_record(
        out / "curves.json",
        "functional_data",
        {
            "basis": curves[0].basis.to_dict(),
            "labels": labels,
            "coeffs": np.vstack([c.coeffs for c in curves]),
            "diagnostics": {
                "lambda_used": diag.lambda_used,
                "knots_used": diag.knots_used,
                "loocv_score": diag.loocv_score,
                "edf": diag.edf,
            },
        },
        dig,
    )
    write_table(
        out / "smoothing_scores.csv",
        ["n_interior_knots", "pooled_loocv", "selected"],
        [[k, v, int(k == diag.knots_used)] for k, v in sorted(diag.scores.items())],
        dig,
    )
    return ["curves.json", "smoothing_scores.csv"]


def cmd_fit(args, cfg, dig, out: Path) -> list[str]:
    model = args.model
    _check_resolution([model], args)
    adapter = _adapter(model, cfg)
    data = _summer_data(args, cfg) if model in SUMMER_MODELS else _annual_data(args, cfg)
    fitted = adapter.fit(data, np.arange(data.n_obs)).model
    save_fit(out / "fit.json", fitted, dig, extra={"model": model})
    n = cfg["export"]["grid_points"]
    files = ["fit.json"]
    if model == "sflm":
        dom = fitted.beta1.basis.domain
        s = np.linspace(dom.lo, dom.hi, n)
        write_table(out / "beta1.csv", ["s", "estimate"], zip(s, fitted.beta1(s)), dig)
        files.append("beta1.csv")
    elif model == "fflm":
        m = cfg["export"]["surface_grid"]
        dom = fitted.spec.s_basis.domain
        g = np.linspace(dom.lo, dom.hi, m)
        S = eval_surface(fitted, g, g)
        rows = [[g[i], g[j], S[i, j]] for j in range(m) for i in range(m)]
        write_table(out / "surface.csv", ["s", "t", "value"], rows, dig)
        t = fitted.spec.grid
        b0 = eval_basis(fitted.spec.t_basis, t) @ fitted.beta0_coeffs
        write_table(out / "beta0.csv", ["t", "estimate"], zip(t, b0), dig)
        files += ["surface.csv", "beta0.csv"]
    elif model == "dlnm":
        temps = data.temps.ravel()
        ref = nearest_rank_percentile(temps, 50)
        dom = fitted.temp_basis.domain
        tg = np.linspace(dom.lo, dom.hi, 25)
        lags = np.arange(int(fitted.lag_basis.domain.hi) + 1)
        rows = [[x, int(l), v] for x in tg for l, v in zip(lags, lag_response(fitted, x, ref, lags))]
        write_table(out / "lag_response.csv", ["temp", "lag", "log_rr_vs_median"], rows, dig)
        files.append("lag_response.csv")
    else:
        dom = fitted.exposure_basis.domain
        x = np.linspace(dom.lo, dom.hi, n)
        write_table(out / "smooth.csv", ["x", "effect"], zip(x, fitted.smooth(x)), dig)
        files.append("smooth.csv")
    return files


def cmd_bootstrap(args, cfg, dig, out: Path) -> list[str]:
    _need(args, "fit")
    fit = load_fit(args.fit, "sflm")
    data = _summer_data(args, cfg)
    b = cfg["bootstrap"]
    dom = fit.beta1.basis.domain
    grid = np.linspace(dom.lo, dom.hi, b["grid_points"])
    band = wild_bootstrap_band(
        fit, data.actual, data.curves, data.index,
        n_reps=b["n_reps"], level=b["level"], seed=cfg["seed"], grid=grid, law=b["law"],
    )
    write_table(
        out / "band.csv",
        ["s", "lower", "estimate", "upper"],
        zip(band.grid, band.lower, band.estimate, band.upper),
        dig,
    )
    return ["band.csv"]


def cmd_cv(args, cfg, dig, out: Path) -> list[str]:
    models = list(cfg["cv"]["models"])
    if not models:
        raise UsageError("no models to cross-validate")
    _check_resolution(models, args)
    data = _summer_data(args, cfg) if models[0] in SUMMER_MODELS else _annual_data(args, cfg)
    reports = compare_models([_adapter(m, cfg) for m in models], data, data.folds(), dig)
    rows = []
    for rep in reports:
        for r in rep.rows():
            rows.append([r["model"], r["fold"], r["n"], r["sse"], r["rmse"]])
        rows.append([rep.model_name, "ALL", rep.n_obs, float(rep.fold_sse.sum()), rep.overall_rmse])
    write_table(out / "cv_report.csv", ["model", "fold", "n", "sse", "rmse"], rows, dig)
    return ["cv_report.csv"]


def cmd_simulate(args, cfg, dig, out: Path) -> list[str]:
    s = cfg["simulate"]
    dgp = SyntheticDGP(s["kind"], dict(s["params"]), s["noise_sd"], cfg["seed"], s["count_law"])
    ds = simulate(dgp, s["n_units"])
    t = ds.truth
    files = ["counts.csv"]
    write_daily_counts(out / "counts.csv", ds.counts)
    dates = [r.date for r in ds.counts]
    if dgp.kind == "fflm_truth":
        write_daily_temps(out / "daily_temps.csv", ds.daily_temps)
        m = cfg["export"]["surface_grid"]
        g = np.linspace(0.0, 365.0, m)
        W = annual_surface(g, g, t["params"])
        lag = g[None, :] - g[:, None]
        inside = (lag >= 0) & (lag <= t["params"]["lag_max"])
        rows = [[g[i], g[j], W[i, j] if inside[i, j] else None] for j in range(m) for i in range(m)]
        write_table(out / "truth_surface.csv", ["s", "t", "value"], rows, dig)
        write_table(out / "truth_beta0.csv", ["t", "value"], zip(np.arange(365.0), t["beta0"]), dig)
        eta = t["eta"].ravel()
        files += ["daily_temps.csv", "truth_surface.csv", "truth_beta0.csv"]
    else:
        write_hourly_temps(out / "hourly.csv", ds.hourly)
        s_grid = np.linspace(0.0, 24.0, cfg["export"]["grid_points"])
        amp = dgp.resolved()["bump_amplitude"]
        beta = double_bump(s_grid, amp) if dgp.kind == "sflm_truth" else np.zeros_like(s_grid)
        write_table(out / "truth_beta1.csv", ["s", "value"], zip(s_grid, beta), dig)
        eta = t["eta"]
        files += ["hourly.csv", "truth_beta1.csv"]
    write_table(out / "truth_eta.csv", ["date", "eta"], zip((d.isoformat() for d in dates), eta), dig)
    files.append("truth_eta.csv")
    return files


COMMANDS = {
    "smooth": cmd_smooth,
    "fit": cmd_fit,
    "bootstrap": cmd_bootstrap,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML run configuration")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--hourly", help="hourly temperature CSV (timestamp,temp_c)")
    data.add_argument("--daily-temps", dest="daily_temps", help="daily temperature CSV (date,temp_c)")
    data.add_argument("--counts", help="daily counts CSV (date,count)")

    p = argparse.ArgumentParser(prog="funreg", parents=[common], description="Functional regression toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("smooth", parents=[common, data], help="smooth series into curves")

    f = sub.add_parser("fit", parents=[common, data], help="fit one model and export its coefficients")
    f.add_argument("model", choices=MODEL_NAMES)

    b = sub.add_parser("bootstrap", parents=[common, data], help="wild-bootstrap band for an sflm fit")
    b.add_argument("--fit", required=True, help="fit.json produced by 'fit sflm'")
    b.add_argument("--n-reps", dest="n_reps", type=int)
    b.add_argument("--level", type=float)

    c = sub.add_parser("cv", parents=[common, data], help="blocked cross-validation report")
    c.add_argument("--models", help="comma-separated model names")

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic data set and its truth")
    s.add_argument("--kind", choices=("sflm_truth", "fflm_truth", "scalar_truth", "null"))
    s.add_argument("--n-units", dest="n_units", type=int)
    s.add_argument("--noise-sd", dest="noise_sd", type=float)
    s.add_argument("--count-law", dest="count_law", choices=("poisson", "round"))
    return p


def _flag_overrides(args) -> dict:
    flags: dict = {}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if args.command == "bootstrap":
        for k in ("n_reps", "level"):
            if getattr(args, k, None) is not None:
                flags.setdefault("bootstrap", {})[k] = getattr(args, k)
    if args.command == "cv" and getattr(args, "models", None):
        flags["cv"] = {"models": [m.strip() for m in args.models.split(",") if m.strip()]}
    if args.command == "fit":
        flags["cv"] = {"models": [args.model]}
    if args.command == "simulate":
        for k in ("kind", "n_units", "noise_sd", "count_law"):
            if getattr(args, k, None) is not None:
                flags.setdefault("simulate", {})[k] = getattr(args, k)
    return flags


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _summary(out: Path, payload: dict):
    (out / "run_summary.json").write_text(json.dumps(payload, indent=1, sort_keys=True, default=str) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = Path(getattr(args, "out", "."))
    started = time.perf_counter()
    summary = {"command": args.command, "version": __version__, "schema_version": SCHEMA_VERSION}
    code, category = 0, None
    try:
        file_cfg = load_config(args.config) if getattr(args, "config", None) else {}
        cfg = resolve(file_cfg, _flag_overrides(args))
        dig = digest(cfg)
        summary.update(config_digest=dig, config=cfg)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](args, cfg, dig, out)
        summary["outputs"] = {name: _sha(out / name) for name in files}
    except ConfigError as exc:
        code, category, msg = 2, "config", str(exc)
    except UsageError as exc:
        code, category, msg = 2, "usage", str(exc)
    except (DataFormatError, FileNotFoundError, IsADirectoryError) as exc:
        code, category, msg = 3, "data", str(exc)
    except (RankDeficientError, DomainError) as exc:
        code, category, msg = 4, "numerical", str(exc)
    except ValueError as exc:
        code, category, msg = 5, "invalid", str(exc)
    summary["status"] = "ok" if code == 0 else "error"
    summary["timings"] = {"wall_seconds": round(time.perf_counter() - started, 3)}
    if code:
        summary["error"] = {"category": category, "message": msg}
        print(f"funreg: error [{category}]: {msg}", file=sys.stderr)
    if out.is_dir():
        _summary(out, summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
