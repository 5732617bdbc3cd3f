"""Reading, aligning and writing daily/hourly series and fitted models.

File formats (CSV, header row required):

* counts:            ``date,count``        rows ``YYYY-MM-DD,<nonneg int>``
* hourly temperature ``timestamp,temp_c``  rows ``YYYY-MM-DDTHH:00,<real>``
* daily temperature  ``date,temp_c``
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

__all__ = [
    "DailyRecord",
    "HourlyRecord",
    "DailyValue",
    "load_daily_counts",
    "load_hourly_temps",
    "load_daily_temps",
    "write_daily_counts",
    "write_hourly_temps",
    "write_daily_temps",
    "missing_days",
    "build_annual_matrix",
    "AlignedPairs",
    "align_summer_pairs",
    "save_record",
    "load_record",
]


@dataclass(frozen=True)
class DailyRecord:
    date: dt.date
    count: int


@dataclass(frozen=True)
class DailyValue:
    date: dt.date
    value: float


@dataclass(frozen=True)
class HourlyRecord:
    timestamp: dt.datetime
    temp_c: float

    @property
    def date(self) -> dt.date:
        return self.timestamp.date()


def _read_rows(path, header: tuple):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise DataFormatError(f"{path}:1: expected header {','.join(header)!r}, got {','.join(first)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            yield lineno, row


def _parse(path, header, parse_row, key):
    records, problems, seen = [], [], {}
    for lineno, row in _read_rows(path, header):
        if len(row) != len(header):
            problems.append(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            continue
        try:
            rec = parse_row(row)
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        k = key(rec)
        if k in seen:
            raise DataFormatError(f"{path}: line {lineno}: duplicate timestamp {k} (first on line {seen[k]})")
        seen[k] = lineno
        records.append(rec)
    if problems:
        raise DataFormatError(f"{path}: malformed rows\n  " + "\n  ".join(problems))
    records.sort(key=key)
    return records


def _date(s: str) -> dt.date:
    try:
        return dt.date.fromisoformat(s.strip())
    except ValueError:
        raise ValueError(f"unparseable date {s!r}") from None


def _number(s: str, what: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ValueError(f"non-numeric {what} {s!r}") from None
    if not np.isfinite(v):
        raise ValueError(f"non-finite {what} {s!r}")
    return v


def _parse_count(row) -> DailyRecord:
    d = _date(row[0])
    s = row[1].strip()
    if not s.isdigit():
        raise ValueError(f"count must be a nonnegative integer, got {s!r}")
    return DailyRecord(d, int(s))


def _parse_hourly(row) -> HourlyRecord:
    s = row[0].strip()
    try:
        ts = dt.datetime.strptime(s, "%Y-%m-%dT%H:%M")
    except ValueError:
        raise ValueError(f"unparseable timestamp {s!r}") from None
    if ts.minute != 0:
        raise ValueError(f"timestamp {s!r} is not on the hour")
    return HourlyRecord(ts, _number(row[1], "temperature"))


def _parse_daily_temp(row) -> DailyValue:
    return DailyValue(_date(row[0]), _number(row[1], "temperature"))


def _warn_gaps(dates: Sequence[dt.date], years: Iterable[int] | None, what: str):
    if years is None:
        return
    have = set(dates)
    for y in years:
        gap = missing_days(have, y)
        if gap:
            msg = f"{what}: {len(gap)} missing day(s) in {y}"
            log.warning(msg)
            warnings.warn(msg)


def load_daily_counts(path, years: Iterable[int] | None = None) -> list[DailyRecord]:
    """Parse a counts file; with ``years`` given, warn about uncovered days."""
    recs = _parse(path, ("date", "count"), _parse_count, lambda r: r.date)
    _warn_gaps([r.date for r in recs], years, "counts")
    return recs


def load_hourly_temps(path) -> list[HourlyRecord]:
    recs = _parse(path, ("timestamp", "temp_c"), _parse_hourly, lambda r: r.timestamp)
    return recs


def load_daily_temps(path, years: Iterable[int] | None = None) -> list[DailyValue]:
    recs = _parse(path, ("date", "temp_c"), _parse_daily_temp, lambda r: r.date)
    _warn_gaps([r.date for r in recs], years, "daily temperature")
    return recs


def _fmt(v: float) -> str:
    return repr(float(v))


def write_daily_counts(path, records: Iterable[DailyRecord]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "count"])
        for r in records:
            w.writerow([r.date.isoformat(), int(r.count)])


def write_hourly_temps(path, records: Iterable[HourlyRecord]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "temp_c"])
        for r in records:
            w.writerow([r.timestamp.strftime("%Y-%m-%dT%H:00"), _fmt(r.temp_c)])


def write_daily_temps(path, records: Iterable[DailyValue]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "temp_c"])
        for r in records:
            w.writerow([r.date.isoformat(), _fmt(r.value)])


def _year_days(year: int) -> list[dt.date]:
    """The 365 analysis days of ``year`` (29 February left out)."""
    d = dt.date(year, 1, 1)
    out = []
    while d.year == year:
        if not (d.month == 2 and d.day == 29):
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def missing_days(dates, year: int) -> list[dt.date]:
    have = set(dates)
    return [d for d in _year_days(year) if d not in have]


def build_annual_matrix(records, years: Sequence[int], tolerance: int = 0, max_interp_gap: int = 0) -> np.ndarray:
    """Rows of 365 daily values per year, 29 February dropped.

    ``records`` holds ``(date, value)`` pairs or objects with ``date`` and
    ``count``/``value``.  Up to ``tolerance`` missing days per year are
    filled by linear interpolation, provided no run of missing days is longer
    than ``max_interp_gap``; anything else raises with the missing dates.
    """
    values = {}
    for r in records:
        if isinstance(r, tuple):
            d, v = r
        else:
            d = r.date
            v = r.count if hasattr(r, "count") else r.value
        values[d] = float(v)
    out = np.empty((len(years), 365))
    for row, y in enumerate(years):
        days = _year_days(y)
        vals = np.array([values.get(d, np.nan) for d in days])
        miss = np.flatnonzero(np.isnan(vals))
        if miss.size:
            run = _longest_run(miss)
            if miss.size > tolerance or run > max_interp_gap:
                listed = ", ".join(days[i].isoformat() for i in miss[:20])
                more = "" if miss.size <= 20 else f" ... ({miss.size} total)"
                raise DataFormatError(f"{y}: {miss.size} missing day(s): {listed}{more}")
            ok = ~np.isnan(vals)
            if ok.sum() < 2:
                raise DataFormatError(f"{y}: too few observed days to interpolate")
            vals[miss] = np.interp(miss, np.flatnonzero(ok), vals[ok])
        out[row] = vals
    return out


def _longest_run(idx: np.ndarray) -> int:
    if idx.size == 0:
        return 0
    breaks = np.flatnonzero(np.diff(idx) != 1)
    edges = np.concatenate([[-1], breaks, [idx.size - 1]])
    return int(np.max(np.diff(edges)))


@dataclass
class AlignedPairs:
    """Exposure readings of day ``d - 1`` paired with the count of day ``d``."""

    dates: list  # response dates d
    exposure_times: list  # per pair: hours (0..23) of day d-1 readings
    exposure_values: list  # per pair: temperatures of day d-1
    counts: np.ndarray
    n_dropped: int

    def __len__(self) -> int:
        return len(self.dates)


def align_summer_pairs(
    hourly: Sequence[HourlyRecord],
    counts: Sequence[DailyRecord],
    months=(6, 7, 8),
    min_readings: int = 18,
) -> AlignedPairs:
    """Pair each response day in ``months`` with the previous day's readings.

    Pairs whose exposure day has fewer than ``min_readings`` hourly readings
    (or no count) are dropped and counted.
    """
    by_day = defaultdict(list)
    for r in hourly:
        by_day[r.date].append(r)
    months = set(months)
    dates, times, vals, ys = [], [], [], []
    dropped = 0
    for rec in counts:
        d = rec.date
        if d.month not in months:
            continue
        prev = by_day.get(d - dt.timedelta(days=1), [])
        if len(prev) < min_readings:
            dropped += 1
            log.info("dropping %s: %d hourly readings on the previous day", d, len(prev))
            continue
        prev = sorted(prev, key=lambda r: r.timestamp)
        dates.append(d)
        times.append(np.array([r.timestamp.hour for r in prev], dtype=float))
        vals.append(np.array([r.temp_c for r in prev]))
        ys.append(rec.count)
    if not dates:
        raise ValueError("no aligned exposure/response pairs")
    return AlignedPairs(dates, times, vals, np.asarray(ys, dtype=float), dropped)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "shape": list(obj.shape), "dtype": str(obj.dtype)}
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (dt.date, dt.datetime)):
        return obj.isoformat()
    return obj


def _restore(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.asarray(obj["__ndarray__"], dtype=obj["dtype"]).reshape(obj["shape"])
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    return obj


def save_record(path, kind: str, payload: dict, config_digest: str = ""):
    """Write a versioned, self-describing JSON record."""
    rec = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "config_digest": config_digest,
        "payload": _jsonable(payload),
    }
    Path(path).write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")


def load_record(path, kind: str | None = None) -> dict:
    rec = json.loads(Path(path).read_text())
    if "schema_version" not in rec:
        raise DataFormatError(f"{path}: missing schema_version")
    if rec["schema_version"] > SCHEMA_VERSION:
        raise DataFormatError(f"{path}: schema version {rec['schema_version']} is newer than supported")
    if kind is not None and rec.get("kind") != kind:
        raise DataFormatError(f"{path}: expected a {kind!r} record, found {rec.get('kind')!r}")
    rec["payload"] = _restore(rec["payload"])
    return rec
