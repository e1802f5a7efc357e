"""Hourly price ingestion, daily reshaping, volatility and synthetic series."""

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import stream

HOURS = 24


class DataError(ValueError):
    """Raised for malformed or inconsistent price data."""


def _as_date(value):
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value))


@dataclass(frozen=True)
class HourlyPriceSeries:
    """Validated hourly prices, sorted by (date, hour).

    ``dates`` holds one entry per record, ``hours`` runs 1..24.
    """

    dates: tuple
    hours: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        hours = np.asarray(self.hours, dtype=np.int64)
        prices = np.asarray(self.prices, dtype=float)
        object.__setattr__(self, "dates", tuple(_as_date(d) for d in self.dates))
        object.__setattr__(self, "hours", hours)
        object.__setattr__(self, "prices", prices)
        if not (len(self.dates) == hours.size == prices.size):
            raise DataError("dates, hours and prices must have equal length")
        if hours.size and (hours.min() < 1 or hours.max() > HOURS):
            raise DataError("hour out of range 1..24")
        if not np.all(np.isfinite(prices)):
            bad = int(np.flatnonzero(~np.isfinite(prices))[0])
            raise DataError(f"non-finite price at record {bad}")
        keys = [(d, int(h)) for d, h in zip(self.dates, hours)]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            if len(set(keys)) != len(keys):
                raise DataError("duplicate (date, hour) record")
            raise DataError("records must be sorted by (date, hour)")
        counts = {}
        for d in self.dates:
            counts[d] = counts.get(d, 0) + 1
        for d, c in counts.items():
            if c != HOURS:
                raise DataError(f"incomplete day {d.isoformat()}: {c} hours, expected 24")

    def __len__(self):
        return self.prices.size

    @property
    def records(self):
        return [(d, int(h), float(p)) for d, h, p in zip(self.dates, self.hours, self.prices)]

    @property
    def unique_dates(self):
        return sorted(set(self.dates))

    @classmethod
    def from_records(cls, records):
        """Build a series from unsorted ``(date, hour, price)`` tuples."""
        rows = sorted(((_as_date(d), int(h), float(p)) for d, h, p in records),
                      key=lambda r: (r[0], r[1]))
        for a, b in zip(rows, rows[1:]):
            if a[:2] == b[:2]:
                raise DataError(f"duplicate (date, hour) record {a[0].isoformat()} h{a[1]}")
        if not rows:
            return cls((), np.empty(0, np.int64), np.empty(0))
        dates, hours, prices = zip(*rows)
        return cls(dates, np.array(hours), np.array(prices))


@dataclass(frozen=True)
class DailyPriceMatrix:
    """One 24-vector of prices per consecutive calendar day."""

    days: tuple
    values: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        object.__setattr__(self, "days", tuple(_as_date(d) for d in self.days))
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[1] != HOURS:
            raise DataError(f"values must have shape (num_days, 24), got {values.shape}")
        if values.shape[0] != len(self.days):
            raise DataError("row count must equal number of dates")
        for a, b in zip(self.days, self.days[1:]):
            if b - a != dt.timedelta(days=1):
                raise DataError(f"calendar gap between {a.isoformat()} and {b.isoformat()}")
        values.setflags(write=False)

    @property
    def num_days(self):
        return len(self.days)

    def index_of(self, day):
        day = _as_date(day)
        if not self.days or not self.days[0] <= day <= self.days[-1]:
            raise DataError(f"{day.isoformat()} outside matrix range")
        return (day - self.days[0]).days

    def row(self, day):
        return self.values[self.index_of(day)]

    def flatten(self):
        """Back to an :class:`HourlyPriceSeries` (inverse of :func:`to_daily_matrix`)."""
        dates = [d for d in self.days for _ in range(HOURS)]
        hours = np.tile(np.arange(1, HOURS + 1), self.num_days)
        return HourlyPriceSeries(dates, hours, self.values.reshape(-1))


@dataclass(frozen=True)
class VolatilitySeries:
    """Rolling volatility per hourly time point; NaN marks absent values."""

    values: np.ndarray
    window_days: int

    @property
    def defined(self):
        return ~np.isnan(self.values)


@dataclass
class SyntheticSpec:
    """Parameters of the per-hour mean-reverting synthetic generator.

    ``theta``, ``m``, ``trend_slope`` and ``x0`` accept scalars or 24-vectors.
    ``sigma`` is a scalar or a 24x24 matrix mixing i.i.d. standard normals.
    ``x0`` defaults to ``m``.
    """

    theta: object
    m: object
    sigma: object
    num_days: int
    seed: int
    trend_slope: object = 0.0
    vol_shift: tuple = None
    x0: object = None
    start_date: dt.date = dt.date(2004, 1, 1)

    def __post_init__(self):
        self.theta = _hour_vector(self.theta, "theta")
        self.m = _hour_vector(self.m, "m")
        self.trend_slope = _hour_vector(self.trend_slope, "trend_slope")
        self.x0 = self.m.copy() if self.x0 is None else _hour_vector(self.x0, "x0")
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = float(sigma) * np.eye(HOURS)
        if sigma.shape != (HOURS, HOURS) or not np.all(np.isfinite(sigma)):
            raise DataError("sigma must be a finite scalar or a 24x24 matrix")
        self.sigma = sigma
        if np.any(self.theta < 0):
            raise DataError("theta must be non-negative")
        if int(self.num_days) < 2:
            raise DataError("num_days must be at least 2")
        self.num_days = int(self.num_days)
        if self.vol_shift is not None:
            start, factor = self.vol_shift
            if factor <= 0:
                raise DataError("vol_shift factor must be positive")
            self.vol_shift = (int(start), float(factor))
        self.start_date = _as_date(self.start_date)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def to_json(self):
        return json.dumps({
            "theta": self.theta.tolist(), "m": self.m.tolist(), "sigma": self.sigma.tolist(),
            "num_days": self.num_days, "seed": self.seed,
            "trend_slope": self.trend_slope.tolist(),
            "vol_shift": list(self.vol_shift) if self.vol_shift else None,
            "x0": self.x0.tolist(), "start_date": self.start_date.isoformat(),
        })


def _hour_vector(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(HOURS, float(arr))
    if arr.shape != (HOURS,) or not np.all(np.isfinite(arr)):
        raise DataError(f"{name} must be a finite scalar or 24-vector")
    return arr


def load_hourly_csv(path):
    """Read a ``date,hour,price`` CSV into a validated series.

    Errors name the offending line number (header is line 1).
    """
    records = []
    seen = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "hour", "price"]:
            raise DataError(f"line 1: expected header 'date,hour,price', got {header}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataError(f"line {line}: expected 3 fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
                hour = int(row[1].strip())
                price = float(row[2].strip())
            except ValueError as exc:
                raise DataError(f"line {line}: malformed row {row!r} ({exc})") from None
            if not 1 <= hour <= HOURS:
                raise DataError(f"line {line}: hour {hour} outside 1..24")
            if not math.isfinite(price):
                raise DataError(f"line {line}: non-finite price {row[2].strip()!r}")
            if (day, hour) in seen:
                raise DataError(f"line {line}: duplicate (date, hour) {day.isoformat()} h{hour}, "
                                f"first seen on line {seen[day, hour]}")
            seen[day, hour] = line
            records.append((day, hour, price))
    return HourlyPriceSeries.from_records(records)


def write_hourly_csv(series, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "hour", "price"])
        for d, h, p in series.records:
            writer.writerow([d.isoformat(), h, repr(p)])


def to_daily_matrix(series):
    days = series.unique_dates
    if not days:
        raise DataError("empty series")
    values = series.prices.reshape(len(days), HOURS)
    return DailyPriceMatrix(days, values)


def rolling_volatility(series, window_days):
    """Population std of the trailing ``window_days * 24`` hourly prices.

    The window includes the current observation; the first
    ``window_days * 24 - 1`` points lack history and are NaN.
    """
    if int(window_days) < 1:
        raise DataError("window_days must be >= 1")
    prices = series.prices if isinstance(series, HourlyPriceSeries) else np.asarray(series, float)
    width = int(window_days) * HOURS
    out = np.full(prices.size, np.nan)
    if prices.size >= width:
        windows = np.lib.stride_tricks.sliding_window_view(prices, width)
        out[width - 1:] = windows.std(axis=1)
    return VolatilitySeries(out, int(window_days))


def generate_synthetic(spec):
    """Simulate the daily per-hour OU recursion described by ``spec``.

    X[d+1] = X[d] + theta * (m - X[d]) + scale(d+1) * sigma @ xi[d+1], and the
    returned prices are X[d] + trend_slope * d. ``scale`` equals the vol-shift
    factor for days at or after its start day. Noise for day d comes from its
    own counter-based stream, so the output does not depend on evaluation order.
    """
    n = spec.num_days
    x = np.empty((n, HOURS))
    x[0] = spec.x0
    shift_start, factor = spec.vol_shift if spec.vol_shift else (n, 1.0)
    for d in range(1, n):
        xi = stream(spec.seed, "synthetic", d).standard_normal(HOURS)
        scale = factor if d >= shift_start else 1.0
        x[d] = x[d - 1] + spec.theta * (spec.m - x[d - 1]) + scale * (spec.sigma @ xi)
    prices = x + np.arange(n)[:, None] * spec.trend_slope[None, :]
    days = [spec.start_date + dt.timedelta(days=i) for i in range(n)]
    return DailyPriceMatrix(days, prices)


def split(matrix, train_end):
    """Split into training (through ``train_end`` inclusive) and validation parts."""
    train_end = _as_date(train_end)
    if not matrix.days[0] < train_end < matrix.days[-1]:
        raise DataError(f"train_end {train_end.isoformat()} must lie strictly inside "
                        f"{matrix.days[0].isoformat()}..{matrix.days[-1].isoformat()}")
    k = matrix.index_of(train_end) + 1
    train = DailyPriceMatrix(matrix.days[:k], matrix.values[:k], matrix.start_index)
    valid = DailyPriceMatrix(matrix.days[k:], matrix.values[k:], matrix.start_index + k)
    return train, valid


def concat(first, second):
    """Join two calendar-adjacent matrices."""
    return DailyPriceMatrix(first.days + second.days,
                            np.vstack([first.values, second.values]), first.start_index)


def save_matrix_csv(matrix, path):
    write_hourly_csv(matrix.flatten(), Path(path))
