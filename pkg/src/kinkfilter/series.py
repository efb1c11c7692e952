"""Case-data ingestion and the SIR transform to the log contact-rate target.

Cumulative counts (confirmed, recovered, deaths) are turned into population
fractions, the raw daily contact measurement ``Y = dC_t / (I_{t-1} S_{t-1})``
is formed, smoothed by a trailing three-day mean and logged.
"""

import csv
import datetime as _dt
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    ConsistencyError,
    InputError,
    MonotonicityError,
    ParseError,
    SeriesError,
)

__all__ = [
    "RawCaseTable",
    "EpidemicSeries",
    "WindowPolicy",
    "load_raw",
    "build_series",
    "second_difference_matrix",
    "parse_date",
    "format_date",
]

HEADER = ("date", "confirmed", "recovered", "deaths")
_EPOCH = _dt.date(1970, 1, 1)


def parse_date(text):
    """ISO-8601 calendar day -> integer days since 1970-01-01."""
    try:
        day = _dt.date.fromisoformat(text.strip())
    except (ValueError, AttributeError) as exc:
        raise ParseError(f"not an ISO-8601 date: {text!r}") from exc
    return (day - _EPOCH).days


def format_date(days):
    return (_EPOCH + _dt.timedelta(days=int(days))).isoformat()


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RawCaseTable:
    """Consecutive daily cumulative counts for one region."""

    dates: np.ndarray
    confirmed: np.ndarray
    recovered: np.ndarray
    deaths: np.ndarray
    population: float

    def __post_init__(self):
        for name in ("confirmed", "recovered", "deaths"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "dates", _frozen(self.dates, dtype=np.int64))
        if not self.population > 0:
            raise InputError(f"population must be positive, got {self.population!r}")
        _check_table(self.dates, self.confirmed, self.recovered, self.deaths)

    def __len__(self):
        return len(self.dates)


def _check_table(dates, confirmed, recovered, deaths, rows=None):
    rows = rows if rows is not None else [None] * len(dates)

    def where(i):
        return f"row {rows[i]} ({format_date(dates[i])})" if rows[i] else format_date(dates[i])

    for i in range(1, len(dates)):
        if dates[i] != dates[i - 1] + 1:
            raise MonotonicityError(
                f"dates must be consecutive calendar days: {where(i)} follows "
                f"{format_date(dates[i - 1])}"
            )
    for i in range(len(dates)):
        if min(confirmed[i], recovered[i], deaths[i]) < 0:
            raise ConsistencyError(f"negative cumulative count at {where(i)}")
        if recovered[i] + deaths[i] > confirmed[i]:
            raise ConsistencyError(f"recovered + deaths exceeds confirmed at {where(i)}")


def load_raw(path, population, fmt="cumulative"):
    """Read a ``date,confirmed,recovered,deaths`` CSV.

    ``fmt="daily-increments"`` treats the count columns as daily changes and
    cumulates them from an implicit all-zero day before the first row.
    """
    if fmt not in ("cumulative", "daily-increments"):
        raise InputError(f"unknown input format {fmt!r}")
    dates, cols, rows = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(h.strip().lower() for h in header) != HEADER:
            raise ParseError(f"{path}: header must be {','.join(HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"{path}: row {lineno} has {len(row)} fields, expected 4")
            dates.append(parse_date(row[0]))
            try:
                cols.append([float(c) for c in row[1:]])
            except ValueError:
                raise ParseError(f"{path}: row {lineno} ({row[0].strip()}) has a non-numeric count") from None
            if not np.all(np.isfinite(cols[-1])):
                raise ParseError(f"{path}: row {lineno} ({row[0].strip()}) has a non-finite count")
            rows.append(lineno)
    if not dates:
        raise ParseError(f"{path}: no data rows")
    values = np.array(cols, dtype=float)
    if fmt == "daily-increments":
        values = np.cumsum(values, axis=0)
    dates = np.array(dates, dtype=np.int64)
    _check_table(dates, values[:, 0], values[:, 1], values[:, 2], rows)
    return RawCaseTable(dates, values[:, 0], values[:, 1], values[:, 2], float(population))


@dataclass(frozen=True)
class WindowPolicy:
    start_threshold: float = 100.0
    censor_threshold: float = 10.0
    censor_enabled: bool = True

    def __post_init__(self):
        if not (self.start_threshold > 0 and self.censor_threshold > 0):
            raise InputError("window thresholds must be positive")


@dataclass(frozen=True)
class EpidemicSeries:
    """Retained analysis window. ``*_lag`` arrays hold the previous day's value."""

    dates: np.ndarray
    C: np.ndarray
    R: np.ndarray
    D: np.ndarray
    S: np.ndarray
    I: np.ndarray
    Y: np.ndarray
    Ybar: np.ndarray
    y: np.ndarray
    C_lag: np.ndarray
    S_lag: np.ndarray
    I_lag: np.ndarray
    delta_C: np.ndarray
    population: float
    warnings: tuple = field(default=())

    @property
    def t0_date(self):
        return int(self.dates[0])

    def __len__(self):
        return len(self.dates)


def _clip_increments(cum):
    inc = np.diff(cum, prepend=0.0)
    neg = inc < 0
    return np.cumsum(np.where(neg, 0.0, inc)), int(neg.sum())


def build_series(raw, policy=None, negative_delta="error"):
    """Transform a :class:`RawCaseTable` into the regression target ``y``.

    The raw measurement is computed on the full archive so the trailing mean
    is defined from the start date; this needs three raw rows before it.
    """
    policy = policy or WindowPolicy()
    if negative_delta not in ("error", "clip_to_zero", "clip"):
        raise InputError(f"negative_delta must be 'error' or 'clip_to_zero', got {negative_delta!r}")
    notes = []
    conf, rec, dea = raw.confirmed, raw.recovered, raw.deaths
    if negative_delta != "error":
        conf, n1 = _clip_increments(conf)
        rec, n2 = _clip_increments(rec)
        dea, n3 = _clip_increments(dea)
        if n1 + n2 + n3:
            msg = f"clipped {n1 + n2 + n3} negative daily increments to zero"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
            if np.any(rec + dea > conf):
                raise SeriesError("clipping made recovered + deaths exceed confirmed")

    pop = raw.population
    C, R, D = conf / pop, rec / pop, dea / pop
    S = 1.0 - C
    I = C - R - D
    n = len(C)

    above = np.flatnonzero(conf >= policy.start_threshold)
    if above.size == 0:
        raise SeriesError(f"cumulative confirmed never reaches {policy.start_threshold:g}")
    start = int(above[0])
    if start < 3:
        raise SeriesError(
            f"start date {format_date(raw.dates[start])} needs three earlier raw rows "
            "for the trailing three-day mean"
        )

    new_counts = np.diff(conf, prepend=np.nan)
    end = n - 1
    if policy.censor_enabled:
        avg = (new_counts[2:] + new_counts[1:-1] + new_counts[:-2]) / 3.0
        # avg[i] is the trailing mean ending at row i + 2
        low = np.flatnonzero(avg[start - 2:] < policy.censor_threshold)
        if low.size:
            end = start + int(low[0])
    if end - start + 1 < 5:
        raise SeriesError(f"only {end - start + 1} rows in the analysis window, need 5")

    lag = np.arange(start - 3, end)  # t-1 for every t in start-2 .. end
    if np.any(I[lag] <= 0):
        bad = int(lag[np.flatnonzero(I[lag] <= 0)[0]] + 1)
        raise SeriesError(f"zero active infections on {format_date(raw.dates[bad - 1])}; Y undefined")

    Yraw = np.full(n, np.nan)
    Yraw[1:] = (C[1:] - C[:-1]) / (I[:-1] * S[:-1])
    Ybar = (Yraw[2:] + Yraw[1:-1] + Yraw[:-2]) / 3.0
    Ybar = np.concatenate([[np.nan, np.nan], Ybar])

    keep = slice(start, end + 1)
    if np.any(Ybar[keep] <= 0):
        first = start + int(np.flatnonzero(Ybar[keep] <= 0)[0])
        hint = " (try negative_delta='clip_to_zero')" if negative_delta == "error" else ""
        raise SeriesError(f"non-positive smoothed Y on {format_date(raw.dates[first])}{hint}")

    prev = slice(start - 1, end)
    return EpidemicSeries(
        dates=_frozen(raw.dates[keep], dtype=np.int64),
        C=_frozen(C[keep]),
        R=_frozen(R[keep]),
        D=_frozen(D[keep]),
        S=_frozen(S[keep]),
        I=_frozen(I[keep]),
        Y=_frozen(Yraw[keep]),
        Ybar=_frozen(Ybar[keep]),
        y=_frozen(np.log(Ybar[keep])),
        C_lag=_frozen(C[prev]),
        S_lag=_frozen(S[prev]),
        I_lag=_frozen(I[prev]),
        delta_C=_frozen(C[keep] - C[prev]),
        population=pop,
        warnings=tuple(notes),
    )


def second_difference_matrix(T):
    """Sparse ``(T-2) x T`` operator with rows ``(1, -2, 1)``."""
    if T < 3:
        raise InputError(f"second differences need T >= 3, got {T}")
    return sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(T - 2, T), format="csr")
