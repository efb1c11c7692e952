"""Epidemiological read-outs of a fitted log contact-rate trend."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive, check_series
from .exceptions import InputError

__all__ = [
    "DEFAULT_GAMMA",
    "ParametricFit",
    "parametric_fit",
    "r0_path",
    "growth_rates",
    "Segment",
    "SurveillanceReport",
    "contact_growth_rates",
    "UnderreportingReport",
    "underreporting_diagnostic",
]

DEFAULT_GAMMA = 1.0 / 18.0


@dataclass(frozen=True)
class ParametricFit:
    """Constant log contact rate until ``t0``, then a linear decline."""

    alpha0: float
    alpha1: float
    t0: int
    fitted: np.ndarray
    residuals: np.ndarray


def parametric_fit(y, t0):
    """OLS of ``y`` on ``[1, (t - t0) * 1(t > t0)]`` with 0-based ``t``."""
    y = check_series(y)
    T = len(y)
    if not 0 < int(t0) < T - 1:
        raise InputError(f"break index t0 must lie in 1..{T - 2}, got {t0}")
    t0 = int(t0)
    t = np.arange(T, dtype=float)
    X = np.column_stack([np.ones(T), np.maximum(t - t0, 0.0)])
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    fitted = X @ beta
    return ParametricFit(float(beta[0]), float(beta[1]), t0, fitted, y - fitted)


def r0_path(f, gamma=DEFAULT_GAMMA):
    """Time-varying basic reproduction number ``exp(f) / gamma``."""
    gamma = check_positive(gamma, "gamma")
    return np.exp(np.asarray(f, dtype=float)) / gamma


def growth_rates(f):
    """Percent day-over-day growth of ``exp(f)``; entry 0 is nan."""
    f = np.asarray(f, dtype=float)
    xi = np.full(len(f), np.nan)
    xi[1:] = np.expm1(np.diff(f)) * 100.0
    return xi


@dataclass(frozen=True)
class Segment:
    """Days ``start..end`` (inclusive) sharing one contact growth rate."""

    start: int
    end: int
    xi: float
    spread: float


@dataclass(frozen=True)
class SurveillanceReport:
    segments: tuple
    xi: np.ndarray
    r0: np.ndarray
    gamma: float
    kinks: tuple
    segment_id: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)

    def table(self, decimals=2):
        """Rounded ``(segment, start, end, xi_percent)`` rows for presentation."""
        return [(i, s.start, s.end, round(s.xi, decimals)) for i, s in enumerate(self.segments)]


def contact_growth_rates(f, kinks, gamma=DEFAULT_GAMMA):
    """Segment-wise contact growth rates of a piecewise-linear log trend.

    ``xi(t)`` uses the backward difference, so a kink at ``k`` closes the
    earlier segment at ``k`` and the next one opens at ``k + 1``. Day 0 has
    no growth rate and is attached to the first segment.
    """
    f = check_series(f, min_length=2, name="f")
    T = len(f)
    kinks = tuple(sorted(int(k) for k in kinks))
    if any(k < 1 or k > T - 2 for k in kinks):
        raise InputError(f"kinks must be interior indices in 1..{T - 2}, got {kinks}")
    xi = growth_rates(f)
    bounds = [0, *kinks, T - 1]
    segments = []
    seg_id = np.zeros(T, dtype=np.int64)
    for i in range(len(bounds) - 1):
        start, end = bounds[i] + 1, bounds[i + 1]
        slope = (f[end] - f[start - 1]) / (end - start + 1)
        vals = xi[start : end + 1]
        segments.append(Segment(start, end, float(np.expm1(slope) * 100.0),
                                float(vals.max() - vals.min())))
        seg_id[start : end + 1] = i
    return SurveillanceReport(
        segments=tuple(segments),
        xi=xi,
        r0=r0_path(f, gamma),
        gamma=float(gamma),
        kinks=kinks,
        segment_id=seg_id,
        f=f,
    )


@dataclass(frozen=True)
class UnderreportingReport:
    rho: float
    correction: float
    ratio: np.ndarray
    ratio_max: float
    ratio_median: float
    ratio_min: float
    fraction_negligible: float

    @property
    def negligible(self):
        return self.fraction_negligible == 1.0


def underreporting_diagnostic(series, rho):
    """Size of the under-reporting correction ``(rho - 1) / rho`` against ``s/c``.

    If only a fraction ``rho`` of infections is reported, the measurement
    gains the additive term ``(rho - 1) / rho``, which is negligible when it
    is small against the lagged susceptible-to-confirmed ratio.
    """
    if not (isinstance(rho, (int, float)) and 0 < rho <= 1):
        raise InputError(f"reporting fraction rho must lie in (0, 1], got {rho!r}")
    ratio = np.asarray(series.S_lag, dtype=float) / np.asarray(series.C_lag, dtype=float)
    correction = (rho - 1.0) / rho
    frac = float(np.mean(abs(correction) < 0.01 * ratio))
    return UnderreportingReport(
        rho=float(rho),
        correction=float(correction),
        ratio=ratio,
        ratio_max=float(ratio.max()),
        ratio_median=float(np.median(ratio)),
        ratio_min=float(ratio.min()),
        fraction_negligible=frac,
    )
