"""Synthetic stand-ins for stationary history and non-stationary test windows.

The history is a stationary per-hour OU series with a daily price profile and
correlated hourly shocks. Each validation window reuses the same dynamics
with one non-stationary feature switched on:

``trend``       linear upward drift starting at equilibrium
``volatility``  shocks scaled up from the first day
``far_trend``   level far above the historical equilibrium plus a trend
"""

import datetime as dt

import numpy as np

from .market_data import HOURS, SyntheticSpec, generate_synthetic

HISTORY_END = dt.date(2020, 12, 31)
START_DATES = {
    "trend": dt.date(2021, 1, 1),
    "volatility": dt.date(2021, 5, 8),
    "far_trend": dt.date(2021, 9, 6),
}


def hourly_profile(base=50.0, amplitude=10.0):
    h = np.arange(HOURS)
    return base + amplitude * np.sin(2 * np.pi * (h - 7) / HOURS)


def correlated_sigma(scale, rho=0.6):
    """Symmetric square root of scale^2 * rho^|i-j|."""
    idx = np.arange(HOURS)
    cov = scale ** 2 * rho ** np.abs(idx[:, None] - idx[None, :])
    lam, vecs = np.linalg.eigh(cov)
    return (vecs * np.sqrt(np.clip(lam, 0, None))) @ vecs.T


def history_spec(num_days=2000, seed=2004, theta=0.5, noise=2.0):
    start = HISTORY_END - dt.timedelta(days=num_days - 1)
    return SyntheticSpec(theta=theta, m=hourly_profile(), sigma=correlated_sigma(noise),
                         num_days=num_days, seed=seed, start_date=start)


def validation_spec(kind, num_days=12, seed=2021, theta=0.5, noise=2.0,
                    trend=3.0, offset=40.0, vol_factor=3.0):
    m = hourly_profile()
    kw = dict(theta=theta, sigma=correlated_sigma(noise), num_days=num_days,
              seed=seed, start_date=START_DATES[kind])
    if kind == "trend":
        return SyntheticSpec(m=m, trend_slope=trend, **kw)
    if kind == "volatility":
        return SyntheticSpec(m=m, vol_shift=(0, vol_factor), **kw)
    if kind == "far_trend":
        return SyntheticSpec(m=m + offset, trend_slope=trend, **kw)
    raise ValueError(f"unknown scenario kind {kind!r}")


def history(**kw):
    return generate_synthetic(history_spec(**kw))


def validation(kind, **kw):
    return generate_synthetic(validation_spec(kind, **kw))
