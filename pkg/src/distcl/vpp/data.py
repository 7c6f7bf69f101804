"""Synthetic demand-response history and exogenous market/solar scenarios.

The demand model is a price-elastic response around a base profile:

    D = Dbar * (1 + eta * (P_ref - P) / P) * (1 + noise),

with Dbar built from a daily double-peak shape, a weekend dip and a
temperature effect. Features avoid sub-day lags: only 24..120 h lags of demand
and temperature are used, since the whole next day is decided at once.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from ..nn import Dataset
from ..stoch import ScenarioSet, sample_scenarios

LAGS = (24, 48, 72, 96, 120)
CALENDAR = ("hour", "day_of_week", "month", "week_of_year", "holiday")
PRICE_COLUMN = "price"
FEATURES = (CALENDAR + (PRICE_COLUMN, "temperature")
            + tuple(f"demand_lag{k}" for k in LAGS) + tuple(f"temp_lag{k}" for k in LAGS))
TARGET = "demand"


@dataclass
class DemandResponseConfig:
    eta_r: float
    reference_price: np.ndarray
    base_demand: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.reference_price = np.asarray(self.reference_price, dtype=float)
        self.base_demand = np.asarray(self.base_demand, dtype=float)
        if self.eta_r < 0:
            raise ValueError(f"elasticity must be >= 0, got {self.eta_r}")
        if np.any(self.reference_price <= 0):
            raise ValueError("reference prices must be positive")
        if self.reference_price.shape != self.base_demand.shape:
            raise ValueError("reference_price and base_demand must have the same shape")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def simulate_demand_response(config: DemandResponseConfig, prices, rng=None) -> np.ndarray:
    """Elastic response to offered ``prices``; noiseless when ``rng`` is None."""
    prices = np.asarray(prices, dtype=float)
    if prices.shape != config.base_demand.shape:
        raise ValueError(f"{prices.shape} prices for {config.base_demand.shape} periods")
    if np.any(prices <= 0):
        raise ValueError("offered prices must be strictly positive")
    d = config.base_demand * (1.0 + config.eta_r * (config.reference_price - prices) / prices)
    if rng is not None and config.noise_sigma > 0:
        d = d * (1.0 + config.noise_sigma * rng.standard_normal(d.shape))
    return d


# -- profiles -------------------------------------------------------------------

def daily_shape(hours) -> np.ndarray:
    """Morning and evening peaks over a night trough, in units of the base level."""
    h = np.asarray(hours, dtype=float)
    return (0.6 + 0.35 * np.exp(-((h - 8.0) ** 2) / 8.0)
            + 0.5 * np.exp(-((h - 19.0) ** 2) / 12.5))


def price_profile(mean_price: float, hours=range(24)) -> np.ndarray:
    """Day-ahead reference price per hour, following the demand shape, averaging ``mean_price``."""
    full = daily_shape(np.arange(24))
    norm = (full - full.min()) / (full.max() - full.min())
    prof = 0.75 + 0.5 * norm
    prof = mean_price * prof / prof.mean()
    return prof[np.asarray(list(hours), dtype=int)]


def solar_bell(hours, peak: float) -> np.ndarray:
    """Clear-sky output: a half-sine between 06:00 and 18:00, zero at night."""
    h = np.asarray(hours, dtype=float)
    return peak * np.where((h > 6) & (h < 18), np.sin(np.pi * (h - 6.0) / 12.0), 0.0)


@dataclass
class GeneratorConfig:
    days: int = 120
    start: str = "2017-07-01"
    level: float = 1000.0
    noise_sigma: float = 0.08
    eta_r: float = 0.2
    price_mean: float = 14.0
    price_spread: tuple[float, float] = (0.5, 1.5)
    weekend_factor: float = 0.92
    temp_effect: float = 0.012
    seed: int = 0

    def __post_init__(self):
        if self.days < 7:
            raise ValueError(f"history needs at least 7 days for 120 h lags, got {self.days}")
        lo, hi = self.price_spread
        if not 0 < lo <= hi:
            raise ValueError(f"price_spread must satisfy 0 < low <= high, got {self.price_spread}")

    def mean_daily_demand(self) -> float:
        """Typical daily energy of the base profile (weekday, neutral temperature)."""
        return float(self.level * daily_shape(np.arange(24)).sum())


@dataclass
class History:
    """Hourly synthetic record; the last 24 hours form the decision day."""
    times: list[dt.datetime]
    temperature: np.ndarray
    base_demand: np.ndarray
    reference_price: np.ndarray
    price: np.ndarray
    demand: np.ndarray
    features: np.ndarray = field(repr=False)  # rows aligned with times, NaN where lags missing


def _calendar(times) -> np.ndarray:
    out = np.empty((len(times), len(CALENDAR)))
    for i, t in enumerate(times):
        iso = t.isocalendar()
        out[i] = (t.hour, t.weekday(), t.month, iso[1], 1.0 if t.weekday() >= 5 else 0.0)
    return out


def simulate_history(config: GeneratorConfig) -> History:
    """``days`` of history plus one decision day, all from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    n = 24 * (config.days + 1)
    t0 = dt.datetime.fromisoformat(config.start)
    times = [t0 + dt.timedelta(hours=h) for h in range(n)]
    cal = _calendar(times)
    hour = cal[:, 0]
    doy = np.array([t.timetuple().tm_yday for t in times], dtype=float)
    temp = (16.0 + 9.0 * np.sin(2 * np.pi * (doy - 110.0) / 365.25)
            + 4.0 * np.sin(2 * np.pi * (hour - 9.0) / 24.0) + 1.5 * rng.standard_normal(n))
    weekly = np.where(cal[:, 4] > 0, config.weekend_factor, 1.0)
    base = (config.level * daily_shape(hour) * weekly
            * (1.0 + config.temp_effect * np.abs(temp - 18.0)))
    ref = price_profile(config.price_mean, hour.astype(int))
    lo, hi = config.price_spread
    price = ref * rng.uniform(lo, hi, n)
    dr = DemandResponseConfig(config.eta_r, ref, base, config.noise_sigma)
    demand = simulate_demand_response(dr, price, rng)

    feats = np.full((n, len(FEATURES)), np.nan)
    feats[:, :5] = cal
    feats[:, 5] = price
    feats[:, 6] = temp
    for k, lag in enumerate(LAGS):
        feats[lag:, 7 + k] = demand[:-lag]
        feats[lag:, 12 + k] = temp[:-lag]
    return History(times, temp, base, ref, price, demand, feats)


def generate_training_data(config: GeneratorConfig) -> Dataset:
    """Training rows from the history (decision day excluded), lag-incomplete rows dropped."""
    hist = simulate_history(config)
    n = 24 * config.days
    X = hist.features[max(LAGS):n]
    y = hist.demand[max(LAGS):n]
    return Dataset(X.copy(), y.copy(), list(FEATURES), [FEATURES.index(PRICE_COLUMN)], TARGET)


def decision_context(config: GeneratorConfig, hours) -> np.ndarray:
    """Feature rows for the decision day at ``hours``; the price column is NaN."""
    hist = simulate_history(config)
    day0 = 24 * config.days
    rows = hist.features[[day0 + int(h) for h in hours]].copy()
    rows[:, FEATURES.index(PRICE_COLUMN)] = np.nan
    return rows


# -- exogenous scenarios --------------------------------------------------------

@dataclass
class ExogenousProfiles:
    hours: list[int]
    price: np.ndarray  # expected day-ahead price per period
    solar_peak: float
    price_noise: float = 2.0  # std of the day-ahead noise
    price_ar: float = 0.7  # lag-one correlation between consecutive periods
    solar_noise: float = 0.25  # relative std of the solar multiplier


def generate_exogenous_scenarios(profiles: ExogenousProfiles, count: int, seed: int,
                                 shocks: int = 1, shock_seed: int | None = None) -> ScenarioSet:
    """Day-ahead prices with AR(1) noise and noisy clear-sky solar, per scenario.

    Demand shocks are drawn from ``shock_seed`` (defaults to ``seed``) with a
    separate generator so they do not depend on the exogenous draws.
    """
    if count < 1:
        raise ValueError("scenario count must be >= 1")
    rng = np.random.default_rng(seed)
    T = len(profiles.hours)
    price = np.asarray(profiles.price, dtype=float)
    if price.shape != (T,):
        raise ValueError(f"price profile has {price.size} entries for {T} periods")
    phi = profiles.price_ar
    eps = rng.standard_normal((count, T))
    noise = np.empty((count, T))
    noise[:, 0] = eps[:, 0]
    for t in range(1, T):
        noise[:, t] = phi * noise[:, t - 1] + np.sqrt(1.0 - phi ** 2) * eps[:, t]
    da = price + profiles.price_noise * noise
    bell = solar_bell(profiles.hours, profiles.solar_peak)
    mult = 1.0 + profiles.solar_noise * rng.standard_normal((count, T))
    solar = np.maximum(bell * mult, 0.0)
    z = sample_scenarios(count, shocks, seed if shock_seed is None else shock_seed).z
    return ScenarioSet(z, np.full(count, 1.0 / count), {"da_price": da, "solar": solar}, seed)
