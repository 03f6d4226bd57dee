"""Price and aggregator series: file round trips and synthetic generation.

The one-year dataset used as the study's source is not redistributable, so a
seeded synthetic generator stands in: sinusoidal daily/weekly shapes plus
noise, with the export price at a fixed 0.9 spread below the import price
and balancing prices straddling it.  Profiles are plausible placeholders,
not measurements.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import BadLength, NonFiniteValue, SchemaError

WEEK_HOURS = 168
PRICE_FIELDS = ["hour", "p_im", "p_ex", "p_bal_pos", "p_bal_neg"]
SERIES_FIELDS = ["hour", "agg_id", "gen_cap", "demand"]
EXPORT_SPREAD = 0.9


@dataclass
class PriceSeries:
    """Hourly market prices; length is a whole number of weeks."""

    p_im: np.ndarray
    p_ex: np.ndarray
    p_bal_pos: np.ndarray
    p_bal_neg: np.ndarray

    def __post_init__(self):
        for name in ("p_im", "p_ex", "p_bal_pos", "p_bal_neg"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            setattr(self, name, arr)
            if not np.isfinite(arr).all():
                raise NonFiniteValue(f"{name} contains non-finite values")
        n = len(self.p_im)
        if any(len(getattr(self, f)) != n for f in ("p_ex", "p_bal_pos", "p_bal_neg")):
            raise BadLength("price columns differ in length")
        if n == 0 or n % WEEK_HOURS:
            raise BadLength(f"price series length {n} is not a multiple of {WEEK_HOURS}")

    @property
    def n_weeks(self) -> int:
        return len(self.p_im) // WEEK_HOURS

    def week(self, w: int) -> "PriceSeries":
        s = slice(w * WEEK_HOURS, (w + 1) * WEEK_HOURS)
        return PriceSeries(self.p_im[s], self.p_ex[s], self.p_bal_pos[s], self.p_bal_neg[s])


@dataclass
class AggregatorSeries:
    """Per-aggregator generation capacity and demand, hour by hour."""

    ids: list[int]
    gen_cap: np.ndarray  # (I, H)
    demand: np.ndarray  # (I, H)

    def __post_init__(self):
        self.gen_cap = np.asarray(self.gen_cap, dtype=float).reshape(len(self.ids), -1)
        self.demand = np.asarray(self.demand, dtype=float).reshape(len(self.ids), -1)
        if self.gen_cap.shape != self.demand.shape:
            raise BadLength("gen_cap and demand shapes differ")
        if not (np.isfinite(self.gen_cap).all() and np.isfinite(self.demand).all()):
            raise NonFiniteValue("aggregator series contain non-finite values")
        if (self.gen_cap < 0).any() or (self.demand < 0).any():
            raise SchemaError("aggregator series must be >= 0")

    def week(self, w: int) -> tuple[np.ndarray, np.ndarray]:
        s = slice(w * WEEK_HOURS, (w + 1) * WEEK_HOURS)
        return self.gen_cap[:, s], self.demand[:, s]


def load_prices(path) -> PriceSeries:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PRICE_FIELDS:
            raise SchemaError(f"expected header {','.join(PRICE_FIELDS)}, got {reader.fieldnames}")
        rows = list(reader)
    try:
        cols = {f: np.array([float(r[f]) for r in rows]) for f in PRICE_FIELDS[1:]}
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"non-numeric price entry: {exc}") from exc
    return PriceSeries(cols["p_im"], cols["p_ex"], cols["p_bal_pos"], cols["p_bal_neg"])


def save_prices(prices: PriceSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PRICE_FIELDS)
        for h in range(len(prices.p_im)):
            writer.writerow([h, repr(prices.p_im[h]), repr(prices.p_ex[h]),
                             repr(prices.p_bal_pos[h]), repr(prices.p_bal_neg[h])])


def load_series(path) -> AggregatorSeries:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SERIES_FIELDS:
            raise SchemaError(f"expected header {','.join(SERIES_FIELDS)}, got {reader.fieldnames}")
        rows = list(reader)
    ids = sorted({int(r["agg_id"]) for r in rows})
    index = {a: i for i, a in enumerate(ids)}
    n_hours = max(int(r["hour"]) for r in rows) + 1
    gen_cap = np.full((len(ids), n_hours), np.nan)
    demand = np.full((len(ids), n_hours), np.nan)
    for r in rows:
        i, h = index[int(r["agg_id"])], int(r["hour"])
        gen_cap[i, h] = float(r["gen_cap"])
        demand[i, h] = float(r["demand"])
    if np.isnan(gen_cap).any() or np.isnan(demand).any():
        raise BadLength("aggregator series has gaps")
    return AggregatorSeries(ids=ids, gen_cap=gen_cap, demand=demand)


def save_series(series: AggregatorSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_FIELDS)
        for i, agg in enumerate(series.ids):
            for h in range(series.gen_cap.shape[1]):
                writer.writerow([h, agg, repr(series.gen_cap[i, h]), repr(series.demand[i, h])])


def generate_synthetic_data(seed: int, weeks: int, n_aggregators: int = 10,
                            mean_price: float = 50.0, cap_scale: float = 3.0,
                            demand_scale: float = 2.0) -> tuple[PriceSeries, AggregatorSeries]:
    """Seeded synthetic year: prices plus aggregator capacity/demand.

    Import prices follow daily and weekly sinusoids with noise; the export
    price is exactly 0.9 of the import price; positive balancing prices sit
    below the import price and negative ones above it.
    """
    if weeks < 1:
        raise BadLength("weeks must be >= 1")
    rng = np.random.default_rng(seed)
    H = weeks * WEEK_HOURS
    t = np.arange(H)
    day = 2.0 * np.pi * (t % 24) / 24.0
    week = 2.0 * np.pi * (t % WEEK_HOURS) / WEEK_HOURS

    p_im = mean_price * (1.0 + 0.22 * np.sin(day - 0.8 * np.pi)
                         + 0.08 * np.sin(2.0 * day + 0.3)
                         + 0.06 * np.sin(week))
    p_im = np.maximum(p_im + rng.normal(0.0, 0.04 * mean_price, H), 0.1 * mean_price)
    p_ex = EXPORT_SPREAD * p_im
    p_pos = p_im * rng.uniform(0.80, 0.97, H)
    p_neg = p_im * rng.uniform(1.05, 1.40, H)
    prices = PriceSeries(p_im, p_ex, p_pos, p_neg)

    ids = list(range(1, n_aggregators + 1))
    phase = rng.uniform(0.0, 2.0 * np.pi, n_aggregators)
    spread = rng.uniform(0.7, 1.3, n_aggregators)
    gen_cap = cap_scale * spread[:, None] * (
        0.75 + 0.25 * np.sin(day[None, :] - phase[:, None]))
    demand = demand_scale * spread[:, None] * (
        0.8 + 0.2 * np.sin(day[None, :] - 1.1 * np.pi))
    gen_cap = np.maximum(gen_cap + rng.normal(0.0, 0.05 * cap_scale, gen_cap.shape), 0.0)
    demand = np.maximum(demand + rng.normal(0.0, 0.05 * demand_scale, demand.shape), 0.0)
    return prices, AggregatorSeries(ids=ids, gen_cap=gen_cap, demand=demand)


def auto_week_split(n_weeks: int) -> dict:
    """Deterministic train/eval/test split over a year-like horizon.

    Test weeks are evenly spaced, one out of every four consecutive weeks;
    with 52 weeks this yields 12 test weeks, one evaluation week and 39
    training weeks.
    """
    if n_weeks < 12:
        raise BadLength("auto split needs at least 12 weeks; give explicit splits below that")
    test = list(range(2, n_weeks - 2, 4))[:12]
    eval_week = n_weeks - 2
    train = [w for w in range(n_weeks) if w not in test and w != eval_week]
    return {"train": train, "eval": eval_week, "test": test}
