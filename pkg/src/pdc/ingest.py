"""Orders, weather and holidays in; per-zone demand series and feature tables out."""
from __future__ import annotations

import csv
import datetime as dt
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import (
    SLOT_MINUTES,
    DemandSeries,
    IntervalGrid,
    IntervalIndex,
    Order,
    ZoneRegistry,
)

N_LAGS = 4
TEMPORAL_FEATURES = ("hour", "dow", "holiday")
WEATHER_FEATURES = ("temp", "precip", "wind")
LAG_FEATURES = tuple(f"lag_{k}" for k in range(N_LAGS))


@dataclass(frozen=True)
class WeatherRecord:
    day: dt.date
    hour: int
    temp: float
    precip: float
    wind: float

    def __post_init__(self):
        if not 0 <= self.hour <= 23:
            raise ValueError(f"weather hour {self.hour} outside 0-23")
        if self.precip < 0 or self.wind < 0:
            raise ValueError(f"negative precipitation/wind on {self.day} {self.hour}h")


@dataclass
class FeatureTable:
    """Feature matrix for one zone, one row per target interval.

    Columns follow ``schema``. ``lag_0`` is the count of the interval right
    before the target, ``lag_3`` the oldest of the four.
    """

    zone: int
    schema: tuple[str, ...]
    intervals: list[IntervalIndex]
    X: np.ndarray
    y: np.ndarray | None = None

    def __len__(self):
        return len(self.intervals)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.schema.index(name)]

    def subset(self, mask) -> FeatureTable:
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return FeatureTable(
            self.zone,
            self.schema,
            [self.intervals[i] for i in idx],
            self.X[idx],
            None if self.y is None else self.y[idx],
        )


@dataclass
class AggregationReport:
    n_orders: int = 0
    n_counted: int = 0
    dropped_ids: list[str] = field(default_factory=list)

    @property
    def n_dropped(self) -> int:
        return len(self.dropped_ids)


def aggregate_orders(
    orders: Iterable[Order], registry: ZoneRegistry, grid: IntervalGrid
) -> tuple[dict[int, DemandSeries], AggregationReport]:
    """Count orders per pick-up zone and grid interval.

    Orders outside the grid's business hours or days are dropped and listed in
    the report.
    """
    pickups = registry.pickup_zones
    counts = {z: np.zeros(len(grid), dtype=np.int64) for z in pickups}
    report = AggregationReport()
    for o in orders:
        report.n_orders += 1
        if o.pickup not in counts:
            kind = "a pick-up zone" if o.pickup in registry else "registered"
            raise ValueError(f"order {o.id}: pickup zone {o.pickup} is not {kind}")
        if o.destination not in registry:
            raise ValueError(f"order {o.id}: destination zone {o.destination} is not registered")
        k = grid.position(o.day, o.minute)
        if k is None:
            report.dropped_ids.append(o.id)
            continue
        counts[o.pickup][k] += 1
        report.n_counted += 1
    intervals = tuple(grid)
    series = {
        z: DemandSeries(z, intervals, c, open_minute=grid.open_minute) for z, c in counts.items()
    }
    return series, report


def feature_schema(include_weather: bool, include_lags: bool) -> tuple[str, ...]:
    schema = TEMPORAL_FEATURES
    if include_weather:
        schema += WEATHER_FEATURES
    if include_lags:
        schema += LAG_FEATURES
    return schema


def assemble_features(
    series: DemandSeries,
    weather: Iterable[WeatherRecord] | None = None,
    holidays: Iterable[dt.date] = (),
    include_lags: bool = True,
    include_weather: bool = False,
    with_target: bool = True,
) -> FeatureTable:
    """Build the predictor rows for every interval of ``series``.

    Temporal and weather features describe the target interval. With
    ``include_lags`` the first four intervals (no full history) are skipped;
    lags run across day boundaries along the series order.
    """
    holidays = set(holidays)
    wx = {}
    if include_weather:
        if weather is None:
            raise ValueError("include_weather requires weather records")
        for rec in weather:
            key = (rec.day, rec.hour)
            if key in wx:
                raise ValueError(f"duplicate weather record for {rec.day} hour {rec.hour}")
            wx[key] = rec

    schema = feature_schema(include_weather, include_lags)
    start = N_LAGS if include_lags else 0
    rows, intervals, targets, missing = [], [], [], []
    counts = series.counts
    for k in range(start, len(series)):
        iv = series.intervals[k]
        hour = series.start_minute(k) // 60
        row = [hour, iv.day.weekday(), 1 if iv.day in holidays else 0]
        if include_weather:
            rec = wx.get((iv.day, hour))
            if rec is None:
                missing.append((iv.day, hour))
                continue
            row += [rec.temp, rec.precip, rec.wind]
        if include_lags:
            row += [counts[k - 1 - j] for j in range(N_LAGS)]
        rows.append(row)
        intervals.append(iv)
        targets.append(counts[k])
    if missing:
        gaps = sorted(set(missing))
        shown = ", ".join(f"{d.isoformat()} {h:02d}h" for d, h in gaps[:10])
        more = f" (+{len(gaps) - 10} more)" if len(gaps) > 10 else ""
        raise ValueError(f"weather missing for {len(gaps)} hour(s): {shown}{more}")
    X = np.asarray(rows, dtype=float).reshape(len(rows), len(schema))
    y = np.asarray(targets, dtype=float) if with_target else None
    return FeatureTable(series.zone, schema, intervals, X, y)


@dataclass
class LevelShift:
    """Multiply a zone's rate over grid positions ``[start, stop)``."""

    zone: int
    start: int
    stop: int
    multiplier: float


@dataclass
class SyntheticProfile:
    base_rates: np.ndarray  # (n_zones, 24) expected orders per 15-minute interval
    dow_multipliers: Sequence[float] = (1.0,) * 7
    events: list[LevelShift] = field(default_factory=list)

    def rates(self, registry: ZoneRegistry, grid: IntervalGrid) -> np.ndarray:
        """Expected count per (grid position, zone); zero for non-pickup zones."""
        base = np.asarray(self.base_rates, dtype=float)
        if base.shape != (registry.n_zones, 24):
            raise ValueError(f"base_rates must have shape ({registry.n_zones}, 24)")
        dow = np.asarray(self.dow_multipliers, dtype=float)
        if dow.shape != (7,):
            raise ValueError("dow_multipliers needs 7 values")
        if (base < 0).any() or (dow < 0).any():
            raise ValueError("synthetic rates must be non-negative")
        lam = np.zeros((len(grid), registry.n_zones))
        hours = np.array([grid.start_minute(iv) // 60 for iv in grid], dtype=int)
        dows = np.array([iv.day.weekday() for iv in grid], dtype=int)
        lam[:] = base[:, hours].T * dow[dows, None]
        for ev in self.events:
            if ev.multiplier < 0:
                raise ValueError("event multiplier must be non-negative")
            lam[ev.start : ev.stop, ev.zone] *= ev.multiplier
        pickup = np.zeros(registry.n_zones, dtype=bool)
        pickup[registry.pickup_zones] = True
        lam[:, ~pickup] = 0.0
        return lam


def generate_synthetic(
    registry: ZoneRegistry, grid: IntervalGrid, profile: SyntheticProfile, seed: int
) -> list[Order]:
    """Draw a Poisson order stream; deterministic given ``seed``."""
    lam = profile.rates(registry, grid)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(lam)
    orders = []
    n = registry.n_zones
    for k, iv in enumerate(grid):
        row = counts[k]
        total = int(row.sum())
        if not total:
            continue
        zones = np.repeat(np.arange(n), row)
        offsets = rng.integers(0, SLOT_MINUTES, size=total)
        dests = rng.integers(0, n, size=total)
        start = grid.start_minute(iv)
        for z, off, d in zip(zones, offsets, dests):
            orders.append(Order(iv.day, start + int(off), "", int(z), int(d)))
    orders.sort(key=lambda o: (o.day, o.minute, o.pickup, o.destination))
    return [
        Order(o.day, o.minute, f"o{i:07d}", o.pickup, o.destination) for i, o in enumerate(orders)
    ]


def generate_weather(days: Sequence[dt.date], seed: int) -> list[WeatherRecord]:
    """Plausible hourly weather for synthetic scenarios (diurnal temperature, showers)."""
    rng = np.random.default_rng(seed)
    out = []
    for d in days:
        day_mean = 12.0 + rng.normal(0, 4)
        rainy = rng.random() < 0.3
        for h in range(24):
            temp = day_mean + 5.0 * np.sin((h - 9) / 24 * 2 * np.pi) + rng.normal(0, 0.5)
            precip = max(0.0, rng.gamma(0.8, 1.5)) if rainy and rng.random() < 0.5 else 0.0
            wind = abs(rng.normal(3.5, 1.5))
            out.append(WeatherRecord(d, h, round(temp, 1), round(precip, 1), round(wind, 1)))
    return out


# -- file formats ------------------------------------------------------------


def parse_timestamp(text: str) -> tuple[dt.date, int]:
    stamp = dt.datetime.strptime(text.strip(), "%Y-%m-%dT%H:%M")
    return stamp.date(), stamp.hour * 60 + stamp.minute


def read_orders(path: str | Path) -> list[Order]:
    orders = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["order_id", "timestamp", "pickup_zone", "dest_zone"]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: header must be {','.join(expected)}")
        for line, rec in enumerate(reader, start=2):
            try:
                day, minute = parse_timestamp(rec["timestamp"])
                orders.append(
                    Order(day, minute, rec["order_id"], int(rec["pickup_zone"]), int(rec["dest_zone"]))
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
    return orders


def write_orders(orders: Iterable[Order], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["order_id", "timestamp", "pickup_zone", "dest_zone"])
        for o in orders:
            w.writerow([o.id, o.timestamp, o.pickup, o.destination])


def read_weather(path: str | Path) -> list[WeatherRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line, rec in enumerate(csv.DictReader(fh), start=2):
            try:
                out.append(
                    WeatherRecord(
                        dt.date.fromisoformat(rec["date"]),
                        int(rec["hour"]),
                        float(rec["temp_c"]),
                        float(rec["precip_mm"]),
                        float(rec["wind_mps"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
    return out


def write_weather(records: Iterable[WeatherRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "hour", "temp_c", "precip_mm", "wind_mps"])
        for r in records:
            w.writerow([r.day.isoformat(), r.hour, r.temp, r.precip, r.wind])


def read_holidays(path: str | Path) -> set[dt.date]:
    with open(path, encoding="utf-8") as fh:
        return {dt.date.fromisoformat(s.strip()) for s in fh if s.strip()}


def write_holidays(days: Iterable[dt.date], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in sorted(days):
            fh.write(d.isoformat() + "\n")
