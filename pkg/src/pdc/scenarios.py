"""Synthetic networks and demand profiles for desk-scale experiments."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .domain import IntervalGrid, Order, Zone, ZoneRegistry
from .ingest import LevelShift, SyntheticProfile, generate_synthetic, generate_weather

# lunch and dinner peaks, quiet afternoon
DAILY_SHAPE = np.array(
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.6, 1.0, 1.6, 1.3, 0.7, 0.5, 0.6, 1.0, 1.8, 2.0, 1.4, 0.8, 0.3, 0]
)
WEEKLY_SHAPE = (0.9, 0.85, 0.9, 1.0, 1.2, 1.35, 1.25)


def hex_network(rows: int, cols: int, pickup=None, origin=(52.0, 4.0), spacing=0.01) -> ZoneRegistry:
    """Offset-row hexagonal lattice; each zone touches up to six neighbours.

    ``pickup`` is a boolean vector over zones (row-major); default all pick-up.
    """
    n = rows * cols
    pickup = np.ones(n, dtype=bool) if pickup is None else np.asarray(pickup, dtype=bool)
    adj = np.zeros((n, n), dtype=bool)

    def zid(r, c):
        return r * cols + c

    for r in range(rows):
        for c in range(cols):
            # odd rows are shifted right by half a cell
            shift = r % 2
            cand = [(r, c - 1), (r, c + 1),
                    (r - 1, c - 1 + shift), (r - 1, c + shift),
                    (r + 1, c - 1 + shift), (r + 1, c + shift)]
            for rr, cc in cand:
                if 0 <= rr < rows and 0 <= cc < cols:
                    adj[zid(r, c), zid(rr, cc)] = True
    adj = adj | adj.T
    zones = tuple(
        Zone(zid(r, c), origin[0] + r * spacing * 0.866, origin[1] + (c + 0.5 * (r % 2)) * spacing,
             bool(pickup[zid(r, c)]))
        for r in range(rows)
        for c in range(cols)
    )
    return ZoneRegistry(zones, adj)


def seasonal_profile(registry: ZoneRegistry, levels, shifts=(), weekly=WEEKLY_SHAPE) -> SyntheticProfile:
    """Per-zone level times the shared daily shape, with optional level shifts."""
    levels = np.asarray(levels, dtype=float)
    base = levels[:, None] * DAILY_SHAPE[None, :]
    return SyntheticProfile(base, tuple(weekly), list(shifts))


def random_level_shifts(n_zones: int, n_positions: int, n_events: int, rng,
                        length=(8, 24), multipliers=(0.2, 2.5)) -> list[LevelShift]:
    """Sustained multi-interval demand jumps or collapses at random zones and times."""
    events = []
    for _ in range(n_events):
        z = int(rng.integers(n_zones))
        start = int(rng.integers(0, max(1, n_positions - length[1])))
        stop = start + int(rng.integers(length[0], length[1] + 1))
        mult = float(rng.choice(multipliers))
        events.append(LevelShift(z, start, stop, mult))
    return events


def hotspot_day(rows: int = 5, cols: int = 5, n_pickup: int | None = 12, rate: float = 0.5,
                hotspot_share: float = 0.95, decay_hops: float = 0.5, n_phases: int = 6,
                max_dest_hops: int | None = None, open_minute: int = 630, close_minute: int = 1290,
                seed: int = 0, day=None):
    """One business day whose demand concentrates around a moving centre.

    The horizon is cut into ``n_phases`` equal phases, each with its own
    centre drawn from the pick-up zones. A share ``hotspot_share`` of
    arrivals is picked up near the centre with weight
    ``exp(-hops / decay_hops)``; the rest spread uniformly over pick-up zones.
    Destinations are uniform over zones within ``max_dest_hops`` of the
    pick-up (all zones when None). ``n_pickup=None`` makes every zone a
    pick-up zone.

    Returns ``(registry, orders)``.
    """
    rng = np.random.default_rng(seed)
    n = rows * cols
    n_pickup = n if n_pickup is None else n_pickup
    if not 1 <= n_pickup <= n:
        raise ValueError(f"n_pickup must lie in [1, {n}]")
    if not 0 <= hotspot_share <= 1 or decay_hops <= 0 or n_phases < 1:
        raise ValueError("need hotspot_share in [0, 1], decay_hops > 0 and n_phases >= 1")
    pick = np.zeros(n, dtype=bool)
    pick[rng.choice(n, n_pickup, replace=False)] = True
    registry = hex_network(rows, cols, pick)
    pz = np.array(registry.pickup_zones)
    hops = shortest_path(registry.adjacency.astype(float), unweighted=True, directed=False)
    centres = rng.choice(pz, size=n_phases, replace=n_phases > len(pz))
    weights = []
    for c in centres:
        w = np.exp(-hops[c, pz] / decay_hops)
        weights.append(hotspot_share * w / w.sum() + (1 - hotspot_share) / len(pz))
    reach = hops <= (np.inf if max_dest_hops is None else max_dest_hops)
    day = day or dt.date(2024, 3, 4)
    span = close_minute - open_minute
    orders = []
    for minute in range(open_minute, close_minute):
        w = weights[(minute - open_minute) * n_phases // span]
        for _ in range(rng.poisson(rate)):
            p = int(pz[rng.choice(len(pz), p=w)])
            dests = np.flatnonzero(reach[p])
            d = int(dests[rng.integers(len(dests))])
            orders.append(Order(day, minute, f"o{len(orders):07d}", p, d))
    return registry, orders


@dataclass
class ForecastScenario:
    registry: ZoneRegistry
    grid: IntervalGrid
    orders: list
    weather: list
    holidays: list
    test_start: dt.date
    events: list


def forecast_scenario(seed: int = 0, rows: int = 2, cols: int = 5, train_days: int = 21,
                      test_days: int = 7, business_hours=(630, 1290), level_range=(1.0, 4.0),
                      n_events: int = 40, first_day=dt.date(2024, 3, 4)) -> ForecastScenario:
    """Seasonal zone demand with injected multi-interval level shifts.

    Each zone gets a level drawn from ``level_range`` times the shared daily and
    weekly shapes; ``n_events`` level shifts hit random zones and times.
    """
    rng = np.random.default_rng(seed)
    registry = hex_network(rows, cols)
    days = [first_day + dt.timedelta(days=i) for i in range(train_days + test_days)]
    grid = IntervalGrid(business_hours[0], business_hours[1], days)
    levels = rng.uniform(*level_range, size=registry.n_zones)
    events = random_level_shifts(registry.n_zones, len(grid), n_events, rng)
    profile = seasonal_profile(registry, levels, events)
    orders = generate_synthetic(registry, grid, profile, seed)
    weather = generate_weather(days, seed)
    holidays = [days[len(days) // 3]]
    return ForecastScenario(registry, grid, orders, weather, holidays, days[train_days], events)
