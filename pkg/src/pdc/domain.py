"""Core vocabulary: zones, 15-minute intervals, demand series and orders."""
from __future__ import annotations

import datetime as dt
import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

SLOT_MINUTES = 15


class InvariantError(RuntimeError):
    """An internal invariant was breached.

    Carries the owning module and the invariant name so the CLI can report
    them.
    """

    def __init__(self, module: str, invariant: str, detail: str = ""):
        self.module = module
        self.invariant = invariant
        msg = f"{module}: invariant '{invariant}' violated"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class Zone:
    id: int
    lat: float
    lng: float
    is_pickup: bool


@dataclass(frozen=True)
class ZoneRegistry:
    """Ordered zones plus a symmetric boolean adjacency matrix.

    Zone identity is positional: ``zones[i].id == i``.
    """

    zones: tuple[Zone, ...]
    adjacency: np.ndarray = field(repr=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "zones", tuple(self.zones))

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def pickup_zones(self) -> list[int]:
        return [z.id for z in self.zones if z.is_pickup]

    @property
    def centroids(self) -> np.ndarray:
        return np.array([[z.lat, z.lng] for z in self.zones], dtype=float).reshape(-1, 2)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def __contains__(self, zone_id) -> bool:
        return isinstance(zone_id, (int, np.integer)) and 0 <= zone_id < len(self.zones)

    @classmethod
    def from_records(cls, records: list[dict]) -> ZoneRegistry:
        records = sorted(records, key=lambda r: int(r["id"]))
        n = len(records)
        ids = [int(r["id"]) for r in records]
        if ids != list(range(n)):
            raise ValueError(f"zone ids must be 0..{n - 1} without gaps, got {ids}")
        adj = np.zeros((n, n), dtype=bool)
        for r in records:
            for j in r.get("adjacent", []):
                j = int(j)
                if not 0 <= j < n:
                    raise ValueError(f"zone {r['id']} lists unknown neighbour {j}")
                adj[int(r["id"]), j] = True
        zones = tuple(
            Zone(int(r["id"]), float(r["lat"]), float(r["lng"]), bool(r["is_pickup"]))
            for r in records
        )
        return cls(zones, adj)

    def to_records(self) -> list[dict]:
        return [
            {
                "id": z.id,
                "lat": z.lat,
                "lng": z.lng,
                "is_pickup": z.is_pickup,
                "adjacent": self.neighbors(z.id),
            }
            for z in self.zones
        ]


def validate_network(registry: ZoneRegistry) -> list[str]:
    """Return every invariant violation of ``registry``; empty means ok."""
    problems = []
    adj = registry.adjacency
    n = registry.n_zones
    if adj.shape != (n, n):
        return [f"adjacency shape {adj.shape} does not match {n} zones"]
    if not np.array_equal(adj, adj.T):
        problems.append("adjacency not symmetric")
    if n and adj.diagonal().any():
        problems.append("adjacency diagonal must be false")
    if not any(z.is_pickup for z in registry.zones):
        problems.append("no pick-up zone")
    for pos, z in enumerate(registry.zones):
        if z.id != pos:
            problems.append(f"zone at position {pos} has id {z.id}")
        if not (np.isfinite(z.lat) and np.isfinite(z.lng)):
            problems.append(f"zone {z.id} centroid not finite")
    return problems


def load_zones(path: str | Path) -> ZoneRegistry:
    """Read ``zones.json``; raises ValueError when adjacency is not symmetric."""
    with open(path, encoding="utf-8") as fh:
        registry = ZoneRegistry.from_records(json.load(fh))
    problems = validate_network(registry)
    if problems:
        raise ValueError(f"{path}: " + "; ".join(problems))
    return registry


def save_zones(registry: ZoneRegistry, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(registry.to_records(), fh, indent=1)
        fh.write("\n")


class IntervalIndex(NamedTuple):
    day: dt.date
    slot: int


class IntervalGrid(Sequence):
    """Chronological business-hour 15-minute intervals over a run of days."""

    def __init__(self, open_minute: int, close_minute: int, days: Sequence[dt.date]):
        if close_minute <= open_minute:
            raise ValueError("business hours: close must be after open")
        if (close_minute - open_minute) % SLOT_MINUTES:
            raise ValueError(
                f"business window {open_minute}-{close_minute} is not divisible "
                f"into {SLOT_MINUTES}-minute intervals"
            )
        if not 0 <= open_minute < close_minute <= 1440:
            raise ValueError("business hours must lie within one day")
        days = list(days)
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError("days must be strictly increasing")
        self.open_minute = open_minute
        self.close_minute = close_minute
        self.days = days
        self.slots_per_day = (close_minute - open_minute) // SLOT_MINUTES
        self._day_pos = {d: i for i, d in enumerate(days)}

    def __len__(self):
        return len(self.days) * self.slots_per_day

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        d, s = divmod(k, self.slots_per_day)
        return IntervalIndex(self.days[d], s)

    def start_minute(self, interval: IntervalIndex) -> int:
        return self.open_minute + SLOT_MINUTES * interval.slot

    def position(self, day: dt.date, minute: int) -> int | None:
        """Flat index of the interval holding ``minute`` on ``day``, or None."""
        d = self._day_pos.get(day)
        if d is None or not self.open_minute <= minute < self.close_minute:
            return None
        return d * self.slots_per_day + (minute - self.open_minute) // SLOT_MINUTES

    def index_of(self, interval: IntervalIndex) -> int:
        return self._day_pos[interval.day] * self.slots_per_day + interval.slot


def date_range(first: dt.date, last: dt.date) -> list[dt.date]:
    """Inclusive list of consecutive dates."""
    return [first + dt.timedelta(days=i) for i in range((last - first).days + 1)]


def interval_sequence(business_hours: tuple[int, int], days: Sequence[dt.date]) -> IntervalGrid:
    """Build the interval grid for ``business_hours`` over ``days``.

    >>> len(interval_sequence((630, 1290), [dt.date(2024, 1, 1)]))
    44
    """
    return IntervalGrid(business_hours[0], business_hours[1], list(days))


@dataclass(frozen=True)
class DemandSeries:
    zone: int
    intervals: tuple[IntervalIndex, ...]
    counts: np.ndarray = field(repr=False)
    open_minute: int = 0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.intervals),):
            raise ValueError("counts length must equal intervals length")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        if any(b <= a for a, b in zip(self.intervals, self.intervals[1:])):
            raise ValueError("intervals must be strictly increasing")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "intervals", tuple(self.intervals))

    def __len__(self):
        return len(self.counts)

    def start_minute(self, k: int) -> int:
        return self.open_minute + SLOT_MINUTES * self.intervals[k].slot


@dataclass(frozen=True, order=True)
class Order:
    day: dt.date
    minute: int
    id: str
    pickup: int
    destination: int

    @property
    def timestamp(self) -> str:
        h, m = divmod(self.minute, 60)
        return f"{self.day.isoformat()}T{h:02d}:{m:02d}"
