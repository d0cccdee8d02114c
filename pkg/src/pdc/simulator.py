"""Minute-step meal-delivery fleet simulator with idle-courier relocation."""
from __future__ import annotations

import csv
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .domain import SLOT_MINUTES, Order, ZoneRegistry


@dataclass(frozen=True)
class SimConfig:
    fleet_size: int = 30
    step_minutes: int = 1
    service_minutes: int = 3
    idle_threshold: int = 5
    minutes_per_hop: float = 4.0
    open_minute: int = 630
    close_minute: int = 1290
    seed: int = 0

    def __post_init__(self):
        if self.fleet_size < 1 or self.service_minutes < 1 or self.idle_threshold < 1:
            raise ValueError("fleet_size, service_minutes and idle_threshold must be positive")
        if self.step_minutes != 1:
            raise ValueError("only one-minute steps are supported")
        if not self.minutes_per_hop > 0:
            raise ValueError("minutes_per_hop must be positive")
        if self.close_minute <= self.open_minute:
            raise ValueError("horizon must end after it starts")


class HopTable:
    """All-pairs hop counts on the adjacency graph."""

    def __init__(self, registry: ZoneRegistry):
        self.hops = shortest_path(registry.adjacency.astype(float), unweighted=True, directed=False)

    def travel(self, i: int, j: int, minutes_per_hop: float) -> int:
        h = self.hops[i, j]
        if not np.isfinite(h):
            raise ValueError(f"zones {i} and {j} are not connected")
        return int(math.ceil(h * minutes_per_hop - 1e-9))

    def travel_matrix(self, minutes_per_hop: float) -> np.ndarray:
        if not np.isfinite(self.hops).all():
            i, j = np.argwhere(~np.isfinite(self.hops))[0]
            raise ValueError(f"zones {i} and {j} are not connected")
        return np.ceil(self.hops * minutes_per_hop - 1e-9).astype(np.int64)


def travel_time(i: int, j: int, registry: ZoneRegistry, minutes_per_hop: float) -> int:
    """Hop distance times ``minutes_per_hop``, rounded up; 0 for the same zone."""
    return HopTable(registry).travel(i, j, minutes_per_hop)


class PolicyKind(str, Enum):
    NONE = "none"
    NEAREST_PICKUP = "nearest_pickup"
    FORWARD_LOOKING = "forward_looking"


DemandOracle = Callable[[int], np.ndarray]


class SlotDemandOracle:
    """Per-zone demand of the 15-minute slot containing a given minute.

    ``table[k, z]`` is demand (predicted or actual) for slot ``k`` of the day.
    """

    def __init__(self, table, open_minute: int):
        self.table = np.asarray(table, dtype=float)
        self.open_minute = open_minute

    def __call__(self, minute: int) -> np.ndarray:
        k = (minute - self.open_minute) // SLOT_MINUTES
        k = min(max(k, 0), len(self.table) - 1)
        return self.table[k]

    @classmethod
    def from_orders(cls, orders: Sequence[Order], registry: ZoneRegistry, open_minute: int,
                    close_minute: int) -> SlotDemandOracle:
        n_slots = (close_minute - open_minute) // SLOT_MINUTES
        table = np.zeros((n_slots, registry.n_zones))
        for o in orders:
            if open_minute <= o.minute < close_minute:
                table[(o.minute - open_minute) // SLOT_MINUTES, o.pickup] += 1
        return cls(table, open_minute)


@dataclass(frozen=True)
class RelocationPolicy:
    kind: PolicyKind = PolicyKind.NONE
    demand_oracle: DemandOracle | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.FORWARD_LOOKING and self.demand_oracle is None:
            raise ValueError("forward-looking relocation needs a demand oracle")


@dataclass
class Courier:
    id: int
    zone: int
    busy_until: int
    idle_since: int
    busy: bool = False

    @property
    def status(self) -> str:
        return "busy" if self.busy else "idle"


@dataclass
class OrderRecord:
    order_id: str
    arrival: int
    courier: int | None
    delivery_time: int | None

    @property
    def rejected(self) -> bool:
        return self.courier is None


@dataclass
class SimResult:
    records: list[OrderRecord]
    relocations: int
    courier_starts: list[int]
    n_outside_horizon: int = 0

    @property
    def n_arrived(self) -> int:
        return len(self.records)

    @property
    def n_delivered(self) -> int:
        return sum(not r.rejected for r in self.records)

    @property
    def n_rejected(self) -> int:
        return sum(r.rejected for r in self.records)

    @property
    def mean_delivery_time(self) -> float:
        times = [r.delivery_time for r in self.records if not r.rejected]
        return float(np.mean(times)) if times else float("nan")

    @property
    def rejection_rate(self) -> float:
        return self.n_rejected / self.n_arrived if self.records else 0.0

    def kpis(self) -> dict:
        return {
            "mean_delivery_min": self.mean_delivery_time,
            "rejection_rate": self.rejection_rate,
            "relocations": self.relocations,
            "arrived": self.n_arrived,
            "delivered": self.n_delivered,
            "rejected": self.n_rejected,
        }

    def to_dict(self, config: SimConfig, policy: str) -> dict:
        return {
            "config": asdict(config),
            "policy": policy,
            "kpis": self.kpis(),
            "per_order": [asdict(r) for r in self.records],
        }


class SimulationState:
    """Fleet state for one simulated day; couriers are stored column-wise."""

    def __init__(self, registry: ZoneRegistry, config: SimConfig, hops: HopTable | None = None):
        self.registry = registry
        self.config = config
        self.hops = hops or HopTable(registry)
        self.travel = self.hops.travel_matrix(config.minutes_per_hop)
        self.pickups = np.array(registry.pickup_zones, dtype=np.int64)
        self.neighbors = [np.array(registry.neighbors(z), dtype=np.int64) for z in range(registry.n_zones)]
        rng = np.random.default_rng(config.seed)
        J = config.fleet_size
        self.zone = rng.integers(0, registry.n_zones, size=J)
        self.starts = self.zone.tolist()
        self.busy = np.zeros(J, dtype=bool)
        self.busy_until = np.full(J, config.open_minute, dtype=np.int64)
        self.idle_since = np.full(J, config.open_minute, dtype=np.int64)
        self.now = config.open_minute
        self.relocations = 0

    def courier(self, j: int) -> Courier:
        return Courier(j, int(self.zone[j]), int(self.busy_until[j]), int(self.idle_since[j]),
                       bool(self.busy[j]))

    def release(self) -> None:
        done = self.busy & (self.busy_until <= self.now)
        self.busy[done] = False
        self.idle_since[done] = self.now

    def idle_supply(self) -> np.ndarray:
        return np.bincount(self.zone[~self.busy], minlength=self.registry.n_zones)


def assign_order(state: SimulationState, order: Order) -> tuple[int, int] | None:
    """Give ``order`` to the nearest idle courier; returns (courier, delivery minutes) or None."""
    idle = np.flatnonzero(~state.busy)
    if not len(idle):
        return None
    to_pickup = state.travel[state.zone[idle], order.pickup]
    j = int(idle[np.argmin(to_pickup)])  # argmin keeps the lowest id on ties
    duration = (
        int(state.travel[state.zone[j], order.pickup])
        + int(state.travel[order.pickup, order.destination])
        + 2 * state.config.service_minutes
    )
    state.busy[j] = True
    state.busy_until[j] = state.now + duration
    state.zone[j] = order.destination
    return j, duration


def relocation_target(state: SimulationState, j: int, policy: RelocationPolicy) -> int | None:
    """Zone courier ``j`` should move to, or None to stay."""
    here = int(state.zone[j])
    if policy.kind is PolicyKind.NONE:
        return None
    if policy.kind is PolicyKind.NEAREST_PICKUP:
        if here in state.pickups:
            return None
        times = state.travel[here, state.pickups]
        return int(state.pickups[np.argmin(times)])
    candidates = np.concatenate([[here], np.sort(state.neighbors[here])])
    demand = np.asarray(policy.demand_oracle(state.now), dtype=float)
    shortage = demand[candidates] - state.idle_supply()[candidates]
    best = shortage.max()
    if shortage[0] == best:
        return None
    winners = candidates[1:][shortage[1:] == best]
    return int(winners.min())


def _sorted_day(orders: Sequence[Order]) -> list[Order]:
    orders = sorted(orders, key=lambda o: (o.day, o.minute, o.id))
    if len({o.day for o in orders}) > 1:
        raise ValueError("run_simulation simulates a single day; split orders by day first")
    return orders


def run_simulation(orders: Sequence[Order], registry: ZoneRegistry, config: SimConfig,
                   policy: RelocationPolicy = RelocationPolicy(), hops: HopTable | None = None) -> SimResult:
    """Simulate one day minute by minute.

    Each minute: release couriers whose task ended, assign the minute's orders
    (rejecting when nobody is idle), then offer relocation to couriers idle for
    at least ``idle_threshold`` minutes, lowest id first.
    """
    state = SimulationState(registry, config, hops)
    orders = _sorted_day(orders)
    inside = [o for o in orders if config.open_minute <= o.minute < config.close_minute]
    records = []
    pos = 0
    for now in range(config.open_minute, config.close_minute, config.step_minutes):
        state.now = now
        state.release()
        while pos < len(inside) and inside[pos].minute == now:
            o = inside[pos]
            pos += 1
            hit = assign_order(state, o)
            if hit is None:
                records.append(OrderRecord(o.id, o.minute, None, None))
            else:
                records.append(OrderRecord(o.id, o.minute, hit[0], hit[1]))
        if policy.kind is PolicyKind.NONE:
            continue
        ready = np.flatnonzero(~state.busy & (now - state.idle_since >= config.idle_threshold))
        for j in ready:
            target = relocation_target(state, int(j), policy)
            if target is None:
                state.idle_since[j] = now
                continue
            state.busy[j] = True
            state.busy_until[j] = now + int(state.travel[state.zone[j], target])
            state.zone[j] = target
            state.relocations += 1
    return SimResult(records, state.relocations, state.starts, len(orders) - len(inside))


@dataclass
class PolicyComparison:
    mean_delivery_min: dict[str, float]
    rejection_rate: dict[str, float]
    relocations: dict[str, float]
    reduction_vs_none_pct: dict[str, float]
    runs: dict[str, list[SimResult]] = field(default_factory=dict, repr=False)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "mean_delivery_min", "rejection_rate", "reduction_vs_none_pct"])
            for name in self.mean_delivery_min:
                w.writerow([name, repr(self.mean_delivery_min[name]), repr(self.rejection_rate[name]),
                            repr(self.reduction_vs_none_pct[name])])


def compare_policies(orders: Sequence[Order], registry: ZoneRegistry, config: SimConfig,
                     policies: Mapping[str, RelocationPolicy], repetitions: int = 100,
                     seed: int = 0) -> PolicyComparison:
    """Paired runs: repetition ``r`` starts every policy from the fleet drawn with ``seed + r``.

    Reductions are relative to the policy named ``"none"`` (NaN when absent).
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    hops = HopTable(registry)
    runs = {name: [] for name in policies}
    for r in range(repetitions):
        cfg = replace(config, seed=seed + r)
        for name, pol in policies.items():
            runs[name].append(run_simulation(orders, registry, cfg, pol, hops))
    mean_t = {n: float(np.nanmean([res.mean_delivery_time for res in rs])) for n, rs in runs.items()}
    rej = {n: float(np.mean([res.rejection_rate for res in rs])) for n, rs in runs.items()}
    rel = {n: float(np.mean([res.relocations for res in rs])) for n, rs in runs.items()}
    base = mean_t.get("none")
    if base is None or not base > 0:
        red = {n: float("nan") for n in runs}
    else:
        red = {n: 100.0 * (base - t) / base for n, t in mean_t.items()}
    return PolicyComparison(mean_t, rej, rel, red, runs)
