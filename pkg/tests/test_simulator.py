import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdc.domain import Order, Zone, ZoneRegistry
from pdc.simulator import (
    PolicyKind,
    RelocationPolicy,
    SimConfig,
    SimulationState,
    SlotDemandOracle,
    assign_order,
    compare_policies,
    relocation_target,
    run_simulation,
    travel_time,
)

from conftest import MONDAY, path_registry, random_connected_adjacency
from oracles import reference_simulation


def order(minute, pickup, dest, i=0):
    return Order(MONDAY, minute, f"o{i:04d}", pickup, dest)


def state_with(registry, zones, **cfg):
    state = SimulationState(registry, SimConfig(fleet_size=len(zones), **cfg))
    state.zone[:] = zones
    return state


def constant(demand):
    return lambda minute: np.asarray(demand, dtype=float)


def random_registry(rng, n):
    adj = random_connected_adjacency(n, rng)
    pickup = rng.random(n) < 0.6
    pickup[int(rng.integers(n))] = True
    zones = tuple(Zone(i, 52.0, 4.0 + 0.01 * i, bool(pickup[i])) for i in range(n))
    return ZoneRegistry(zones, adj)


class TestTravel:
    def test_examples(self):
        reg = path_registry(4)
        assert travel_time(2, 2, reg, 4.0) == 0
        assert travel_time(0, 1, reg, 4.0) == 4
        assert travel_time(0, 3, reg, 4.0) == 12
        assert travel_time(0, 3, reg, 2.5) == 8

    def test_disconnected(self):
        reg = ZoneRegistry((Zone(0, 52, 4, True), Zone(1, 52, 4.01, True)), np.zeros((2, 2), bool))
        with pytest.raises(ValueError):
            travel_time(0, 1, reg, 4.0)


class TestAssign:
    def test_formula(self):
        state = state_with(path_registry(2), [0])
        assert assign_order(state, order(630, 0, 1)) == (0, 10)
        assert state.busy[0] and state.busy_until[0] == 640 and state.zone[0] == 1

    def test_tie_to_lowest_id(self):
        state = state_with(path_registry(3), [2, 0, 2])
        assert assign_order(state, order(630, 1, 1))[0] == 0

    def test_rejection(self):
        state = state_with(path_registry(2), [0])
        assign_order(state, order(630, 0, 1))
        assert assign_order(state, order(630, 0, 1, 1)) is None


class TestRelocation:
    def test_forward_stays_on_top_shortage(self):
        state = state_with(path_registry(3), [1])
        pol = RelocationPolicy(PolicyKind.FORWARD_LOOKING, constant([0, 3, 1]))
        assert relocation_target(state, 0, pol) is None

    def test_forward_moves_to_neighbour(self):
        state = state_with(path_registry(3), [1])
        pol = RelocationPolicy(PolicyKind.FORWARD_LOOKING, constant([3, 0, 0]))
        assert relocation_target(state, 0, pol) == 0

    def test_forward_tie_goes_to_lowest_zone(self):
        state = state_with(path_registry(3), [1])
        pol = RelocationPolicy(PolicyKind.FORWARD_LOOKING, constant([2, 0, 2]))
        assert relocation_target(state, 0, pol) == 0

    def test_nearest_pickup(self):
        reg = path_registry(4, pickup=[False, True, False, True])
        state = state_with(reg, [0, 2, 3])
        pol = RelocationPolicy(PolicyKind.NEAREST_PICKUP)
        assert relocation_target(state, 0, pol) == 1
        assert relocation_target(state, 1, pol) == 1  # both pickups one hop away
        assert relocation_target(state, 2, pol) is None

    def test_forward_needs_oracle(self):
        with pytest.raises(ValueError):
            RelocationPolicy(PolicyKind.FORWARD_LOOKING)

    def test_slot_oracle(self):
        reg = path_registry(2)
        oracle = SlotDemandOracle.from_orders([order(630, 0, 1), order(646, 1, 0, 1), order(2000, 1, 1, 2)],
                                              reg, 630, 660)
        assert oracle(644).tolist() == [1, 0] and oracle(645).tolist() == [0, 1]
        assert oracle(5000).tolist() == [0, 1]


class TestRun:
    def test_zero_orders(self):
        res = run_simulation([], path_registry(3), SimConfig(fleet_size=4))
        assert (res.n_arrived, res.n_delivered, res.n_rejected, res.relocations) == (0, 0, 0, 0)

    def test_single_order(self):
        reg = path_registry(3)
        cfg = SimConfig(fleet_size=1, seed=0)
        res = run_simulation([order(700, 1, 2)], reg, cfg)
        start = res.courier_starts[0]
        assert res.records[0].delivery_time == travel_time(start, 1, reg, 4.0) + 4 + 6

    def test_mixed_days_rejected(self):
        other = Order(MONDAY.replace(day=5), 700, "x", 0, 0)
        with pytest.raises(ValueError):
            run_simulation([order(700, 0, 0), other], path_registry(2), SimConfig(fleet_size=1))

    @pytest.mark.parametrize("kind", ["none", "nearest_pickup", "forward_looking"])
    @given(seed=st.integers(0, 10_000))
    def test_matches_reference(self, kind, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        reg = random_registry(rng, n)
        pickups = reg.pickup_zones
        orders = [order(int(rng.integers(600, 760)), int(rng.choice(pickups)), int(rng.integers(n)), i)
                  for i in range(int(rng.integers(0, 40)))]
        cfg = SimConfig(fleet_size=int(rng.integers(1, 6)), minutes_per_hop=float(rng.choice([1.0, 2.5, 4.0])),
                        open_minute=630, close_minute=750, seed=seed)
        table = rng.poisson(2.0, size=(8, n)).astype(float)
        oracle = SlotDemandOracle(table, 630)
        pol = RelocationPolicy(kind, oracle if kind == "forward_looking" else None)
        res = run_simulation(orders, reg, cfg, pol)
        ref_records, ref_moves = reference_simulation(orders, reg, cfg, kind, oracle)
        assert [(r.order_id, r.arrival, r.courier, r.delivery_time) for r in res.records] == ref_records
        assert res.relocations == ref_moves
        assert res.n_delivered + res.n_rejected == res.n_arrived
        assert all(r.delivery_time > 0 for r in res.records if not r.rejected)

    def test_colocated_couriers(self):
        # so many couriers that every pickup always has an idle one on the spot
        reg = path_registry(4)
        rng = np.random.default_rng(0)
        orders = [order(int(rng.integers(630, 1290)), int(rng.integers(4)), int(rng.integers(4)), i)
                  for i in range(100)]
        res = run_simulation(orders, reg, SimConfig(fleet_size=2000))
        by_id = {o.id: o for o in orders}
        for r in res.records:
            o = by_id[r.order_id]
            assert r.delivery_time == travel_time(o.pickup, o.destination, reg, 4.0) + 6

    def test_busy_until_increases_per_courier(self):
        reg = path_registry(5)
        rng = np.random.default_rng(1)
        orders = [order(int(rng.integers(630, 900)), int(rng.integers(5)), int(rng.integers(5)), i)
                  for i in range(200)]
        res = run_simulation(orders, reg, SimConfig(fleet_size=5))
        last = {}
        for r in sorted((r for r in res.records if not r.rejected), key=lambda r: r.arrival):
            end = r.arrival + r.delivery_time
            assert r.arrival >= last.get(r.courier, 0)
            assert end > last.get(r.courier, 0)
            last[r.courier] = end


class TestCompare:
    def test_pairing_and_arithmetic(self, tmp_path):
        reg = path_registry(4, pickup=[True, False, False, True])
        rng = np.random.default_rng(2)
        orders = [order(int(rng.integers(630, 800)), int(rng.choice([0, 3])), int(rng.integers(4)), i)
                  for i in range(60)]
        cfg = SimConfig(fleet_size=3, close_minute=800)
        pols = {"none": RelocationPolicy(), "again": RelocationPolicy(), "np": RelocationPolicy("nearest_pickup")}
        cmp = compare_policies(orders, reg, cfg, pols, repetitions=4, seed=10)
        assert cmp.reduction_vs_none_pct["again"] == 0.0
        for r in range(4):
            starts = {name: runs[r].courier_starts for name, runs in cmp.runs.items()}
            assert starts["none"] == starts["np"] == starts["again"]
        none_t, np_t = cmp.mean_delivery_min["none"], cmp.mean_delivery_min["np"]
        assert cmp.reduction_vs_none_pct["np"] == pytest.approx(100 * (none_t - np_t) / none_t)
        cmp.write_csv(tmp_path / "c.csv")
        rows = list(csv.reader((tmp_path / "c.csv").open()))
        assert rows[0] == ["policy", "mean_delivery_min", "rejection_rate", "reduction_vs_none_pct"]
        assert [r[0] for r in rows[1:]] == ["none", "again", "np"]
        with pytest.raises(ValueError):
            compare_policies(orders, reg, cfg, pols, repetitions=0)

    def test_deterministic(self):
        reg = path_registry(3)
        orders = [order(630 + 3 * i, i % 3, (i + 1) % 3, i) for i in range(50)]
        cfg = SimConfig(fleet_size=2, seed=5)
        pol = RelocationPolicy("nearest_pickup")
        a, b = run_simulation(orders, reg, cfg, pol), run_simulation(orders, reg, cfg, pol)
        assert a.records == b.records and a.relocations == b.relocations
        assert a.to_dict(cfg, "nearest_pickup")["kpis"] == a.kpis()


def test_actual_oracle_beats_noisy_on_hotspots():
    from pdc.scenarios import hotspot_day

    reg, orders = hotspot_day(seed=0)
    actual = SlotDemandOracle.from_orders(orders, reg, 630, 1290)
    noise = np.random.default_rng(7).normal(0, 2.0, actual.table.shape)
    noisy = SlotDemandOracle(np.clip(actual.table + noise, 0, None), 630)
    pols = {"none": RelocationPolicy(), "actual": RelocationPolicy("forward_looking", actual),
            "noisy": RelocationPolicy("forward_looking", noisy)}
    cmp = compare_policies(orders, reg, SimConfig(fleet_size=30), pols, repetitions=20)
    assert cmp.mean_delivery_min["actual"] <= cmp.mean_delivery_min["noisy"]
