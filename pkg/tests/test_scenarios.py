import numpy as np
import pytest

from pdc.scenarios import forecast_scenario, hex_network, hotspot_day


def test_hex_network_degrees():
    reg = hex_network(3, 3)
    degrees = reg.adjacency.sum(axis=1)
    assert degrees[4] == 6  # interior cell
    assert degrees.max() <= 6
    assert np.array_equal(reg.adjacency, reg.adjacency.T)


def test_hotspot_day():
    reg, orders = hotspot_day(seed=3)
    assert reg.n_zones == 25 and len(reg.pickup_zones) == 12
    assert all(o.pickup in reg.pickup_zones for o in orders)
    assert all(630 <= o.minute < 1290 for o in orders)
    # about rate * minutes arrivals
    assert 250 < len(orders) < 410
    again = hotspot_day(seed=3)[1]
    assert again == orders
    assert hotspot_day(seed=4)[1] != orders


def test_hotspot_concentration():
    _, orders = hotspot_day(seed=0, n_phases=1)
    counts = np.bincount([o.pickup for o in orders])
    assert counts.max() > 0.3 * len(orders)


def test_hotspot_validation():
    with pytest.raises(ValueError):
        hotspot_day(n_pickup=0)
    with pytest.raises(ValueError):
        hotspot_day(hotspot_share=1.5)


def test_forecast_scenario():
    sc = forecast_scenario(seed=1, n_events=5)
    assert sc.registry.n_zones == 10 and len(sc.events) == 5
    assert len(sc.grid.days) == 28 and sc.test_start == sc.grid.days[21]
    assert {o.day for o in sc.orders} <= set(sc.grid.days)
    assert len(sc.weather) >= 28
    assert forecast_scenario(seed=1, n_events=5).orders == sc.orders
