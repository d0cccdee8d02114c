import datetime as dt

import numpy as np
import pytest
from hypothesis import settings

from pdc.domain import Zone, ZoneRegistry

settings.register_profile("pdc", deadline=None, max_examples=60)
settings.load_profile("pdc")

MONDAY = dt.date(2024, 3, 4)


def path_registry(n: int, pickup=None) -> ZoneRegistry:
    """Zones 0..n-1 on a line, each adjacent to its neighbours."""
    pickup = [True] * n if pickup is None else pickup
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    zones = tuple(Zone(i, 52.0, 4.0 + 0.01 * i, bool(pickup[i])) for i in range(n))
    return ZoneRegistry(zones, adj)


def random_connected_adjacency(n: int, rng, extra: float = 0.2) -> np.ndarray:
    """Random spanning tree plus a sprinkle of extra edges."""
    adj = np.zeros((n, n), dtype=bool)
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = order[k], order[rng.integers(k)]
        adj[a, b] = adj[b, a] = True
    extra_edges = np.triu(rng.random((n, n)) < extra, 1)
    adj |= extra_edges | extra_edges.T
    np.fill_diagonal(adj, False)
    return adj


@pytest.fixture
def line5():
    return path_registry(5)


# one (number, title, passed, seconds, detail) row per acceptance criterion
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, seconds, detail in sorted(ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] #{number:<2} {title} ({seconds:.1f} s)"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
