import random

import pytest

from wayprobe.graph import DisconnectedGraphError, WeightedGraph


def path_graph(n: int = 3, w: float = 1.0) -> WeightedGraph:
    return WeightedGraph(n, tuple((k, k + 1, w) for k in range(n - 1)))


def star_graph(leaves: int = 4, w: float = 1.0) -> WeightedGraph:
    return WeightedGraph(leaves + 1, tuple((0, k, w) for k in range(1, leaves + 1)))


def complete_graph(n: int, w: float = 1.0) -> WeightedGraph:
    return WeightedGraph(n, tuple((u, v, w) for u in range(n) for v in range(u + 1, n)))


def seven_node_graph() -> WeightedGraph:
    """Small weighted graph with a few competing routes."""
    edges = (
        (0, 1, 2.0), (0, 2, 1.0), (0, 6, 4.0), (1, 2, 3.0), (1, 4, 1.0),
        (2, 3, 2.0), (3, 4, 5.0), (3, 5, 1.0), (4, 6, 2.0), (5, 6, 3.0),
    )
    return WeightedGraph(7, edges)


def random_connected_graph(rng: random.Random, n: int, p: float = 0.4, directed: bool = False) -> WeightedGraph:
    while True:
        edges = []
        pairs = [(u, v) for u in range(n) for v in range(n) if u != v] if directed else \
            [(u, v) for u in range(n) for v in range(u + 1, n)]
        for u, v in pairs:
            if rng.random() < p:
                edges.append((u, v, round(rng.uniform(0.5, 5.0), 3)))
        try:
            return WeightedGraph(n, tuple(edges), directed)
        except DisconnectedGraphError:
            continue


@pytest.fixture
def fig7():
    return seven_node_graph()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    lines = [
        value
        for key in ("passed", "failed")
        for rep in terminalreporter.stats.get(key, [])
        if rep.when == "call"
        for name, value in rep.user_properties
        if name == "acceptance"
    ]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
