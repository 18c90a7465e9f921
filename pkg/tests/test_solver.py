import random

import pytest

from conftest import complete_graph, path_graph, random_connected_graph, star_graph
from wayprobe.graph import Instance, WeightedGraph
from wayprobe.oracle import brute_force_solve, dijkstra_all_pairs, is_feasible_walk, walk_cost
from wayprobe.probes import ProbeOrdering
from wayprobe.solver import (
    UNBOUND,
    SolverConfig,
    SubtourRejected,
    build_model,
    default_max_passes,
    extract_walk,
    solve,
    solve_instance,
)


def _arc(m, u, v):
    return next(a for a in m.out_adj[u] if m.head[a] == v)


def _random_instance(rng, g, max_m=4):
    s, d = rng.sample(range(g.n), 2)
    rest = [v for v in range(g.n) if v not in (s, d)]
    return Instance(s, d, frozenset(rng.sample(rest, rng.randint(0, min(max_m, len(rest))))))


def test_default_passes():
    assert [default_max_passes(k) for k in (0, 1, 2, 4, 10)] == [2, 2, 2, 3, 6]


def test_propagation_alone_fixes_forced_path():
    m = build_model(path_graph(3), Instance(0, 2, frozenset({1})))
    assert m.propagate()
    assert all(v != UNBOUND for v in m.val)
    assert {(m.tail[a], m.head[a]) for a in m.plan()} == {(0, 1), (1, 2)}


def test_propagation_is_idempotent():
    rng = random.Random(4)
    for _ in range(30):
        g = random_connected_graph(rng, rng.randint(4, 9))
        m = build_model(g, _random_instance(rng, g))
        if not m.propagate():
            continue
        before, trail = m.domains(), len(m.trail)
        assert m.propagate()
        assert m.domains() == before
        assert len(m.trail) == trail


def test_undo_restores_state():
    g = complete_graph(5)
    m = build_model(g, Instance(0, 4, frozenset({2})))
    m.propagate()
    snapshot = (list(m.val), list(m.out_one), list(m.in_free), m.cost)
    mark = len(m.trail)
    m.assign(_arc(m, 0, 2), 1)
    m.propagate()
    m.undo(mark)
    assert (m.val, m.out_one, m.in_free, m.cost) == snapshot


def test_propagation_detects_capacity_wipeout():
    # with one pass per node the star centre cannot serve three leaves
    g = star_graph(4)
    m = build_model(g, Instance(1, 2, frozenset({3, 4})), SolverConfig(max_passes=1))
    assert not m.propagate()


def test_bound_prunes_expensive_arcs():
    g = WeightedGraph(4, ((0, 1, 2.0), (1, 2, 2.0), (2, 3, 2.0), (0, 3, 10.0)))
    m = build_model(g, Instance(0, 3))
    m.bound = 7.0
    assert m.propagate()
    assert m.val[_arc(m, 0, 3)] == 0 and m.val[_arc(m, 3, 0)] == 0
    m.bound = 6.0
    assert not m.propagate()


def test_subtour_rejected():
    g = WeightedGraph(4, ((0, 1, 1.0), (0, 2, 1.0), (2, 3, 1.0)))
    m = build_model(g, Instance(0, 1, frozenset({3})))
    plan = [_arc(m, 0, 1), _arc(m, 2, 3), _arc(m, 3, 2)]
    # the linear constraints are satisfied by the detached circulation
    assert m.violations(plan) == []
    with pytest.raises(SubtourRejected):
        extract_walk(m, plan)


def test_cycles_spliced_into_walk():
    g = star_graph(4)
    m = build_model(g, Instance(1, 2, frozenset({3, 4})))
    plan = [_arc(m, u, v) for u, v in ((1, 0), (0, 3), (3, 0), (0, 4), (4, 0), (0, 2))]
    walk = extract_walk(m, plan)
    assert walk[0] == 1 and walk[-1] == 2 and len(walk) == 7
    assert walk_cost(g, walk) == 6


def test_star_needs_doubled_passes():
    g, inst = star_graph(4), Instance(1, 2, frozenset({3, 4}))
    assert not solve_instance(g, inst).solved
    st = solve_instance(g, inst, reference_cost=6.0)
    assert st.max_passes == 4
    assert st.proved_optimal and st.best_cost == 6
    assert st.best_walk[0] == 1 and st.best_walk[-1] == 2


def test_agrees_with_oracle_undirected():
    rng = random.Random(21)
    for _ in range(150):
        g = random_connected_graph(rng, rng.randint(3, 8))
        inst = _random_instance(rng, g)
        ref, _ = brute_force_solve(g, inst)
        st = solve_instance(g, inst, reference_cost=ref)
        assert st.proved_optimal
        assert st.best_cost == pytest.approx(ref, abs=1e-9)
        assert is_feasible_walk(g, inst, st.best_walk)
        assert walk_cost(g, st.best_walk) == pytest.approx(st.best_cost, abs=1e-9)
        m = build_model(g, inst, SolverConfig(max_passes=st.max_passes))
        assert m.violations(st.best_plan) == []


def test_directed_never_beats_oracle():
    rng = random.Random(8)
    for _ in range(60):
        g = random_connected_graph(rng, rng.randint(3, 7), p=0.45, directed=True)
        inst = _random_instance(rng, g, 3)
        ref, _ = brute_force_solve(g, inst)
        st = solve_instance(g, inst, reference_cost=ref)
        if st.solved:
            assert st.best_cost >= ref - 1e-9
            assert is_feasible_walk(g, inst, st.best_walk)


def test_optimum_independent_of_probe():
    rng = random.Random(33)
    for _ in range(40):
        g = random_connected_graph(rng, rng.randint(4, 8))
        inst = _random_instance(rng, g)
        costs = set()
        for k in range(3):
            order = list(range(g.n))
            random.Random(k).shuffle(order)
            st = solve_instance(g, inst, SolverConfig(probe=ProbeOrdering(tuple(order))))
            assert st.proved_optimal
            costs.add(round(st.best_cost, 9))
        assert len(costs) == 1


def test_incumbents_strictly_decrease():
    rng = random.Random(2)
    for _ in range(30):
        g = random_connected_graph(rng, 9, p=0.5)
        st = solve_instance(g, _random_instance(rng, g, 5))
        inc = st.incumbents
        assert all(b < a for a, b in zip(inc, inc[1:]))
        assert inc[-1] == st.best_cost


def test_deterministic_under_node_budget():
    rng = random.Random(17)
    g = random_connected_graph(rng, 14, p=0.35)
    spt = dijkstra_all_pairs(g)
    inst = Instance(0, 13, frozenset(range(2, 12)))
    cfg = SolverConfig(timeout=60.0, max_nodes=500)
    runs = [solve(build_model(g, inst, cfg), cfg) for _ in range(2)]
    a, b = runs
    assert (a.backtracks, a.nodes, a.best_cost, a.best_walk, a.timed_out) == (
        b.backtracks, b.nodes, b.best_cost, b.best_walk, b.timed_out
    )
    assert spt.dist[0, 13] <= a.best_cost


def test_budget_exhaustion_reports_timeout():
    rng = random.Random(17)
    g = random_connected_graph(rng, 14, p=0.35)
    cfg = SolverConfig(max_nodes=3)
    st = solve(build_model(g, Instance(0, 13, frozenset(range(2, 12))), cfg), cfg)
    assert st.timed_out and not st.proved_optimal


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(timeout=0)
    with pytest.raises(ValueError):
        SolverConfig(max_passes=0)
