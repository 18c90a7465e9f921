import random

import numpy as np
import pytest

from conftest import path_graph, random_connected_graph, seven_node_graph, star_graph
from wayprobe.dataset import (
    RootPair,
    build_dataset,
    decode_instance,
    encode_instance,
    format_dataset,
    load_dataset,
    parse_dataset,
    save_dataset,
    split_root_pair,
)
from wayprobe.graph import GraphParseError, Instance, graph_fingerprint
from wayprobe.oracle import brute_force_solve, dijkstra_all_pairs
from wayprobe.solver import solve_instance


def test_seven_node_encoding():
    x = encode_instance(seven_node_graph(), Instance(3, 1, frozenset({0, 6})))
    assert x.shape == (21,)
    assert set(np.flatnonzero(x)) == {9, 4, 2, 20}


def test_encoding_sums_and_round_trip():
    rng = random.Random(0)
    g = random_connected_graph(rng, 9)
    for _ in range(50):
        s, d = rng.sample(range(9), 2)
        rest = [v for v in range(9) if v not in (s, d)]
        inst = Instance(s, d, frozenset(rng.sample(rest, rng.randint(0, 7))))
        x = encode_instance(g, inst)
        assert x.sum() == 2 + len(inst.mandatory)
        assert decode_instance(x) == inst


def test_split_two_step_chain():
    ex = split_root_pair(RootPair(Instance(0, 2, frozenset({1})), (0, 1, 2)))
    assert ex == [(Instance(0, 2, frozenset({1})), 1), (Instance(1, 2), 2)]


def test_split_degenerate_path():
    assert split_root_pair(RootPair(Instance(0, 1), (0, 1))) == [(Instance(0, 1), 1)]
    with pytest.raises(ValueError):
        RootPair(Instance(0, 1, frozenset({2})), (0, 1))


def test_split_revisits_on_star():
    g = star_graph(4)
    cost, walk = brute_force_solve(g, Instance(1, 2, frozenset({3, 4})))
    ex = split_root_pair(RootPair(Instance(1, 2, frozenset({3, 4})), tuple(walk)))
    assert len(ex) == len(walk) - 1
    centre = [i for i, _ in ex if i.s == 0]
    assert len(centre) == 3 and len({i.mandatory for i in centre}) == 3


def test_split_skips_destination_suffix():
    # walk passes the destination before reaching a mandatory leaf
    rp = RootPair(Instance(1, 0, frozenset({2})), (1, 0, 2, 0))
    ex = split_root_pair(rp)
    assert [i.s for i, _ in ex] == [1, 2]


def _suffixes_optimal(g, spt, rp):
    for inst, t in split_root_pair(rp):
        assert t in g.neighbors(inst.s)
        if t == inst.d and inst.mandatory:
            # the child would start at its own destination; no oracle instance
            continue
        full, _ = brute_force_solve(g, inst, spt)
        rest = 0.0 if t == inst.d else brute_force_solve(g, Instance(t, inst.d, inst.mandatory - {t}), spt)[0]
        assert full == pytest.approx(g.weight(inst.s, t) + rest, abs=1e-9)


def test_suffixes_stay_optimal():
    rng = random.Random(12)
    for _ in range(40):
        g = random_connected_graph(rng, 8)
        spt = dijkstra_all_pairs(g)
        s, d = rng.sample(range(8), 2)
        rest = [v for v in range(8) if v not in (s, d)]
        inst = Instance(s, d, frozenset(rng.sample(rest, 3)))
        ref, _ = brute_force_solve(g, inst, spt)
        st = solve_instance(g, inst, reference_cost=ref)
        _suffixes_optimal(g, spt, RootPair(inst, tuple(st.best_walk)))


def _small_dataset(seed=5):
    g = seven_node_graph()
    spt = dijkstra_all_pairs(g)
    pairs = []
    for s, d, m in [(3, 1, {0, 6}), (0, 5, {4}), (6, 2, set()), (5, 1, {2, 4})]:
        inst = Instance(s, d, frozenset(m))
        _, walk = brute_force_solve(g, inst, spt)
        pairs.append(RootPair(inst, tuple(walk)))
    return g, pairs, build_dataset(g, pairs, seed, graph_fingerprint(g))


def test_build_dataset_counts_and_split():
    g, pairs, ds = _small_dataset()
    # steps leaving the destination mid-walk produce no example
    steps = sum(sum(1 for v in p.path[:-1] if v != p.instance.d) for p in pairs)
    assert len(ds) == steps == sum(len(split_root_pair(p)) for p in pairs)
    assert len(ds.train_idx) == int(np.floor(0.8 * len(ds) + 0.5))
    assert not set(ds.train_idx) & set(ds.test_idx)
    for k in range(len(ds)):
        assert decode_instance(ds.x[k]) == ds.instances[k]
        assert int(ds.t[k]) in g.neighbors(ds.instances[k].s)
    again = build_dataset(g, pairs, 5, ds.fingerprint)
    assert np.array_equal(again.x, ds.x) and np.array_equal(again.train_idx, ds.train_idx)


def test_single_chain_rounding(caplog):
    g = path_graph(3)
    ds = build_dataset(g, [RootPair(Instance(0, 2), (0, 1, 2))], 0, "fp")
    assert len(ds) == 2 and len(ds.train_idx) == 2 and len(ds.test_idx) == 0
    assert "test split is empty" in caplog.text


def test_empty_input():
    with pytest.raises(ValueError):
        build_dataset(path_graph(3), [], 0, "fp")


def test_root_level_split_keeps_siblings_together():
    _, _, ds = _small_dataset()
    tr, te = ds.root_level_split()
    assert not set(ds.root[tr]) & set(ds.root[te])
    assert len(tr) + len(te) == len(ds)


def test_serialisation_round_trip(tmp_path):
    _, _, ds = _small_dataset()
    save_dataset(ds, tmp_path / "d.txt")
    back = load_dataset(tmp_path / "d.txt")
    assert format_dataset(back) == format_dataset(ds)
    assert (tmp_path / "d.txt").read_bytes() == format_dataset(back).encode()
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.t, ds.t)
    assert back.instances == ds.instances


def test_corrupt_dataset_rejected():
    _, _, ds = _small_dataset()
    text = format_dataset(ds)
    with pytest.raises(GraphParseError):
        parse_dataset(text.replace("examples", "examples 9", 1))
    with pytest.raises(GraphParseError):
        parse_dataset("\n".join(text.splitlines()[:-1]) + "\n")
    with pytest.raises(GraphParseError):
        parse_dataset("nonsense\n")
