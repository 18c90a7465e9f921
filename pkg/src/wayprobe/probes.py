"""Node orderings that seed the solver's labelling.

A probe ranks every node (most preferred first) and may name a preferred
start -> end path. At the search root the solver tries the arcs leaving the
start in ranking order; deeper down, preferred-path arcs go first and the
ranking breaks ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .graph import Instance, WeightedGraph, graph_fingerprint

if TYPE_CHECKING:
    from .gcn import GcnModel
    from .oracle import ShortestPathTable


class FingerprintMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ProbeOrdering:
    node_pref: tuple[int, ...]
    preferred_path: tuple[int, ...] | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if sorted(self.node_pref) != list(range(len(self.node_pref))):
            raise ValueError("node_pref must be a permutation of the nodes")


def dijkstra_probe(g: WeightedGraph, inst: Instance, spt: "ShortestPathTable") -> ProbeOrdering:
    path = spt.path(inst.s, inst.d)
    on_path = set(path)
    dist = spt.dist[inst.s]
    rest = sorted((v for v in range(g.n) if v not in on_path), key=lambda v: (dist[v], v))
    return ProbeOrdering(tuple(path) + tuple(rest), tuple(path), "dijkstra")


def preference_from_scores(scores: np.ndarray) -> tuple[int, ...]:
    # stable sort on -score keeps ties in node-id order
    return tuple(int(v) for v in np.argsort(-np.asarray(scores), kind="stable"))


def neural_probe(
    model: "GcnModel",
    g: WeightedGraph,
    inst: Instance,
    fingerprint: str | None = None,
) -> ProbeOrdering:
    """Rank nodes by the network's next-hop probabilities for ``inst``.

    One inference pass is made; the ranking decides the first arc out of the
    start and breaks ties deeper in the search.
    """
    from .dataset import encode_instance

    fp = fingerprint or graph_fingerprint(g)
    if model.fingerprint != fp:
        raise FingerprintMismatch("model was trained on a different graph")
    probs = model.predict(encode_instance(g, inst)[None, :])[0]
    return ProbeOrdering(preference_from_scores(probs), None, "neural")
