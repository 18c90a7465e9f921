"""Seeded benchmark graphs and instance sets."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import pdist, squareform

from .graph import Instance, WeightedGraph
from .oracle import ShortestPathTable

log = logging.getLogger(__name__)

TABLE1_SIZES = (0, 1, 2, 4, 6, 8, 10)
TABLE2_SIZES = (3, 5, 7, 9)


@dataclass
class GenConfig:
    seed: int = 0
    n: int = 15
    decimation_keep: float = 0.10
    mandatory_sizes: tuple[int, ...] = TABLE1_SIZES
    # None: one instance per pair for |M| = 0, two otherwise
    instances_per_pair: int | None = None
    target_degree: float = 3.5

    def __post_init__(self) -> None:
        if not 0 < self.decimation_keep <= 1:
            raise ValueError("decimation_keep must lie in (0, 1]")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        self.mandatory_sizes = tuple(self.mandatory_sizes)

    def per_pair(self, size: int) -> int:
        if self.instances_per_pair is not None:
            return self.instances_per_pair
        return 1 if size == 0 else 2


def count_instances(n: int) -> int:
    """Number of distinct (s, d, M) queries on ``n`` nodes, ``2**(n-2) * n * (n-1)``.

    Python integers are unbounded, so the count is always exact.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    return (1 << (n - 2)) * n * (n - 1)


def connection_radius(n: int, degree: float) -> float:
    """Radius whose expected degree in the unit square, border losses included,
    equals ``degree``: (n - 1) * (pi r^2 - 8/3 r^3 + r^4 / 2)."""
    target = degree / max(n - 1, 1)
    if target >= 0.97:
        return math.sqrt(2.0)
    return brentq(lambda r: math.pi * r * r - 8.0 / 3.0 * r**3 + 0.5 * r**4 - target, 0.0, 1.0)


def generate_graph(cfg: GenConfig) -> WeightedGraph:
    """Random geometric graph in the unit square on top of a Euclidean MST.

    The connection radius targets ``cfg.target_degree`` expected neighbours;
    the spanning tree guarantees connectivity. Weights are rounded distances.
    """
    rng = np.random.default_rng(cfg.seed)
    pts = rng.random((cfg.n, 2))
    dist = squareform(pdist(pts))
    radius = connection_radius(cfg.n, cfg.target_degree)
    tree = minimum_spanning_tree(dist).toarray()
    keep = set()
    for u, v in combinations(range(cfg.n), 2):
        if dist[u, v] <= radius or tree[u, v] > 0 or tree[v, u] > 0:
            keep.add((u, v))
    edges = tuple((u, v, max(round(float(dist[u, v]), 4), 1e-4)) for u, v in sorted(keep))
    return WeightedGraph(cfg.n, edges, directed=False)


def ranked_pairs(g: WeightedGraph, spt: ShortestPathTable) -> list[tuple[int, int]]:
    pairs = [(s, d) for s in range(g.n) for d in range(g.n) if s != d]
    pairs.sort(key=lambda p: (-spt.dist[p[0], p[1]], p[0], p[1]))
    return pairs


def kept_pairs(g: WeightedGraph, spt: ShortestPathTable, keep: float) -> list[tuple[int, int]]:
    pairs = ranked_pairs(g, spt)
    return pairs[: math.ceil(keep * len(pairs) - 1e-9)]


def generate_instances(g: WeightedGraph, spt: ShortestPathTable, cfg: GenConfig) -> list[Instance]:
    """Decimate (s, d) pairs to the longest shortest paths, then draw mandatory sets.

    Each (pair, size) gets its own generator seeded from ``(seed, s, d, size)``.
    Mandatory sets for one pair and size are distinct while enough exist.
    """
    out: list[Instance] = []
    sizes = []
    for k in cfg.mandatory_sizes:
        if k > g.n - 2:
            log.warning("skipping mandatory size %d > n - 2 = %d", k, g.n - 2)
        else:
            sizes.append(k)
    for s, d in kept_pairs(g, spt, cfg.decimation_keep):
        others = np.array([v for v in range(g.n) if v not in (s, d)])
        for k in sizes:
            rng = np.random.default_rng([cfg.seed, s, d, k])
            want = cfg.per_pair(k)
            available = math.comb(len(others), k)
            seen: set[frozenset[int]] = set()
            drawn = 0
            while drawn < want:
                m = frozenset(int(v) for v in rng.choice(others, size=k, replace=False))
                if m in seen and len(seen) < available:
                    continue
                seen.add(m)
                out.append(Instance(s, d, m))
                drawn += 1
    return out


@dataclass
class Manifest:
    config: GenConfig
    counts: dict[int, int] = field(default_factory=dict)
    pairs: int = 0

    def as_dict(self) -> dict:
        return {
            "seed": self.config.seed,
            "n": self.config.n,
            "decimation_keep": self.config.decimation_keep,
            "mandatory_sizes": list(self.config.mandatory_sizes),
            "instances_per_pair": self.config.instances_per_pair,
            "per_pair_rule": "explicit" if self.config.instances_per_pair else "1 for |M|=0, 2 otherwise",
            "target_degree": self.config.target_degree,
            "kept_pairs": self.pairs,
            "counts_by_size": {str(k): v for k, v in sorted(self.counts.items())},
            "total": sum(self.counts.values()),
        }


def manifest_for(g: WeightedGraph, spt: ShortestPathTable, cfg: GenConfig, instances: list[Instance]) -> Manifest:
    counts: dict[int, int] = {}
    for i in instances:
        counts[len(i.mandatory)] = counts.get(len(i.mandatory), 0) + 1
    return Manifest(cfg, counts, len(kept_pairs(g, spt, cfg.decimation_keep)))
