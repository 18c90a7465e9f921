"""Exact reference answers: all-pairs Dijkstra and brute-force waypoint ordering."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .graph import Instance, WeightedGraph

TOL = 1e-9
MAX_MANDATORY = 10


class TooManyMandatoryError(ValueError):
    pass


@dataclass(frozen=True)
class ShortestPathTable:
    """``dist[u, v]`` shortest path costs; ``pred[u, v]`` is the node before ``v``
    on the shortest ``u -> v`` path (``-1`` on the diagonal)."""

    dist: np.ndarray
    pred: np.ndarray

    def path(self, u: int, v: int) -> list[int]:
        nodes = [v]
        while v != u:
            v = int(self.pred[u, v])
            nodes.append(v)
        nodes.reverse()
        return nodes

    def next_hop(self, u: int, v: int) -> int:
        p = self.path(u, v)
        return p[1] if len(p) > 1 else u


def dijkstra_all_pairs(g: WeightedGraph) -> ShortestPathTable:
    n = g.n
    dist = np.full((n, n), np.inf)
    pred = np.full((n, n), -1, dtype=np.int64)
    for src in range(n):
        d = dist[src]
        d[src] = 0.0
        done = [False] * n
        heap = [(0.0, src)]
        while heap:
            du, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for a in g.out_adj[u]:
                _, v, w = g.arcs[a]
                nd = du + w
                if nd < d[v]:
                    d[v] = nd
                    pred[src, v] = u
                    heapq.heappush(heap, (nd, v))
    return ShortestPathTable(dist, pred)


def brute_force_solve(
    g: WeightedGraph, inst: Instance, spt: ShortestPathTable | None = None
) -> tuple[float, list[int]]:
    """Optimal walk cost for ``inst`` by enumerating visiting orders of the
    mandatory nodes over shortest-path distances.

    Orders are explored lexicographically and a prefix is dropped as soon as its
    cost plus the direct leg to ``d`` cannot beat the incumbent, so among equal
    optima the lexicographically first order wins.
    """
    if len(inst.mandatory) > MAX_MANDATORY:
        raise TooManyMandatoryError(f"|M| = {len(inst.mandatory)} exceeds {MAX_MANDATORY}")
    if spt is None:
        spt = dijkstra_all_pairs(g)
    dist = spt.dist.tolist()
    d = inst.d
    todo = sorted(inst.mandatory)
    best_cost = math.inf
    best_order: list[int] = []
    order: list[int] = []
    used = [False] * len(todo)

    def extend(last: int, cost: float, depth: int) -> None:
        nonlocal best_cost, best_order
        if depth == len(todo):
            total = cost + dist[last][d]
            if total < best_cost - TOL:
                best_cost = total
                best_order = order.copy()
            return
        for k, m in enumerate(todo):
            if used[k]:
                continue
            c = cost + dist[last][m]
            if c + dist[m][d] >= best_cost - TOL:
                continue
            used[k] = True
            order.append(m)
            extend(m, c, depth + 1)
            order.pop()
            used[k] = False

    extend(inst.s, 0.0, 0)

    walk = [inst.s]
    for target in best_order + [d]:
        walk.extend(spt.path(walk[-1], target)[1:])
    return best_cost, walk


def walk_cost(g: WeightedGraph, walk: list[int]) -> float:
    return sum(g.weight(u, v) for u, v in zip(walk, walk[1:]))


def is_feasible_walk(g: WeightedGraph, inst: Instance, walk: list[int]) -> bool:
    if len(walk) < 2 or walk[0] != inst.s or walk[-1] != inst.d:
        return False
    for u, v in zip(walk, walk[1:]):
        if v not in g.neighbors(u):
            return False
    return inst.mandatory <= set(walk)
