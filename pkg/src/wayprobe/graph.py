"""Weighted graphs, planning instances and their text file formats.

Graph files are line oriented::

    graph 3 undirected
    edge 0 1 1.0
    edge 1 2 2.5

Instance files hold one query per line, ``instance <s> <d> <m1,m2,...>`` with
``-`` standing for an empty mandatory set.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

Edge = tuple[int, int, float]


class GraphError(ValueError):
    """Base class for invalid graphs and instances."""


class GraphParseError(GraphError):
    pass


class DisconnectedGraphError(GraphError):
    pass


class NonPositiveWeightError(GraphError):
    pass


@dataclass(frozen=True)
class WeightedGraph:
    """Connected graph with strictly positive arc weights.

    Undirected edges are expanded into two arcs of equal weight; ``arcs`` is the
    list the solver works on and ``out_adj`` / ``in_adj`` index into it.
    """

    n: int
    edges: tuple[Edge, ...]
    directed: bool = False
    arcs: tuple[Edge, ...] = field(init=False, repr=False, compare=False)
    out_adj: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    in_adj: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 2:
            raise GraphError(f"graph needs at least 2 nodes, got {self.n}")
        edges = tuple((int(u), int(v), float(w)) for u, v, w in self.edges)
        seen = set()
        for u, v, w in edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphError(f"edge ({u}, {v}) references a node outside [0, {self.n})")
            if u == v:
                raise GraphError(f"self-loop on node {u}")
            if not (w > 0 and math.isfinite(w)):
                raise NonPositiveWeightError(f"edge ({u}, {v}) has weight {w}; weights must be positive and finite")
            key = (u, v) if self.directed else (min(u, v), max(u, v))
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)

        arcs: list[Edge] = []
        for u, v, w in edges:
            arcs.append((u, v, w))
            if not self.directed:
                arcs.append((v, u, w))
        out_adj: list[list[int]] = [[] for _ in range(self.n)]
        in_adj: list[list[int]] = [[] for _ in range(self.n)]
        for a, (u, v, _) in enumerate(arcs):
            out_adj[u].append(a)
            in_adj[v].append(a)

        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "arcs", tuple(arcs))
        object.__setattr__(self, "out_adj", tuple(tuple(x) for x in out_adj))
        object.__setattr__(self, "in_adj", tuple(tuple(x) for x in in_adj))

        if not self.is_connected():
            kind = "strongly connected" if self.directed else "connected"
            raise DisconnectedGraphError(f"graph with {self.n} nodes is not {kind}")

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    def neighbors(self, v: int) -> list[int]:
        return [self.arcs[a][1] for a in self.out_adj[v]]

    def weight(self, u: int, v: int) -> float:
        for a in self.out_adj[u]:
            if self.arcs[a][1] == v:
                return self.arcs[a][2]
        raise KeyError(f"no arc {u}->{v}")

    def _reach(self, forward: bool) -> int:
        adj = self.out_adj if forward else self.in_adj
        end = 1 if forward else 0
        seen = [False] * self.n
        seen[0] = True
        queue = deque([0])
        count = 1
        while queue:
            x = queue.popleft()
            for a in adj[x]:
                y = self.arcs[a][end]
                if not seen[y]:
                    seen[y] = True
                    count += 1
                    queue.append(y)
        return count

    def is_connected(self) -> bool:
        if self._reach(True) != self.n:
            return False
        return not self.directed or self._reach(False) == self.n


@dataclass(frozen=True)
class Instance:
    """A planning query: walk from ``s`` to ``d`` visiting every node of ``mandatory``."""

    s: int
    d: int
    mandatory: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "mandatory", frozenset(int(m) for m in self.mandatory))
        if self.s == self.d:
            raise GraphError(f"start and destination coincide ({self.s})")
        if self.s in self.mandatory or self.d in self.mandatory:
            raise GraphError("start/destination may not be mandatory; use Instance.normalized")

    @classmethod
    def normalized(cls, s: int, d: int, mandatory: Iterable[int] = ()) -> "Instance":
        """Build an instance, dropping ``s`` and ``d`` from the mandatory set."""
        m = set(mandatory)
        if s in m or d in m:
            log.warning("dropping start/destination from mandatory set of instance (%d, %d)", s, d)
            m -= {s, d}
        return cls(s, d, frozenset(m))

    def check(self, g: WeightedGraph) -> None:
        for v in (self.s, self.d, *self.mandatory):
            if not 0 <= v < g.n:
                raise GraphError(f"instance references node {v} outside [0, {g.n})")

    def key(self) -> str:
        return format_instance(self)


def adjacency_matrix(g: WeightedGraph) -> np.ndarray:
    a = np.zeros((g.n, g.n))
    for u, v, w in g.arcs:
        a[u, v] = w
    return a


def cost_matrix(g: WeightedGraph) -> np.ndarray:
    c = np.full((g.n, g.n), np.inf)
    for u, v, w in g.arcs:
        c[u, v] = w
    return c


# ---------------------------------------------------------------- file formats


def format_graph(g: WeightedGraph) -> str:
    lines = [f"graph {g.n} {'directed' if g.directed else 'undirected'}"]
    lines += [f"edge {u} {v} {w!r}" for u, v, w in g.edges]
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> WeightedGraph:
    header = None
    edges: list[Edge] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "graph":
                if header is not None or len(parts) != 3 or parts[2] not in ("directed", "undirected"):
                    raise GraphParseError(f"line {lineno}: bad header {line!r}")
                header = (int(parts[1]), parts[2] == "directed")
            elif parts[0] == "edge":
                if header is None or len(parts) != 4:
                    raise GraphParseError(f"line {lineno}: bad edge {line!r}")
                edges.append((int(parts[1]), int(parts[2]), float(parts[3])))
            else:
                raise GraphParseError(f"line {lineno}: unknown record {parts[0]!r}")
        except ValueError as exc:
            if isinstance(exc, GraphError):
                raise
            raise GraphParseError(f"line {lineno}: {exc}") from exc
    if header is None:
        raise GraphParseError("missing 'graph <n> <directed|undirected>' header")
    return WeightedGraph(header[0], tuple(edges), header[1])


def save_graph(g: WeightedGraph, path: str | Path) -> None:
    Path(path).write_text(format_graph(g))


def load_graph(path: str | Path) -> WeightedGraph:
    return parse_graph(Path(path).read_text())


def graph_fingerprint(g: WeightedGraph) -> str:
    return hashlib.sha256(format_graph(g).encode()).hexdigest()


def format_instance(i: Instance) -> str:
    m = ",".join(str(v) for v in sorted(i.mandatory)) or "-"
    return f"instance {i.s} {i.d} {m}"


def parse_instance(line: str) -> Instance:
    parts = line.split()
    if len(parts) != 4 or parts[0] != "instance":
        raise GraphParseError(f"bad instance record {line!r}")
    try:
        s, d = int(parts[1]), int(parts[2])
        m = [] if parts[3] == "-" else [int(x) for x in parts[3].split(",")]
    except ValueError as exc:
        raise GraphParseError(f"bad instance record {line!r}") from exc
    return Instance.normalized(s, d, m)


def save_instances(instances: Sequence[Instance], path: str | Path) -> None:
    Path(path).write_text("".join(format_instance(i) + "\n" for i in instances))


def load_instances(path: str | Path, g: WeightedGraph | None = None) -> list[Instance]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            inst = parse_instance(line)
            if g is not None:
                inst.check(g)
            out.append(inst)
    return out
