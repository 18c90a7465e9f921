"""Branch-and-bound planner over 0/1 arc flow variables.

Every arc ``u`` of the graph carries a decision variable ``phi[u]`` in {0, 1}.
For every node ``x`` the model posts

* conservation: ``out(x) = in(x) + b(x)`` with ``b(s) = 1``, ``b(d) = -1`` and 0
  elsewhere, together with ``out(x) <= N`` and ``in(x) <= N``;
* mandatory coverage: ``out(i) >= 1`` for every ``i`` in M;
* the objective ``sum(phi[u] * w[u]) < incumbent`` once an incumbent exists.

Each linear constraint is filtered to bounds consistency until nothing changes.
Labelling follows the walk being built: the node that still owes outflow is the
cursor and its outgoing arcs are tried in probe order, value 1 first. When the
flow is balanced but incomplete the walk is extended from a node it already
touches. Disconnected circulations pass the linear constraints and are rejected
when a complete plan is turned into a walk.

On top of the incumbent bound the search prunes with a shortest-distance lower
bound on the arcs still to be added (see :meth:`_Search.remaining_bound`).
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .graph import Instance, WeightedGraph
from .oracle import dijkstra_all_pairs
from .probes import ProbeOrdering, dijkstra_probe

log = logging.getLogger(__name__)

TOL = 1e-9
UNBOUND = -1


class SubtourRejected(Exception):
    """The plan's arcs do not form a single start -> end walk covering M."""


class _Timeout(Exception):
    pass


def default_max_passes(num_mandatory: int) -> int:
    return max(2, math.ceil(num_mandatory / 2) + 1)


@dataclass
class SolverConfig:
    timeout: float = 3.0
    max_passes: int | None = None
    probe: ProbeOrdering | None = None
    # deterministic alternative to the wall-clock deadline
    max_nodes: int | None = None

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_passes is not None and self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


@dataclass
class SearchStats:
    backtracks: int = 0
    nodes: int = 0
    solve_time: float = 0.0  # milliseconds
    proved_optimal: bool = False
    timed_out: bool = False
    best_cost: float = math.inf
    best_plan: frozenset[int] = frozenset()
    best_walk: list[int] | None = None
    incumbents: list[float] = field(default_factory=list)
    max_passes: int = 0
    probe: str = ""

    @property
    def solved(self) -> bool:
        return self.best_walk is not None


class FlowModel:
    """Variables, domains and constraint store for one instance.

    Domains live in ``val`` (``-1`` unbound, else the fixed value). All changes
    go through :meth:`assign` and are recorded on a trail so the search can undo
    them with :meth:`undo`.
    """

    def __init__(self, g: WeightedGraph, inst: Instance, max_passes: int) -> None:
        inst.check(g)
        self.graph = g
        self.instance = inst
        self.max_passes = max_passes
        n = g.n
        self.tail = [a[0] for a in g.arcs]
        self.head = [a[1] for a in g.arcs]
        self.w = [a[2] for a in g.arcs]
        self.out_adj = [list(x) for x in g.out_adj]
        self.in_adj = [list(x) for x in g.in_adj]
        self.val = [UNBOUND] * g.num_arcs
        self.out_one = [0] * n
        self.in_one = [0] * n
        self.out_free = [len(x) for x in self.out_adj]
        self.in_free = [len(x) for x in self.in_adj]
        self.balance = [0] * n
        self.balance[inst.s] = 1
        self.balance[inst.d] = -1
        self.need_out = [0] * n
        for m in inst.mandatory:
            self.need_out[m] = 1
        self.cost = 0.0
        self.bound = math.inf
        self.trail: list[int] = []
        self._queue: deque[int] = deque(range(n))
        self._queued = [True] * n
        self._by_weight = sorted(range(g.num_arcs), key=lambda a: (-self.w[a], a))

    # -- domain changes

    def assign(self, a: int, v: int) -> None:
        self.val[a] = v
        self.trail.append(a)
        t, h = self.tail[a], self.head[a]
        self.out_free[t] -= 1
        self.in_free[h] -= 1
        if v:
            self.out_one[t] += 1
            self.in_one[h] += 1
            self.cost += self.w[a]
        for x in (t, h):
            if not self._queued[x]:
                self._queued[x] = True
                self._queue.append(x)

    def undo(self, mark: int) -> None:
        trail = self.trail
        while len(trail) > mark:
            a = trail.pop()
            t, h = self.tail[a], self.head[a]
            self.out_free[t] += 1
            self.in_free[h] += 1
            if self.val[a]:
                self.out_one[t] -= 1
                self.in_one[h] -= 1
                self.cost -= self.w[a]
            self.val[a] = UNBOUND
        if not trail:
            self.cost = 0.0

    def domain(self, a: int) -> tuple[int, ...]:
        v = self.val[a]
        return (0, 1) if v == UNBOUND else (v,)

    def domains(self) -> list[tuple[int, ...]]:
        return [self.domain(a) for a in range(len(self.val))]

    # -- propagation

    def _filter_node(self, x: int) -> bool:
        oo, of = self.out_one[x], self.out_free[x]
        io, inf_ = self.in_one[x], self.in_free[x]
        b = self.balance[x]
        cap = self.max_passes
        lo_out = max(oo, io + b, self.need_out[x])
        hi_out = min(oo + of, io + inf_ + b, cap)
        if lo_out > hi_out:
            return False
        lo_in = max(io, lo_out - b)
        hi_in = min(io + inf_, hi_out - b, cap)
        if lo_in > hi_in:
            return False
        val = self.val
        if of:
            if hi_out == oo:
                for a in self.out_adj[x]:
                    if val[a] == UNBOUND:
                        self.assign(a, 0)
            elif lo_out == oo + of:
                for a in self.out_adj[x]:
                    if val[a] == UNBOUND:
                        self.assign(a, 1)
        if self.in_free[x]:
            io, inf_ = self.in_one[x], self.in_free[x]
            if hi_in == io:
                for a in self.in_adj[x]:
                    if val[a] == UNBOUND:
                        self.assign(a, 0)
            elif lo_in == io + inf_:
                for a in self.in_adj[x]:
                    if val[a] == UNBOUND:
                        self.assign(a, 1)
        return True

    def _flush(self) -> None:
        while self._queue:
            self._queued[self._queue.pop()] = False

    def propagate(self) -> bool:
        """Run every constraint to its bounds-consistent fixpoint.

        Returns False when some domain empties. A second call right after a
        successful one changes nothing.
        """
        queue, queued = self._queue, self._queued
        while True:
            while queue:
                x = queue.popleft()
                queued[x] = False
                if not self._filter_node(x):
                    self._flush()
                    return False
            limit = self.bound - TOL - self.cost
            if limit <= 0:
                return False
            val, w = self.val, self.w
            for a in self._by_weight:
                if w[a] < limit:
                    break
                if val[a] == UNBOUND:
                    self.assign(a, 0)
            if not queue:
                return True

    # -- plan inspection

    def plan(self) -> frozenset[int]:
        return frozenset(a for a, v in enumerate(self.val) if v == 1)

    def violations(self, plan: Iterable[int]) -> list[str]:
        """Re-evaluate conservation, limits, capacity and coverage for a plan."""
        n = self.graph.n
        out_c, in_c = [0] * n, [0] * n
        for a in plan:
            out_c[self.tail[a]] += 1
            in_c[self.head[a]] += 1
        errs = []
        for x in range(n):
            if out_c[x] != in_c[x] + self.balance[x]:
                errs.append(f"conservation at {x}: out={out_c[x]} in={in_c[x]}")
            if out_c[x] > self.max_passes or in_c[x] > self.max_passes:
                errs.append(f"capacity at {x}")
            if self.need_out[x] and out_c[x] < 1:
                errs.append(f"mandatory {x} not left")
        return errs


def build_model(g: WeightedGraph, inst: Instance, cfg: SolverConfig | None = None) -> FlowModel:
    cfg = cfg or SolverConfig()
    passes = cfg.max_passes or default_max_passes(len(inst.mandatory))
    return FlowModel(g, inst, passes)


def extract_walk(m: FlowModel, plan: Iterable[int]) -> list[int]:
    """Turn a plan into one start -> end walk using every selected arc once.

    Raises :class:`SubtourRejected` when part of the plan is not reachable on
    that walk or a mandatory node is missed.
    """
    plan = sorted(plan)
    succ: dict[int, list[int]] = {}
    for a in plan:
        succ.setdefault(m.tail[a], []).append(m.head[a])
    walk = _euler_walk(m.instance.s, succ)
    if len(walk) - 1 != len(plan) or walk[-1] != m.instance.d:
        raise SubtourRejected(f"plan with {len(plan)} arcs is not a single walk")
    if not m.instance.mandatory <= set(walk):
        raise SubtourRejected("walk misses a mandatory node")
    return walk


def _euler_walk(start: int, succ: dict[int, list[int]]) -> list[int]:
    pos = {x: 0 for x in succ}
    stack = [start]
    walk = []
    while stack:
        x = stack[-1]
        nxt = succ.get(x)
        if nxt is not None and pos[x] < len(nxt):
            pos[x] += 1
            stack.append(nxt[pos[x] - 1])
        else:
            walk.append(stack.pop())
    walk.reverse()
    return walk


class _Search:
    def __init__(self, m: FlowModel, cfg: SolverConfig, probe: ProbeOrdering) -> None:
        self.m = m
        self.cfg = cfg
        self.stats = SearchStats(max_passes=m.max_passes, probe=probe.name)
        n = m.graph.n
        rank = [0] * n
        for r, v in enumerate(probe.node_pref):
            rank[v] = r
        self.rank = rank
        path = probe.preferred_path or ()
        self.preferred = {(u, v) for u, v in zip(path, path[1:])}
        self.root_order = sorted(m.out_adj[m.instance.s], key=lambda a: (rank[m.head[a]], a))
        self.mandatory = sorted(m.instance.mandatory)
        self.dist = dijkstra_all_pairs(m.graph).dist.tolist()
        self.deadline = 0.0

    def run(self) -> SearchStats:
        st = self.stats
        t0 = time.perf_counter()
        self.deadline = t0 + self.cfg.timeout
        try:
            if self.m.propagate():
                self._dfs(self.m.instance.s)
            else:
                st.backtracks += 1
            st.proved_optimal = st.best_walk is not None
        except _Timeout:
            st.timed_out = True
        st.solve_time = (time.perf_counter() - t0) * 1000.0
        return st

    # -- state inspection

    def _components(self) -> list[int]:
        """Label of each node's component in the selected arcs (-1: untouched).

        The start and end always count as touched; the start's label is 0.
        """
        m = self.m
        n = len(m.out_one)
        parent = list(range(n))

        def find(v: int) -> int:
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        for a, v in enumerate(m.val):
            if v == 1:
                ra, rb = find(m.tail[a]), find(m.head[a])
                if ra != rb:
                    parent[rb] = ra
        s, d = m.instance.s, m.instance.d
        root_s = find(s)
        label = [-1] * n
        for v in range(n):
            if m.out_one[v] or m.in_one[v] or v == s or v == d:
                r = find(v)
                label[v] = 0 if r == root_s else r + 1
        return label

    def _targets(self, label: list[int]) -> list[int]:
        """Nodes the plan must still reach: uncovered mandatory and detached ones."""
        oo = self.m.out_one
        out = [i for i in self.mandatory if not oo[i]]
        out += [v for v in range(len(label)) if label[v] > 0 and (oo[v] or self.m.in_one[v])]
        return out

    def remaining_bound(self) -> float:
        """Lower bound on the cost of the arcs the plan still needs.

        When the selected arcs leave exactly one node x owing outflow and one
        node y owing inflow, the missing arcs contain an x -> y path. Every
        node the plan must still reach (an uncovered mandatory node, or a
        selected piece not yet joined to the start) lies on that path, costing
        at least dist[x][t] + dist[t][y], or on cycles hanging off another node
        of the walk, costing at least dist[x][y] plus a round trip. With all
        nodes balanced only the round trips remain. Otherwise 0.
        """
        m = self.m
        oo, io, bal = m.out_one, m.in_one, m.balance
        src = snk = -1
        for v in range(len(oo)):
            e = io[v] + bal[v] - oo[v]
            if e == 0:
                continue
            if e == 1 and src < 0:
                src = v
            elif e == -1 and snk < 0:
                snk = v
            else:
                return 0.0
        if (src < 0) != (snk < 0):
            return 0.0
        dist = self.dist
        base = dist[src][snk] if src >= 0 else 0.0
        best = base
        label = self._components()
        touched = [v for v in range(len(label)) if label[v] >= 0]
        # one group per uncovered mandatory node, one per detached piece
        groups: dict[object, list[int]] = {}
        for i in self.mandatory:
            if not oo[i]:
                groups[("m", i)] = [i]
        for v in touched:
            if label[v] > 0 and (oo[v] or io[v]):
                groups.setdefault(("c", label[v]), []).append(v)
        for key, nodes in groups.items():
            own = label[nodes[0]] if key[0] == "c" else None
            loop = min(
                dist[v][t] + dist[t][v] for t in nodes for v in touched if own is None or label[v] != own
            )
            lb = base + loop
            if src >= 0:
                lb = min(lb, min(dist[src][t] + dist[t][snk] for t in nodes))
            if lb > best:
                best = lb
        return best

    # -- branching choices

    def _open_node(self, hint: int) -> int:
        m = self.m
        oo, io, bal = m.out_one, m.in_one, m.balance
        if oo[hint] < io[hint] + bal[hint]:
            return hint
        best, best_key = -1, None
        for x in range(len(oo)):
            if oo[x] < io[x] + bal[x]:
                key = (m.out_free[x], self.rank[x], x)
                if best_key is None or key < best_key:
                    best, best_key = x, key
        return best

    def _cursor_arc(self, x: int) -> int:
        """Next free arc out of the cursor.

        At the very first decision the probe ranking alone decides. Later the
        preferred path comes first, then arcs heading for the nearest node the
        plan still has to reach (or the node owing inflow), ties by ranking.
        """
        m = self.m
        val, rank = m.val, self.rank
        if x == m.instance.s and not m.out_one[x]:
            return next(a for a in self.root_order if val[a] == UNBOUND)
        dist = self.dist[x]
        pending = [i for i in self.mandatory if i != x and not m.out_one[i]]
        if pending:
            goal = min(pending, key=lambda i: (dist[i], rank[i], i))
        else:
            owing = [v for v in range(len(dist)) if m.out_one[v] > m.in_one[v] + m.balance[v]]
            goal = min(owing, key=lambda v: (dist[v], rank[v], v)) if owing else m.instance.d
        to_goal = [row[goal] for row in self.dist]
        best, best_key = -1, None
        for a in m.out_adj[x]:
            if val[a] != UNBOUND:
                continue
            h = m.head[a]
            key = ((x, h) not in self.preferred, m.w[a] + to_goal[h], rank[h], a)
            if best_key is None or key < best_key:
                best, best_key = a, key
        return best

    def _extension_arc(self) -> int:
        """Free arc leaving the start's component, aimed at the nearest target."""
        m = self.m
        label = self._components()
        targets = self._targets(label)
        dist, rank, val = self.dist, self.rank, m.val
        best, best_key = -1, None
        for t in range(len(label)):
            if label[t] != 0:
                continue
            for a in m.out_adj[t]:
                if val[a] != UNBOUND:
                    continue
                h = m.head[a]
                detour = min((m.w[a] + dist[h][g] + dist[g][t] for g in targets), default=0.0)
                key = (detour, rank[h], rank[t], a)
                if best_key is None or key < best_key:
                    best, best_key = a, key
        return best

    def _record(self) -> bool:
        m = self.m
        plan = m.plan()
        try:
            walk = extract_walk(m, plan)
        except SubtourRejected:
            return False
        st = self.stats
        st.best_cost = m.cost
        st.best_plan = plan
        st.best_walk = walk
        st.incumbents.append(m.cost)
        m.bound = m.cost
        return True

    def _dfs(self, hint: int) -> None:
        st = self.stats
        st.nodes += 1
        if time.perf_counter() > self.deadline:
            raise _Timeout
        if self.cfg.max_nodes is not None and st.nodes > self.cfg.max_nodes:
            raise _Timeout
        m = self.m
        if m.cost + self.remaining_bound() >= m.bound - TOL:
            st.backtracks += 1
            return
        x = self._open_node(hint)
        if x >= 0:
            a = self._cursor_arc(x)
        else:
            if all(m.out_one[i] for i in self.mandatory) and self._record():
                return
            a = self._extension_arc()
            if a < 0:
                st.backtracks += 1
                return
            x = hint
        for v in (1, 0):
            mark = len(m.trail)
            m.assign(a, v)
            if m.propagate():
                self._dfs(m.head[a] if v else x)
            else:
                st.backtracks += 1
            m.undo(mark)


def solve(m: FlowModel, cfg: SolverConfig | None = None) -> SearchStats:
    """Depth-first branch and bound to proof of optimality or timeout."""
    cfg = cfg or SolverConfig()
    probe = cfg.probe
    if probe is None:
        from .oracle import dijkstra_all_pairs

        probe = dijkstra_probe(m.graph, m.instance, dijkstra_all_pairs(m.graph))
    return _Search(m, cfg, probe).run()


def solve_instance(
    g: WeightedGraph,
    inst: Instance,
    cfg: SolverConfig | None = None,
    reference_cost: float | None = None,
) -> SearchStats:
    """Build and solve; with ``reference_cost`` a proved result that is worse
    (or a model with no plan at all) triggers one retry with doubled passes."""
    cfg = cfg or SolverConfig()
    m = build_model(g, inst, cfg)
    st = solve(m, cfg)
    if reference_cost is None or st.timed_out:
        return st
    if st.best_cost > reference_cost + TOL:
        log.info("pass bound %d too tight for %s, retrying", m.max_passes, inst.key())
        retry = SolverConfig(cfg.timeout, m.max_passes * 2, cfg.probe, cfg.max_nodes)
        st = solve(build_model(g, inst, retry), retry)
    return st
