"""End-to-end pipeline: label instances with the solver, train, compare probes."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset, RootPair, build_dataset
from .gcn import GcnModel, TrainConfig, TrainResult, train
from .generator import TABLE1_SIZES, TABLE2_SIZES, GenConfig, generate_graph, generate_instances
from .graph import Instance, WeightedGraph, adjacency_matrix, format_instance, graph_fingerprint
from .oracle import MAX_MANDATORY, ShortestPathTable, brute_force_solve, dijkstra_all_pairs
from .probes import ProbeOrdering, dijkstra_probe, neural_probe
from .solver import TOL, SolverConfig, solve_instance

log = logging.getLogger(__name__)


class CostDisagreement(RuntimeError):
    """Two probes proved different optimal costs for the same instance."""


@dataclass
class SolveRecord:
    id: int
    instance: str
    cost: float
    walk: list[int] | None
    proved_optimal: bool
    backtracks: int
    time_ms: float
    probe: str
    size: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        d["cost"] = None if math.isinf(self.cost) else self.cost
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SolveRecord":
        d = json.loads(line)
        d["cost"] = math.inf if d["cost"] is None else d["cost"]
        return cls(**d)


@dataclass
class BenchConfig:
    timeout: float = 3.0
    max_nodes: int | None = None
    workers: int = 1
    # cross-check proved results against the brute-force optimum (|M| <= this)
    verify_up_to: int = MAX_MANDATORY


def _solve_one(job) -> SolveRecord:
    k, g, inst, probe, bcfg, spt = job
    reference = None
    cfg = SolverConfig(timeout=bcfg.timeout, probe=probe, max_nodes=bcfg.max_nodes)
    st = solve_instance(g, inst, cfg)
    if st.proved_optimal and len(inst.mandatory) <= bcfg.verify_up_to:
        reference, _ = brute_force_solve(g, inst, spt)
        if st.best_cost > reference + TOL:
            st = solve_instance(g, inst, cfg, reference_cost=reference)
            if st.proved_optimal and st.best_cost > reference + TOL:
                log.warning("solver optimum %.6f above oracle %.6f for %s", st.best_cost, reference,
                            format_instance(inst))
                st.proved_optimal = False
    return SolveRecord(k, format_instance(inst), st.best_cost, st.best_walk, st.proved_optimal,
                       st.backtracks, st.solve_time, probe.name, len(inst.mandatory))


def solve_all(
    g: WeightedGraph,
    instances: Sequence[Instance],
    probe_for: Callable[[Instance], ProbeOrdering],
    bcfg: BenchConfig,
    spt: ShortestPathTable | None = None,
) -> list[SolveRecord]:
    """Solve every instance; records come back ordered by instance id."""
    spt = spt if spt is not None else dijkstra_all_pairs(g)
    jobs = [(k, g, inst, probe_for(inst), bcfg, spt) for k, inst in enumerate(instances)]
    if bcfg.workers > 1:
        with ProcessPoolExecutor(bcfg.workers) as pool:
            records = list(pool.map(_solve_one, jobs, chunksize=4))
    else:
        records = [_solve_one(j) for j in jobs]
    return sorted(records, key=lambda r: r.id)


# ---------------------------------------------------------------- reports


@dataclass
class Table1:
    sizes: list[int]
    generated: dict[int, int]
    solved: dict[int, int]

    def text(self, title: str = "") -> str:
        head = ["Mandatory waypoints #:"] + [str(k) for k in self.sizes]
        rows = [
            [f"generated ({sum(self.generated.values())}):"] + [str(self.generated.get(k, 0)) for k in self.sizes],
            [f"optimally solved ({sum(self.solved.values())}):"] + [str(self.solved.get(k, 0)) for k in self.sizes],
        ]
        return _table(head, rows, title)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["size", "generated", "solved"])
        for k in self.sizes:
            w.writerow([k, self.generated.get(k, 0), self.solved.get(k, 0)])
        return buf.getvalue()


def table1(records: Sequence[SolveRecord], sizes: Sequence[int] = TABLE1_SIZES) -> Table1:
    gen = {k: 0 for k in sizes}
    sol = {k: 0 for k in sizes}
    for r in records:
        gen[r.size] = gen.get(r.size, 0) + 1
        sol[r.size] = sol.get(r.size, 0) + int(r.proved_optimal)
    sizes = sorted(set(sizes) | set(gen))
    return Table1(list(sizes), gen, sol)


@dataclass
class ProbeSummary:
    proved_by_size: dict[int, int]
    resolved: int
    avg_time_ms: float
    avg_backtracks: float
    co_avg_time_ms: float = float("nan")
    co_avg_backtracks: float = float("nan")


@dataclass
class BenchReport:
    sizes: list[int]
    evaluated_by_size: dict[int, int]
    probes: dict[str, ProbeSummary]
    co_solved: int = 0
    records: dict[str, list[SolveRecord]] = field(default_factory=dict, repr=False)

    def text(self, title: str = "") -> str:
        head = ["Mandatory waypoints #:"] + [str(k) for k in self.sizes]
        rows = [["instances:"] + [str(self.evaluated_by_size.get(k, 0)) for k in self.sizes]]
        for name, p in self.probes.items():
            rows.append([f"{name}:"] + [str(p.proved_by_size.get(k, 0)) for k in self.sizes])
        out = _table(head, rows, title or "Instances resolved with proof of optimality") + "\n"
        head3 = ["Global search features"] + list(self.probes)
        rows3 = [
            ["instances resolved"] + [str(p.resolved) for p in self.probes.values()],
            ["avg solving time (ms)"] + [f"{p.avg_time_ms:.1f}" for p in self.probes.values()],
            ["avg backtracks"] + [f"{p.avg_backtracks:.1f}" for p in self.probes.values()],
            [f"co-solved ({self.co_solved}) avg time (ms)"] + [f"{p.co_avg_time_ms:.1f}" for p in self.probes.values()],
            [f"co-solved ({self.co_solved}) avg backtracks"] + [f"{p.co_avg_backtracks:.1f}" for p in self.probes.values()],
        ]
        return out + _table(head3, rows3, "Averages over proved-optimal runs")

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["probe", "size", "instances", "proved_optimal"])
        for name, p in self.probes.items():
            for k in self.sizes:
                w.writerow([name, k, self.evaluated_by_size.get(k, 0), p.proved_by_size.get(k, 0)])
        w.writerow([])
        w.writerow(["probe", "resolved", "avg_time_ms", "avg_backtracks", "co_solved", "co_avg_time_ms",
                    "co_avg_backtracks"])
        for name, p in self.probes.items():
            w.writerow([name, p.resolved, repr(p.avg_time_ms), repr(p.avg_backtracks), self.co_solved,
                        repr(p.co_avg_time_ms), repr(p.co_avg_backtracks)])
        return buf.getvalue()

    def to_json(self, timings: bool = True) -> str:
        def summary(p: ProbeSummary) -> dict:
            d = asdict(p)
            d["proved_by_size"] = {str(k): v for k, v in p.proved_by_size.items()}
            if not timings:
                d.pop("avg_time_ms")
                d.pop("co_avg_time_ms")
            return d

        recs = {}
        for name, rs in self.records.items():
            recs[name] = [json.loads(r.to_json()) for r in rs]
            if not timings:
                for r in recs[name]:
                    r.pop("time_ms")
        return json.dumps(
            {
                "sizes": self.sizes,
                "evaluated_by_size": {str(k): v for k, v in self.evaluated_by_size.items()},
                "co_solved": self.co_solved,
                "probe_order": list(self.probes),
                "probes": {name: summary(p) for name, p in self.probes.items()},
                "records": recs,
            },
            sort_keys=True,
            indent=1,
            allow_nan=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        d = json.loads(text)
        probes = {}
        for name in d["probe_order"]:
            p = d["probes"][name]
            p["proved_by_size"] = {int(k): v for k, v in p["proved_by_size"].items()}
            probes[name] = ProbeSummary(**p)
        records = {name: [SolveRecord(**{**r, "cost": math.inf if r["cost"] is None else r["cost"]})
                          for r in d["records"][name]] for name in d["probe_order"] if name in d["records"]}
        return cls(d["sizes"], {int(k): v for k, v in d["evaluated_by_size"].items()}, probes, d["co_solved"], records)


def _mean(xs: list[float]) -> float:
    return float(np.mean(xs)) if xs else float("nan")


def _table(head: list[str], rows: list[list[str]], title: str = "") -> str:
    widths = [max(len(r[c]) for r in [head, *rows]) for c in range(len(head))]
    fmt = lambda r: " | ".join(r[0].ljust(widths[0]) if c == 0 else r[c].rjust(widths[c]) for c in range(len(r)))
    lines = [title] if title else []
    lines += [fmt(head), "-+-".join("-" * w for w in widths), *(fmt(r) for r in rows)]
    return "\n".join(lines) + "\n"


def compare(records: dict[str, list[SolveRecord]], sizes: Sequence[int] = TABLE2_SIZES) -> BenchReport:
    """Summarise runs of several probes over one instance list (same ids)."""
    names = list(records)
    ids = [r.id for r in records[names[0]]]
    for name in names[1:]:
        if [r.id for r in records[name]] != ids:
            raise ValueError("probe runs cover different instance sets")
    evaluated: dict[int, int] = {k: 0 for k in sizes}
    for r in records[names[0]]:
        evaluated[r.size] = evaluated.get(r.size, 0) + 1
    co = [k for k in range(len(ids)) if all(records[nm][k].proved_optimal for nm in names)]
    for k in co:
        costs = [records[nm][k].cost for nm in names]
        if max(costs) - min(costs) > TOL:
            raise CostDisagreement(f"instance {ids[k]}: proved costs {costs}")
    probes = {}
    for name in names:
        rs = records[name]
        proved = [r for r in rs if r.proved_optimal]
        by_size = {k: 0 for k in evaluated}
        for r in proved:
            by_size[r.size] += 1
        probes[name] = ProbeSummary(
            by_size,
            len(proved),
            _mean([r.time_ms for r in proved]),
            _mean([r.backtracks for r in proved]),
            _mean([rs[k].time_ms for k in co]),
            _mean([rs[k].backtracks for k in co]),
        )
    return BenchReport(sorted(evaluated), evaluated, probes, len(co), records)


# ---------------------------------------------------------------- pipeline stages


def root_pairs(instances: Sequence[Instance], records: Sequence[SolveRecord]) -> list[RootPair]:
    return [RootPair(instances[r.id], tuple(r.walk)) for r in records if r.proved_optimal and r.walk]


def run_data_generation(
    g: WeightedGraph,
    instances: Sequence[Instance],
    bcfg: BenchConfig,
    seed: int = 0,
    spt: ShortestPathTable | None = None,
) -> tuple[Dataset, Table1, list[SolveRecord]]:
    """Label instances with the shortest-path-probed solver; keep proved optima."""
    spt = spt if spt is not None else dijkstra_all_pairs(g)
    records = solve_all(g, instances, lambda i: dijkstra_probe(g, i, spt), bcfg, spt)
    pairs = root_pairs(instances, records)
    ds = build_dataset(g, pairs, seed, graph_fingerprint(g))
    return ds, table1(records), records


def run_comparison(
    g: WeightedGraph,
    eval_instances: Sequence[Instance],
    model: GcnModel,
    bcfg: BenchConfig,
    spt: ShortestPathTable | None = None,
    sizes: Sequence[int] = TABLE2_SIZES,
) -> BenchReport:
    """Solve every evaluation instance with both probes under the same limits."""
    spt = spt if spt is not None else dijkstra_all_pairs(g)
    fp = graph_fingerprint(g)
    ref = solve_all(g, eval_instances, lambda i: dijkstra_probe(g, i, spt), bcfg, spt)
    nn = solve_all(g, eval_instances, lambda i: neural_probe(model, g, i, fp), bcfg, spt)
    return compare({"reference": ref, "neural": nn}, sizes)


def evaluation_instances(
    g: WeightedGraph, spt: ShortestPathTable, gen: GenConfig, per_pair: int, exclude: Sequence[Instance] = ()
) -> list[Instance]:
    """Fresh instances with the comparison sizes, none of which appears in ``exclude``."""
    cfg = GenConfig(seed=gen.seed + 7919, n=gen.n, decimation_keep=gen.decimation_keep,
                    mandatory_sizes=TABLE2_SIZES, instances_per_pair=per_pair, target_degree=gen.target_degree)
    taken = {format_instance(i) for i in exclude}
    drawn = generate_instances(g, spt, cfg)
    fresh = [i for i in drawn if format_instance(i) not in taken]
    if len(fresh) < len(drawn):
        log.warning("dropped %d evaluation instances that collide with training instances", len(drawn) - len(fresh))
    return fresh


@dataclass
class PipelineResult:
    graph: WeightedGraph
    train_instances: list[Instance]
    eval_instances: list[Instance]
    dataset: Dataset
    table1: Table1
    data_records: list[SolveRecord]
    training: TrainResult
    report: BenchReport | None = None


def run_pipeline(
    gen: GenConfig,
    bcfg: BenchConfig,
    tcfg: TrainConfig,
    eval_per_pair: int = 5,
    compare_probes: bool = True,
    widths: tuple[int, ...] = (32, 32, 32),
) -> PipelineResult:
    g = generate_graph(gen)
    spt = dijkstra_all_pairs(g)
    train_inst = generate_instances(g, spt, gen)
    log.info("graph: %d nodes, %d edges; %d training instances", g.n, len(g.edges), len(train_inst))
    ds, t1, recs = run_data_generation(g, train_inst, bcfg, gen.seed, spt)
    log.info("dataset: %d examples from %d proved roots", len(ds), sum(t1.solved.values()))
    model = GcnModel(adjacency_matrix(g), widths, 0.1, tcfg.bn_decay, graph_fingerprint(g), tcfg.seed)
    result = train(model, ds, tcfg)
    eval_inst = evaluation_instances(g, spt, gen, eval_per_pair, train_inst)
    out = PipelineResult(g, train_inst, eval_inst, ds, t1, recs, result)
    if compare_probes:
        out.report = run_comparison(g, eval_inst, result.model, bcfg, spt)
    return out
