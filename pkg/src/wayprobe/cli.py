"""Command line front end: one verb per pipeline stage.

    wayprobe generate --n 15 --seed 0 --out run/
    wayprobe solve --graph run/graph.txt --instances run/instances.txt --out run/records.jsonl
    wayprobe train --graph run/graph.txt --instances run/instances.txt --records run/records.jsonl --out run/
    wayprobe eval --graph run/graph.txt --model run/model.bin --out run/
    wayprobe bench --n 15 --seed 0 --out run/
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import (
    BenchConfig,
    SolveRecord,
    evaluation_instances,
    root_pairs,
    run_comparison,
    run_pipeline,
    solve_all,
    table1,
)
from .dataset import build_dataset, load_dataset, save_dataset
from .gcn import GcnModel, TrainConfig, curves_csv, load_model, save_model, train
from .generator import GenConfig, generate_graph, generate_instances, manifest_for
from .graph import GraphError, adjacency_matrix, graph_fingerprint, load_graph, load_instances, save_graph, save_instances
from .oracle import dijkstra_all_pairs
from .probes import FingerprintMismatch, dijkstra_probe, neural_probe

log = logging.getLogger("wayprobe")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--timeout-ms", type=float, default=3000.0, help="per-instance solver budget")
    p.add_argument("--max-nodes", type=int, default=None, help="deterministic search-node budget per instance")
    p.add_argument("--probe", choices=("dijkstra", "neural"), default="dijkstra")
    p.add_argument("--model", type=Path, help="weights file for the neural probe")
    p.add_argument("--out", type=Path, help="output file or directory")
    p.add_argument("--workers", type=int, default=1, help="solver processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _gen_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=15, help="node count")
    p.add_argument("--keep", type=float, default=0.10, help="fraction of longest (s, d) pairs kept")
    p.add_argument("--sizes", type=lambda s: tuple(int(v) for v in s.split(",")), default=None,
                   help="comma-separated mandatory set sizes")
    p.add_argument("--per-pair", type=int, default=None, help="instances per pair and size")


def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--patience", type=int, default=25)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--shards", type=int, default=1, help="data-parallel gradient threads")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="wayprobe", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a benchmark graph, instances and manifest")
    _gen_args(p)

    p = sub.add_parser("solve", parents=[common], help="solve instances and write JSONL records")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--instances", type=Path, required=True)

    p = sub.add_parser("train", parents=[common], help="build the dataset from solved instances and train")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--dataset", type=Path, help="existing dataset file")
    p.add_argument("--instances", type=Path, help="instances the records refer to")
    p.add_argument("--records", type=Path, help="JSONL records from 'solve'")
    _train_args(p)

    p = sub.add_parser("eval", parents=[common], help="compare the reference and neural probes")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--instances", type=Path, help="evaluation instances (default: fresh draw)")
    p.add_argument("--exclude", type=Path, help="instances to keep out of the fresh draw")
    p.add_argument("--per-pair", type=int, default=5)

    p = sub.add_parser("bench", parents=[common], help="run the full pipeline")
    _gen_args(p)
    _train_args(p)
    p.add_argument("--eval-per-pair", type=int, default=5)
    return ap


def _bench_cfg(a) -> BenchConfig:
    return BenchConfig(timeout=a.timeout_ms / 1000.0, max_nodes=a.max_nodes, workers=a.workers)


def _gen_cfg(a) -> GenConfig:
    kw = dict(seed=a.seed, n=a.n, decimation_keep=a.keep, instances_per_pair=a.per_pair)
    if a.sizes is not None:
        kw["mandatory_sizes"] = a.sizes
    return GenConfig(**kw)


def _train_cfg(a) -> TrainConfig:
    return TrainConfig(lr=a.lr, max_epochs=a.epochs, patience=a.patience, batch_size=a.batch_size,
                       seed=a.seed, shards=a.shards)


def _out_dir(a, default: str) -> Path:
    out = a.out or Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_generate(a) -> int:
    cfg = _gen_cfg(a)
    g = generate_graph(cfg)
    spt = dijkstra_all_pairs(g)
    insts = generate_instances(g, spt, cfg)
    out = _out_dir(a, "run")
    save_graph(g, out / "graph.txt")
    save_instances(insts, out / "instances.txt")
    man = manifest_for(g, spt, cfg, insts).as_dict()
    man["fingerprint"] = graph_fingerprint(g)
    _write(out / "manifest.json", json.dumps(man, indent=1, sort_keys=True) + "\n")
    print(f"{g.n} nodes, {len(g.edges)} edges, {len(insts)} instances -> {out}")
    return 0


def _probe_factory(a, g, spt):
    if a.probe == "dijkstra":
        return lambda i: dijkstra_probe(g, i, spt)
    if a.model is None:
        raise SystemExit("--probe neural needs --model")
    fp = graph_fingerprint(g)
    model = load_model(a.model, fp)
    return lambda i: neural_probe(model, g, i, fp)


def cmd_solve(a) -> int:
    g = load_graph(a.graph)
    insts = load_instances(a.instances, g)
    spt = dijkstra_all_pairs(g)
    records = solve_all(g, insts, _probe_factory(a, g, spt), _bench_cfg(a), spt)
    text = "".join(r.to_json() + "\n" for r in records)
    if a.out:
        _write(a.out, text)
    else:
        sys.stdout.write(text)
    print(table1(records).text(f"probe: {a.probe}"), file=sys.stderr if not a.out else sys.stdout)
    return 0


def cmd_train(a) -> int:
    g = load_graph(a.graph)
    fp = graph_fingerprint(g)
    out = _out_dir(a, "run")
    if a.dataset:
        ds = load_dataset(a.dataset)
    elif a.instances and a.records:
        insts = load_instances(a.instances, g)
        records = [SolveRecord.from_json(line) for line in a.records.read_text().splitlines() if line.strip()]
        ds = build_dataset(g, root_pairs(insts, records), a.seed, fp)
        save_dataset(ds, out / "dataset.txt")
    else:
        raise SystemExit("train needs --dataset, or --instances with --records")
    model = GcnModel(adjacency_matrix(g), fingerprint=fp, seed=a.seed)
    res = train(model, ds, _train_cfg(a), verbose=a.verbose)
    save_model(res.model, out / "model.bin")
    _write(out / "curves.csv", curves_csv(res.curves))
    best = res.best
    print(f"{len(ds)} examples, best epoch {res.best_epoch}: "
          f"test loss {best['test_loss']:.4f}, test accuracy {best['test_acc']:.4f}")
    return 0


def _write_report(rep, out: Path) -> None:
    _write(out / "report.txt", rep.text())
    _write(out / "report.csv", rep.csv())
    _write(out / "report.json", rep.to_json())
    print(rep.text())


def cmd_eval(a) -> int:
    if a.model is None:
        raise SystemExit("eval needs --model")
    g = load_graph(a.graph)
    spt = dijkstra_all_pairs(g)
    model = load_model(a.model, graph_fingerprint(g))
    if a.instances:
        insts = load_instances(a.instances, g)
    else:
        exclude = load_instances(a.exclude, g) if a.exclude else []
        insts = evaluation_instances(g, spt, GenConfig(seed=a.seed, n=g.n), a.per_pair, exclude)
    out = _out_dir(a, "run")
    save_instances(insts, out / "eval_instances.txt")
    _write_report(run_comparison(g, insts, model, _bench_cfg(a), spt), out)
    return 0


def cmd_bench(a) -> int:
    out = _out_dir(a, "run")
    res = run_pipeline(_gen_cfg(a), _bench_cfg(a), _train_cfg(a), a.eval_per_pair)
    save_graph(res.graph, out / "graph.txt")
    save_instances(res.train_instances, out / "instances.txt")
    save_instances(res.eval_instances, out / "eval_instances.txt")
    _write(out / "records.jsonl", "".join(r.to_json() + "\n" for r in res.data_records))
    save_dataset(res.dataset, out / "dataset.txt")
    save_model(res.training.model, out / "model.bin")
    _write(out / "curves.csv", curves_csv(res.training.curves))
    _write(out / "table1.txt", res.table1.text())
    _write(out / "table1.csv", res.table1.csv())
    print(res.table1.text("Generated and optimally solved instances"))
    print(f"best epoch {res.training.best_epoch}: test accuracy {res.training.best['test_acc']:.4f}")
    _write_report(res.report, out)
    return 0


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[a.verb](a)
    except (GraphError, FingerprintMismatch, OSError, ValueError) as exc:
        print(f"wayprobe {a.verb}: {exc}", file=sys.stderr)
        return 2
