"""Supervised next-hop examples built from solver-optimal walks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import GraphParseError, Instance, WeightedGraph

log = logging.getLogger(__name__)

FORMAT = "wayprobe-dataset 1"


def encode_instance(g: WeightedGraph, inst: Instance) -> np.ndarray:
    """Per-node (start, end, mandatory) indicator triplets, flattened node by node."""
    x = np.zeros(3 * g.n, dtype=np.int8)
    x[3 * inst.s] = 1
    x[3 * inst.d + 1] = 1
    for m in inst.mandatory:
        x[3 * m + 2] = 1
    return x


@dataclass(frozen=True)
class RootPair:
    instance: Instance
    path: tuple[int, ...]

    def __post_init__(self) -> None:
        p = self.path
        if len(p) < 2 or p[0] != self.instance.s or p[-1] != self.instance.d:
            raise ValueError("root path must run from s to d")
        if not self.instance.mandatory <= set(p):
            raise ValueError("root path misses a mandatory node")


def split_root_pair(rp: RootPair) -> list[tuple[Instance, int]]:
    """One (instance, next node) example per step of the optimal walk.

    Every suffix of an optimal walk solves the instance that starts at its first
    node with the mandatory nodes not yet visited. Suffixes that start at the
    destination itself are skipped (start and end must differ).
    """
    path = rp.path
    d = rp.instance.d
    remaining = set(rp.instance.mandatory)
    out = []
    for k in range(len(path) - 1):
        v = path[k]
        remaining.discard(v)
        if v == d:
            continue
        out.append((Instance(v, d, frozenset(remaining)), path[k + 1]))
    return out


@dataclass
class Dataset:
    x: np.ndarray  # (count, 3n) int8
    t: np.ndarray  # (count,) int64
    root: np.ndarray  # (count,) index of the originating root pair
    train_idx: np.ndarray
    test_idx: np.ndarray
    fingerprint: str
    n: int
    seed: int
    instances: list[Instance] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.t)

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.train_idx], self.t[self.train_idx]

    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.test_idx], self.t[self.test_idx]

    def root_level_split(self, frac: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
        """Train/test indices that never separate siblings of one root pair."""
        roots = np.unique(self.root)
        rng = np.random.default_rng([self.seed, 1])
        roots = roots[rng.permutation(len(roots))]
        train_roots = set(roots[: _round(frac * len(roots))].tolist())
        mask = np.array([r in train_roots for r in self.root], dtype=bool)
        order = np.arange(len(self.t))
        return order[mask], order[~mask]


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_dataset(
    g: WeightedGraph,
    pairs: Sequence[RootPair],
    seed: int,
    fingerprint: str,
    train_frac: float = 0.8,
) -> Dataset:
    if not pairs:
        raise ValueError("cannot build a dataset from zero root pairs")
    xs, ts, roots, insts = [], [], [], []
    for r, rp in enumerate(pairs):
        for inst, t in split_root_pair(rp):
            xs.append(encode_instance(g, inst))
            ts.append(t)
            roots.append(r)
            insts.append(inst)
    perm = np.random.default_rng(seed).permutation(len(ts))
    x = np.stack(xs)[perm]
    t = np.asarray(ts, dtype=np.int64)[perm]
    root = np.asarray(roots, dtype=np.int64)[perm]
    insts = [insts[k] for k in perm]
    n_train = _round(train_frac * len(t))
    if n_train == len(t):
        log.warning("test split is empty (%d examples)", len(t))
    idx = np.arange(len(t))
    return Dataset(x, t, root, idx[:n_train], idx[n_train:], fingerprint, g.n, seed, insts)


def format_dataset(ds: Dataset) -> str:
    train = set(ds.train_idx.tolist())
    lines = [
        FORMAT,
        f"fingerprint {ds.fingerprint}",
        f"n {ds.n}",
        f"examples {len(ds)}",
        f"seed {ds.seed}",
    ]
    for k in range(len(ds)):
        split = "train" if k in train else "test"
        bits = " ".join(str(int(b)) for b in ds.x[k])
        lines.append(f"ex {split} {int(ds.root[k])} {int(ds.t[k])} {bits}")
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(format_dataset(ds))


def parse_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or lines[0] != FORMAT:
        raise GraphParseError("not a dataset file")
    try:
        fp = lines[1].split()[1]
        n = int(lines[2].split()[1])
        count = int(lines[3].split()[1])
        seed = int(lines[4].split()[1])
        rows = lines[5:]
        if len(rows) != count:
            raise GraphParseError(f"expected {count} examples, found {len(rows)}")
        x = np.zeros((count, 3 * n), dtype=np.int8)
        t = np.zeros(count, dtype=np.int64)
        root = np.zeros(count, dtype=np.int64)
        is_train = np.zeros(count, dtype=bool)
        for k, row in enumerate(rows):
            parts = row.split()
            if parts[0] != "ex" or len(parts) != 4 + 3 * n:
                raise GraphParseError(f"bad example record {k}")
            is_train[k] = parts[1] == "train"
            root[k] = int(parts[2])
            t[k] = int(parts[3])
            x[k] = [int(b) for b in parts[4:]]
    except (IndexError, ValueError) as exc:
        raise GraphParseError(f"corrupt dataset file: {exc}") from exc
    idx = np.arange(count)
    insts = [decode_instance(row) for row in x]
    return Dataset(x, t, root, idx[is_train], idx[~is_train], fp, n, seed, insts)


def load_dataset(path: str | Path) -> Dataset:
    return parse_dataset(Path(path).read_text())


def decode_instance(x: np.ndarray) -> Instance:
    trip = np.asarray(x).reshape(-1, 3)
    s = int(np.flatnonzero(trip[:, 0])[0])
    d = int(np.flatnonzero(trip[:, 1])[0])
    return Instance(s, d, frozenset(int(v) for v in np.flatnonzero(trip[:, 2])))
