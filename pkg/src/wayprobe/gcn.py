"""Graph convolutional next-hop predictor written directly against numpy.

Architecture: the (n, 3) instance features pass through a stack of graph
convolutions ``relu(batchnorm(S @ H @ theta))`` with the fixed propagation
matrix ``S = D^-1/2 (A + I) D^-1/2``; the final node features are flattened
row by row, dropped out (training only) and mapped by a dense layer to one
logit per node, followed by a softmax.

Gradients are derived by hand; tests check them against finite differences.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .probes import FingerprintMismatch

log = logging.getLogger(__name__)

BN_EPS = 1e-5
PROB_FLOOR = 1e-12
FORMAT = "wayprobe-gcn 1"


class ModelFormatError(ValueError):
    pass


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if (a < 0).any():
        raise ValueError("adjacency must be non-negative")
    at = a + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(at.sum(axis=1))
    return inv_sqrt[:, None] * at * inv_sqrt[None, :]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    # exp underflow on extreme logits; keep every probability strictly positive
    return np.maximum(p, np.finfo(np.float64).tiny)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true labels (probabilities clamped at 1e-12)."""
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    bn_decay: float = 0.9
    max_epochs: int = 400
    patience: int = 25
    seed: int = 0
    shards: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # train/test on whole root pairs instead of individual examples
    root_split: bool = False

    def __post_init__(self) -> None:
        if min(self.lr, self.batch_size, self.bn_decay, self.max_epochs, self.patience, self.shards) <= 0:
            raise ValueError("training hyperparameters must be positive")


class GcnModel:
    def __init__(
        self,
        adjacency: np.ndarray,
        widths: tuple[int, ...] = (32, 32, 32),
        dropout: float = 0.1,
        bn_decay: float = 0.9,
        fingerprint: str = "",
        seed: int = 0,
    ) -> None:
        self.s = normalize_adjacency(adjacency)
        self.n = self.s.shape[0]
        self.widths = tuple(int(w) for w in widths)
        self.dropout = float(dropout)
        self.bn_decay = float(bn_decay)
        self.fingerprint = fingerprint
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        self.stats: dict[str, np.ndarray] = {}
        d_in = 3
        for l, d_out in enumerate(self.widths):
            lim = np.sqrt(6.0 / (d_in + d_out))
            self.params[f"theta{l}"] = rng.uniform(-lim, lim, (d_in, d_out))
            self.params[f"gamma{l}"] = np.ones(d_out)
            self.params[f"beta{l}"] = np.zeros(d_out)
            self.stats[f"mean{l}"] = np.zeros(d_out)
            self.stats[f"var{l}"] = np.ones(d_out)
            d_in = d_out
        flat = self.n * d_in
        lim = np.sqrt(6.0 / (flat + self.n))
        self.params["W"] = rng.uniform(-lim, lim, (flat, self.n))
        self.params["b"] = np.zeros(self.n)

    def copy(self) -> "GcnModel":
        return copy.deepcopy(self)

    def param_names(self) -> list[str]:
        return list(self.params)

    # -- forward / backward

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
        mask: np.ndarray | None = None,
        update_stats: bool = True,
    ) -> tuple[np.ndarray, dict]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != 3 * self.n:
            raise ValueError(f"expected inputs of shape (batch, {3 * self.n}), got {x.shape}")
        batch = x.shape[0]
        h = x.reshape(batch, self.n, 3)
        layers = []
        for l in range(len(self.widths)):
            ah = np.matmul(self.s, h)
            z = ah @ self.params[f"theta{l}"]
            if train:
                mu = z.mean(axis=(0, 1))
                var = z.var(axis=(0, 1))
                if update_stats:
                    k = self.bn_decay
                    self.stats[f"mean{l}"] = k * self.stats[f"mean{l}"] + (1 - k) * mu
                    self.stats[f"var{l}"] = k * self.stats[f"var{l}"] + (1 - k) * var
            else:
                mu, var = self.stats[f"mean{l}"], self.stats[f"var{l}"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xh = (z - mu) * inv
            y = self.params[f"gamma{l}"] * xh + self.params[f"beta{l}"]
            h = np.maximum(y, 0.0)
            layers.append((ah, xh, inv, y, mu, var))
        flat = h.reshape(batch, -1)
        if train and self.dropout > 0:
            if mask is None:
                rng = rng if rng is not None else np.random.default_rng()
                mask = (rng.random(flat.shape) >= self.dropout) / (1.0 - self.dropout)
            flat = flat * mask
        else:
            mask = None
        probs = softmax(flat @ self.params["W"] + self.params["b"])
        assert (probs > 0).all()
        return probs, {"layers": layers, "flat": flat, "mask": mask, "probs": probs}

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, train=False)[0]

    def backward(self, cache: dict, labels: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the mean cross-entropy w.r.t. every parameter (train-mode cache)."""
        probs = cache["probs"]
        batch = probs.shape[0]
        dz = probs.copy()
        dz[np.arange(batch), labels] -= 1.0
        dz /= batch
        grads = {"W": cache["flat"].T @ dz, "b": dz.sum(axis=0)}
        dflat = dz @ self.params["W"].T
        if cache["mask"] is not None:
            dflat = dflat * cache["mask"]
        dh = dflat.reshape(batch, self.n, -1)
        count = batch * self.n
        for l in reversed(range(len(self.widths))):
            ah, xh, inv, y, _, _ = cache["layers"][l]
            dy = dh * (y > 0)
            grads[f"gamma{l}"] = (dy * xh).sum(axis=(0, 1))
            grads[f"beta{l}"] = dy.sum(axis=(0, 1))
            dxh = dy * self.params[f"gamma{l}"]
            dzl = (inv / count) * (count * dxh - dxh.sum(axis=(0, 1)) - xh * (dxh * xh).sum(axis=(0, 1)))
            theta = self.params[f"theta{l}"]
            grads[f"theta{l}"] = ah.reshape(-1, ah.shape[-1]).T @ dzl.reshape(-1, dzl.shape[-1])
            if l:
                dh = np.matmul(self.s.T, dzl @ theta.T)
        return grads

    def loss_and_grads(
        self, x: np.ndarray, labels: np.ndarray, rng: np.random.Generator | None = None, update_stats: bool = True
    ) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
        probs, cache = self.forward(x, train=True, rng=rng, update_stats=update_stats)
        return cross_entropy(probs, labels), probs, self.backward(cache, labels)


class Adam:
    def __init__(self, cfg: TrainConfig) -> None:
        self.lr, self.b1, self.b2, self.eps = cfg.lr, cfg.beta1, cfg.beta2, cfg.eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def adam_step(model: GcnModel, grads: dict[str, np.ndarray], opt: Adam) -> GcnModel:
    opt.step(model.params, grads)
    return model


def _sharded_grads(
    model: GcnModel, x: np.ndarray, t: np.ndarray, shards: int, rng: np.random.Generator, pool: ThreadPoolExecutor
) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    parts = [p for p in np.array_split(np.arange(len(t)), shards) if len(p)]
    masks = []
    for p in parts:
        flat = model.n * model.widths[-1]
        masks.append((rng.random((len(p), flat)) >= model.dropout) / (1.0 - model.dropout) if model.dropout else None)

    def work(k: int):
        p = parts[k]
        probs, cache = model.forward(x[p], train=True, mask=masks[k], update_stats=False)
        return probs, model.backward(cache, t[p]), cache

    results = list(pool.map(work, range(len(parts))))
    # fixed reduction order keeps the sum bit-reproducible
    grads = {k: sum(r[1][k] * len(p) for r, p in zip(results, parts)) / len(t) for k in model.params}
    k = model.bn_decay
    for probs, cache in ((r[0], r[2]) for r in results):
        for l, (_, _, _, _, mu, var) in enumerate(cache["layers"]):
            model.stats[f"mean{l}"] = k * model.stats[f"mean{l}"] + (1 - k) * mu
            model.stats[f"var{l}"] = k * model.stats[f"var{l}"] + (1 - k) * var
    probs = np.concatenate([r[0] for r in results])
    return cross_entropy(probs, t), probs, grads


@dataclass
class TrainResult:
    model: GcnModel
    curves: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best(self) -> dict:
        return self.curves[self.best_epoch - 1]


def train(model: GcnModel, ds, cfg: TrainConfig | None = None, verbose: bool = False) -> TrainResult:
    """Mini-batch Adam with early stopping on held-out loss.

    Returns the snapshot with the lowest test loss (train loss when the test
    split is empty). Curves hold per-epoch mean mini-batch train loss/accuracy
    and inference-mode test loss/accuracy.
    """
    cfg = cfg or TrainConfig()
    if ds.fingerprint != model.fingerprint:
        raise FingerprintMismatch("dataset and model come from different graphs")
    if cfg.root_split:
        tr, te = ds.root_level_split()
        xtr, ttr, xte, tte = ds.x[tr], ds.t[tr], ds.x[te], ds.t[te]
    else:
        xtr, ttr = ds.train()
        xte, tte = ds.test()
    if len(ttr) == 0:
        raise ValueError("empty training set")
    xtr = xtr.astype(np.float64)
    xte = xte.astype(np.float64)
    model.bn_decay = cfg.bn_decay
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg)
    pool = ThreadPoolExecutor(cfg.shards) if cfg.shards > 1 else None
    result = TrainResult(model.copy())
    best_loss = np.inf
    wait = 0
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            perm = rng.permutation(len(ttr))
            loss_sum, hits, seen = 0.0, 0, 0
            for start in range(0, len(perm), cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                if len(idx) < 2:
                    continue  # batch statistics need two samples
                if pool is not None:
                    loss, probs, grads = _sharded_grads(model, xtr[idx], ttr[idx], cfg.shards, rng, pool)
                else:
                    loss, probs, grads = model.loss_and_grads(xtr[idx], ttr[idx], rng)
                opt.step(model.params, grads)
                loss_sum += loss * len(idx)
                hits += int((np.argmax(probs, axis=1) == ttr[idx]).sum())
                seen += len(idx)
            row = {"epoch": epoch, "train_loss": loss_sum / seen, "train_acc": hits / seen}
            if len(tte):
                p = model.predict(xte)
                row["test_loss"], row["test_acc"] = cross_entropy(p, tte), accuracy(p, tte)
            else:
                row["test_loss"], row["test_acc"] = float("nan"), float("nan")
            result.curves.append(row)
            monitor = row["test_loss"] if len(tte) else row["train_loss"]
            if verbose:
                log.info("epoch %d train %.4f/%.3f test %.4f/%.3f", epoch, row["train_loss"], row["train_acc"],
                         row["test_loss"], row["test_acc"])
            if monitor < best_loss:
                best_loss = monitor
                result.model = model.copy()
                result.best_epoch = epoch
                wait = 0
            else:
                wait += 1
                if wait >= cfg.patience:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return result


def smooth(values: list[float], mu: float = 0.8) -> list[float]:
    out, acc = [], None
    for v in values:
        acc = v if acc is None else mu * acc + (1 - mu) * v
        out.append(acc)
    return out


def curves_csv(curves: list[dict], mu: float = 0.8) -> str:
    cols = ["train_loss", "test_loss", "train_acc", "test_acc"]
    smoothed = {c: smooth([r[c] for r in curves], mu) for c in cols}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", *cols, *(f"{c}_smooth" for c in cols)])
    for k, r in enumerate(curves):
        w.writerow([r["epoch"], *(repr(r[c]) for c in cols), *(repr(smoothed[c][k]) for c in cols)])
    return buf.getvalue()


# ---------------------------------------------------------------- persistence


def _arrays(model: GcnModel) -> list[tuple[str, np.ndarray]]:
    return [("S", model.s), *model.params.items(), *model.stats.items()]


def dumps_model(model: GcnModel) -> bytes:
    arrays = _arrays(model)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    header = {
        "fingerprint": model.fingerprint,
        "n": model.n,
        "widths": list(model.widths),
        "dropout": model.dropout,
        "bn_decay": model.bn_decay,
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "sha256": hashlib.sha256(payload).hexdigest(),
        "bytes": len(payload),
    }
    return (FORMAT + "\n" + json.dumps(header, sort_keys=True) + "\n").encode() + payload


def loads_model(blob: bytes, fingerprint: str | None = None) -> GcnModel:
    try:
        first, rest = blob.split(b"\n", 1)
        head, payload = rest.split(b"\n", 1)
        if first.decode() != FORMAT:
            raise ModelFormatError(f"unsupported model format {first[:40]!r}")
        header = json.loads(head)
    except (ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"unreadable model header: {exc}") from exc
    if len(payload) != header["bytes"] or hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ModelFormatError("model payload is truncated or corrupted")
    if fingerprint is not None and header["fingerprint"] != fingerprint:
        raise FingerprintMismatch("weights belong to a different graph")
    n = header["n"]
    model = GcnModel(np.zeros((n, n)), tuple(header["widths"]), header["dropout"], header["bn_decay"],
                     header["fingerprint"])
    offset = 0
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += size
        if name == "S":
            model.s = arr
        elif name in model.params:
            model.params[name] = arr
        elif name in model.stats:
            model.stats[name] = arr
        else:
            raise ModelFormatError(f"unknown array {name!r}")
    return model


def save_model(model: GcnModel, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_model(model))
    tmp.replace(path)


def load_model(path: str | Path, fingerprint: str | None = None) -> GcnModel:
    return loads_model(Path(path).read_bytes(), fingerprint)
