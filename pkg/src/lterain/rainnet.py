"""RainNet: three graph-convolution layers, mean-pool readout, linear head.

Each convolution computes ``ReLU(Â H W + b)`` where ``Â`` is the symmetric
normalized adjacency of a Gaussian kernel on inter-station distance (with
self-loops). Gradients are derived by hand and checked against finite
differences in the test-suite. Everything runs in float64 on numpy.

Model file layout (little-endian)::

    8s magic b"RAINNET1" | u16 version | u16 flags | u32 k | u32 r
    | u32 in_dim | u32 hidden | f64 sigma_e
    then for each parameter in PARAM_NAMES order:
    u32 rows | u32 cols | rows*cols x f64
"""

from __future__ import annotations

import copy
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, FormatError, MissingInputError, TrainingError
from .graphbuild import DatasetSplit, SensingGraph

logger = logging.getLogger(__name__)

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "wh", "bh")
MAGIC = b"RAINNET1"
VERSION = 1
FLAG_POU = 1
_HEAD = struct.Struct("<8sHHIIIId")
_DIMS = struct.Struct("<II")


def normalized_adjacency(edge_dist_km: np.ndarray, sigma_e: float) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with ``A_ij = exp(-d_ij^2 / sigma_e^2)``, ``A_ii = 1``.

    Works on a single ``(n, n)`` matrix or a stack ``(..., n, n)``.
    """
    if not sigma_e > 0:
        raise DataError(f"edge-kernel bandwidth must be positive, got {sigma_e}")
    d = np.asarray(edge_dist_km, dtype=np.float64)
    a = np.exp(-(d / sigma_e) ** 2)
    n = d.shape[-1]
    idx = np.arange(n)
    a[..., idx, idx] = 1.0
    inv = 1.0 / np.sqrt(a.sum(axis=-1))
    return a * inv[..., :, None] * inv[..., None, :]


def median_edge_km(graphs: Sequence[SensingGraph]) -> float:
    """Default kernel bandwidth: median off-diagonal distance over the graphs."""
    vals = [g.edge_dist_km[np.triu_indices(g.n, 1)] for g in graphs]
    med = float(np.median(np.concatenate(vals)))
    return med if med > 0 else 1.0


@dataclass
class RainNetModel:
    k: int
    r: int
    sigma_e: float
    params: dict
    include_pou: bool = True
    hidden: int = 64

    @property
    def in_dim(self) -> int:
        return 3 * self.k + (1 if self.include_pou else 0)

    @classmethod
    def init(cls, k: int, r: int, sigma_e: float, seed: int = 0, hidden: int = 64,
             include_pou: bool = True) -> "RainNetModel":
        """Uniform fan-in initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        if sigma_e <= 0:
            raise DataError(f"edge-kernel bandwidth must be positive, got {sigma_e}")
        rng = np.random.default_rng(seed)
        in_dim = 3 * k + (1 if include_pou else 0)
        shapes = [(in_dim, hidden), (hidden, hidden), (hidden, hidden), (hidden, r)]
        params = {}
        for (w, b), (fan_in, fan_out) in zip(zip(PARAM_NAMES[::2], PARAM_NAMES[1::2]), shapes):
            bound = 1.0 / np.sqrt(fan_in)
            params[w] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[b] = rng.uniform(-bound, bound, size=fan_out)
        return cls(k, r, float(sigma_e), params, include_pou, hidden)

    def copy(self) -> "RainNetModel":
        return copy.deepcopy(self)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


@dataclass
class GraphBatch:
    x: np.ndarray  # (G, n, F)
    adj: np.ndarray  # (G, n, n) normalized
    y: np.ndarray  # (G,)

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "GraphBatch":
        return GraphBatch(self.x[idx], self.adj[idx], self.y[idx])


def prepare_batch(model: RainNetModel, graphs: Sequence[SensingGraph]) -> GraphBatch:
    """Stack graphs into arrays, dropping the POU column for POU-less models."""
    if len(graphs) == 0:
        raise DataError("empty batch")
    ns = {g.n for g in graphs}
    if len(ns) != 1:
        raise DataError(f"graphs in a batch must share node count, got {sorted(ns)}")
    x = np.stack([g.node_features for g in graphs])
    feat = x.shape[-1]
    if feat == 3 * model.k + 1 and not model.include_pou:
        x = x[..., : 3 * model.k]
    elif feat != model.in_dim:
        raise DataError(f"conv1: graph feature dim {feat} does not match model input dim {model.in_dim}")
    d = np.stack([g.edge_dist_km for g in graphs])
    y = np.array([g.label for g in graphs], dtype=np.int64)
    return GraphBatch(np.ascontiguousarray(x), normalized_adjacency(d, model.sigma_e), y)


def _forward(p: dict, x: np.ndarray, adj: np.ndarray):
    g_count, n, _ = x.shape
    h = x
    cache = []
    for layer in ("1", "2", "3"):
        w, b = p["w" + layer], p["b" + layer]
        if h.shape[-1] != w.shape[0]:
            raise DataError(f"conv{layer}: input width {h.shape[-1]} != weight rows {w.shape[0]}")
        ah = (adj @ h).reshape(g_count * n, -1)
        z = ah @ w
        z += b
        np.maximum(z, 0.0, out=z)
        cache.append((ah, z))
        h = z.reshape(g_count, n, -1)
    pooled = h.mean(axis=1)
    logits = pooled @ p["wh"] + p["bh"]
    return logits, (cache, pooled)


def forward_batch(model: RainNetModel, batch: GraphBatch) -> np.ndarray:
    return _forward(model.params, batch.x, batch.adj)[0]


def forward(model: RainNetModel, graph: SensingGraph) -> np.ndarray:
    return forward_batch(model, prepare_batch(model, [graph]))[0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(-_log_softmax(logits)[np.arange(len(y)), y].mean())


def _loss_and_grads_arrays(p: dict, batch: GraphBatch) -> tuple[float, dict]:
    g_count, n, _ = batch.x.shape
    r = p["bh"].shape[0]
    if np.any(batch.y < 0) or np.any(batch.y >= r):
        raise DataError(f"labels must lie in [0, {r - 1}]")
    logits, (cache, pooled) = _forward(p, batch.x, batch.adj)
    logp = _log_softmax(logits)
    rows = np.arange(g_count)
    loss = float(-logp[rows, batch.y].mean())
    dlogits = np.exp(logp)
    dlogits[rows, batch.y] -= 1.0
    dlogits /= g_count

    grads = {"wh": pooled.T @ dlogits, "bh": dlogits.sum(axis=0)}
    dpooled = dlogits @ p["wh"].T
    hidden = dpooled.shape[1]
    # cached activations are post-ReLU, so (h > 0) is the ReLU derivative
    dz = None
    for layer, (ah, h) in zip(("3", "2", "1"), reversed(cache)):
        if dz is None:
            dz = (h.reshape(g_count, n, hidden) > 0) * (dpooled[:, None, :] / n)
            dz = dz.reshape(g_count * n, hidden)
        else:
            dz = dh.reshape(g_count * n, -1)
            dz *= h > 0
        grads["w" + layer] = ah.T @ dz
        grads["b" + layer] = dz.sum(axis=0)
        if layer != "1":
            dah = (dz @ p["w" + layer].T).reshape(g_count, n, -1)
            dh = np.matmul(np.swapaxes(batch.adj, 1, 2), dah)
    return loss, grads


def loss_and_grads(model: RainNetModel, batch) -> tuple[float, dict]:
    """Mean cross-entropy over the batch and its gradient for every parameter.

    ``batch`` is a :class:`GraphBatch` or a sequence of graphs.
    """
    if not isinstance(batch, GraphBatch):
        if len(batch) == 0:
            raise DataError("empty batch")
        batch = prepare_batch(model, batch)
    if len(batch) == 0:
        raise DataError("empty batch")
    return _loss_and_grads_arrays(model.params, batch)


def predict_batch(model: RainNetModel, batch: GraphBatch) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return np.argmax(forward_batch(model, batch), axis=1)


def predict(model: RainNetModel, graph: SensingGraph) -> int:
    return int(np.argmax(forward(model, graph)))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 0.03
    seed: int = 0
    optimizer: str = "sgd"
    batch_size: int = 128
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: str = "cosine"  # or "constant"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise DataError("learning rate must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise DataError(f"unknown learning-rate schedule {self.schedule!r}")

    def rate(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch; cosine decays to zero at the end."""
        if self.schedule == "constant":
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + np.cos(np.pi * (epoch - 1) / self.epochs))


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_acc: float


class _Optimizer:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()} if cfg.optimizer == "adam" else None

    def step(self, params: dict, grads: dict, lr: float) -> None:
        c = self.cfg
        self.t += 1
        for name, g in grads.items():
            if c.weight_decay and name.startswith("w"):
                g = g + c.weight_decay * params[name]
            if c.optimizer == "sgd":
                self.m[name] = c.momentum * self.m[name] + g
                params[name] -= lr * self.m[name]
            else:
                self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
                self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
                mhat = self.m[name] / (1 - c.beta1 ** self.t)
                vhat = self.v[name] / (1 - c.beta2 ** self.t)
                params[name] -= lr * mhat / (np.sqrt(vhat) + c.eps)


def _resolve_split(split, fold: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(split, DatasetSplit):
        return split.train_test(fold)
    train_idx, test_idx = split
    return np.asarray(train_idx, dtype=np.int64), np.asarray(test_idx, dtype=np.int64)


def train(
    model: RainNetModel,
    graphs: Sequence[SensingGraph] | GraphBatch,
    split,
    cfg: TrainConfig,
    fold: int = 0,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> tuple[RainNetModel, list[EpochMetrics]]:
    """Mini-batch training on the train indices; evaluates test accuracy per epoch.

    ``split`` is a :class:`DatasetSplit` (with ``fold``) or a
    ``(train_idx, test_idx)`` pair. Returns a trained copy of ``model``.
    """
    model = model.copy()
    data = graphs if isinstance(graphs, GraphBatch) else prepare_batch(model, graphs)
    train_idx, test_idx = _resolve_split(split, fold)
    if len(train_idx) == 0:
        raise DataError("training split is empty")
    missing = sorted(set(range(model.r)) - set(np.unique(data.y[train_idx]).tolist()))
    if missing:
        logger.warning("classes %s have no training graphs", missing)
    train_set = data.take(train_idx)
    test_set = data.take(test_idx) if len(test_idx) else None
    rng = np.random.default_rng(cfg.seed)
    opt = _Optimizer(model.params, cfg)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.rate(epoch)
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = _loss_and_grads_arrays(model.params, train_set.take(idx))
            if not np.isfinite(loss):
                norms = {k: float(np.linalg.norm(v)) for k, v in model.params.items()}
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, batch starting {start}; "
                    f"parameter norms {norms}"
                )
            opt.step(model.params, grads, lr)
            total += loss * len(idx)
            seen += len(idx)
        acc = float(np.mean(predict_batch(model, test_set) == test_set.y)) if test_set else float("nan")
        metrics = EpochMetrics(epoch, total / seen, acc)
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(metrics)
    return model, history


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def model_bytes(model: RainNetModel) -> bytes:
    flags = FLAG_POU if model.include_pou else 0
    parts = [_HEAD.pack(MAGIC, VERSION, flags, model.k, model.r, model.in_dim, model.hidden, model.sigma_e)]
    for name in PARAM_NAMES:
        arr = np.atleast_2d(model.params[name])
        parts.append(_DIMS.pack(*arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def save_model(model: RainNetModel, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path, expected_k: int | None = None, expected_r: int | None = None) -> RainNetModel:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"model file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEAD.size:
        raise FormatError(f"{path}: truncated model header")
    magic, version, flags, k, r, in_dim, hidden, sigma_e = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a RainNet model file")
    if version != VERSION:
        raise FormatError(f"{path}: model version {version}, expected {VERSION}")
    if expected_k is not None and k != expected_k:
        raise FormatError(f"{path}: histogram bins k: expected {expected_k}, found {k}")
    if expected_r is not None and r != expected_r:
        raise FormatError(f"{path}: class count r: expected {expected_r}, found {r}")
    include_pou = bool(flags & FLAG_POU)
    if in_dim != 3 * k + (1 if include_pou else 0):
        raise FormatError(f"{path}: input dim {in_dim} inconsistent with k={k}")
    expect = {
        "w1": (in_dim, hidden), "b1": (1, hidden), "w2": (hidden, hidden), "b2": (1, hidden),
        "w3": (hidden, hidden), "b3": (1, hidden), "wh": (hidden, r), "bh": (1, r),
    }
    off = _HEAD.size
    params = {}
    for name in PARAM_NAMES:
        if off + _DIMS.size > len(blob):
            raise FormatError(f"{path}: truncated before parameter {name}")
        rows, cols = _DIMS.unpack_from(blob, off)
        off += _DIMS.size
        if (rows, cols) != expect[name]:
            raise FormatError(f"{path}: parameter {name} has shape {(rows, cols)}, expected {expect[name]}")
        size = rows * cols * 8
        if off + size > len(blob):
            raise FormatError(f"{path}: truncated inside parameter {name}")
        arr = np.frombuffer(blob, "<f8", rows * cols, off).astype(np.float64)
        params[name] = arr.reshape(cols) if name.startswith("b") else arr.reshape(rows, cols)
        off += size
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return RainNetModel(k, r, sigma_e, params, include_pou, hidden)


def write_metrics_csv(rows: Sequence[tuple[int, EpochMetrics]], path) -> None:
    """Per-epoch metrics as ``epoch,fold,train_loss,test_acc``."""
    with open(path, "w") as fh:
        fh.write("epoch,fold,train_loss,test_acc\n")
        for fold, m in rows:
            fh.write(f"{m.epoch},{fold},{m.train_loss!r},{m.test_acc!r}\n")
