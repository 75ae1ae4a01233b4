"""Sensing graphs over neighboring stations, CV splits and the graph container.

Container layout (little-endian)::

    header   8s magic b"LRGRAPH1" | u32 version | u32 n | u32 k | u32 r
             | u32 feature_dim | u64 count
    graph    i64 anchor | i64 window | i32 label | n x u8 valid
             | n x i64 node station ids | n*F x f64 features | n*n x f64 edges

Feature matrices and edge matrices are stored row-major as raw float64, so a
write/read cycle is bit-exact.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError, MissingInputError
from .geodata import LabelBinning, RadarGrid, bin_labels, interpolate_rain_many, nearest_neighbors, pairwise_km

logger = logging.getLogger(__name__)

MAGIC = b"LRGRAPH1"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIIQ")
_GRAPH_HEAD = struct.Struct("<qqi")


@dataclass
class SensingGraph:
    node_features: np.ndarray
    edge_dist_km: np.ndarray
    label: int
    anchor_station: int
    window: int
    node_valid: np.ndarray | None = None
    node_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.node_features, dtype=np.float64)
        e = np.asarray(self.edge_dist_km, dtype=np.float64)
        n = x.shape[0]
        if x.ndim != 2 or n < 2:
            raise DataError(f"graph needs an (n>=2, F) feature matrix, got {x.shape}")
        if e.shape != (n, n):
            raise DataError(f"edge matrix shape {e.shape} does not match {n} nodes")
        if not np.array_equal(e, e.T) or np.any(e < 0) or np.any(np.diag(e) != 0):
            raise DataError("edge matrix must be symmetric, non-negative, with zero diagonal")
        self.node_features = x
        self.edge_dist_km = e
        self.node_valid = np.ones(n, dtype=bool) if self.node_valid is None \
            else np.asarray(self.node_valid, dtype=bool)
        self.node_ids = np.arange(n, dtype=np.int64) if self.node_ids is None \
            else np.asarray(self.node_ids, dtype=np.int64)
        self.label = int(self.label)

    @property
    def n(self) -> int:
        return self.node_features.shape[0]

    def permuted(self, perm: Sequence[int]) -> "SensingGraph":
        p = np.asarray(perm)
        return SensingGraph(
            self.node_features[p], self.edge_dist_km[np.ix_(p, p)], self.label,
            self.anchor_station, self.window, self.node_valid[p], self.node_ids[p],
        )


def build_graphs(
    centers: np.ndarray,
    features: np.ndarray,
    valid: np.ndarray,
    radar: Sequence[RadarGrid],
    n: int,
    binning: LabelBinning,
) -> list[SensingGraph]:
    """One graph per (window, anchor station), ordered by window then anchor.

    ``features`` has shape ``(W, m, F)``; ``radar[w]`` labels window ``w``.
    The label bins the mean interpolated rainfall over the node centers.
    """
    centers = np.asarray(centers, dtype=float)
    m = len(centers)
    n_w = features.shape[0]
    if not 2 <= n <= m:
        raise DataError(f"graph size n={n} must lie in [2, {m}]")
    if len(radar) != n_w or features.shape[1] != m:
        raise DataError("features, radar windows and centers disagree in shape")
    dist = pairwise_km(centers)
    hoods = [np.array([a] + nearest_neighbors(centers, a, n - 1)) for a in range(m)]
    graphs = []
    for w in range(n_w):
        box = radar[w].bbox
        inside = box.contains(centers[:, 0], centers[:, 1])
        rain = np.full(m, np.nan)
        rain[inside] = interpolate_rain_many(radar[w], centers[inside, 0], centers[inside, 1])
        for a, hood in enumerate(hoods):
            if not inside[hood].all():
                logger.warning("skipping graph (window %d, anchor %d): node outside radar grid", w, a)
                continue
            label = int(bin_labels(binning, rain[hood].mean()))
            graphs.append(SensingGraph(
                features[w, hood], dist[np.ix_(hood, hood)], label, a, w, valid[w, hood], hood,
            ))
    return graphs


@dataclass
class DatasetSplit:
    folds: list[np.ndarray]
    mode: str
    seed: int = 0

    def train_test(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.folds[fold]
        train = np.concatenate([f for i, f in enumerate(self.folds) if i != fold])
        return np.sort(train), test


def time_order(graphs: Sequence[SensingGraph]) -> np.ndarray:
    return np.argsort(np.array([g.window for g in graphs]), kind="stable")


def make_splits(graphs: Sequence[SensingGraph], mode: str = "shuffled", seed: int = 0,
                n_folds: int = 5) -> DatasetSplit:
    """Partition graph indices into ``n_folds`` near-equal folds.

    ``unshuffled`` keeps time order, so every fold is a contiguous block of
    windows; ``shuffled`` permutes with ``seed`` first.
    """
    if len(graphs) < n_folds:
        raise DataError(f"need at least {n_folds} graphs for {n_folds}-fold CV, got {len(graphs)}")
    if mode == "unshuffled":
        order = time_order(graphs)
    elif mode == "shuffled":
        order = np.random.default_rng(seed).permutation(len(graphs))
    else:
        raise DataError(f"unknown split mode {mode!r}")
    return DatasetSplit([f.copy() for f in np.array_split(order, n_folds)], mode, seed)


def half_split(count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random 50/50 train/test partition of ``range(count)``."""
    perm = np.random.default_rng(seed).permutation(count)
    half = count // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


# ---------------------------------------------------------------------------
# Container file
# ---------------------------------------------------------------------------


@dataclass
class GraphDataset:
    graphs: list[SensingGraph]
    k: int
    r: int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.graphs[0].n if self.graphs else 0


def save_graphs(ds: GraphDataset, path) -> None:
    graphs = ds.graphs
    n = ds.n
    f_dim = graphs[0].node_features.shape[1] if graphs else 3 * ds.k + 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, ds.k, ds.r, f_dim, len(graphs)))
        for g in graphs:
            if g.n != n or g.node_features.shape[1] != f_dim:
                raise DataError("all graphs in a container must share n and feature dim")
            fh.write(_GRAPH_HEAD.pack(g.anchor_station, g.window, g.label))
            fh.write(g.node_valid.astype(np.uint8).tobytes())
            fh.write(g.node_ids.astype("<i8").tobytes())
            fh.write(g.node_features.astype("<f8").tobytes())
            fh.write(g.edge_dist_km.astype("<f8").tobytes())


def load_graphs(path) -> GraphDataset:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"graph container not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, k, r, f_dim, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a graph container (magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"{path}: container version {version}, expected {VERSION}")
    per = _GRAPH_HEAD.size + n + 8 * n + 8 * n * f_dim + 8 * n * n
    if len(blob) != _HEADER.size + count * per:
        raise FormatError(f"{path}: expected {_HEADER.size + count * per} bytes, found {len(blob)}")
    graphs = []
    off = _HEADER.size
    for _ in range(count):
        anchor, window, label = _GRAPH_HEAD.unpack_from(blob, off)
        off += _GRAPH_HEAD.size
        valid = np.frombuffer(blob, np.uint8, n, off).astype(bool)
        off += n
        ids = np.frombuffer(blob, "<i8", n, off).astype(np.int64)
        off += 8 * n
        x = np.frombuffer(blob, "<f8", n * f_dim, off).reshape(n, f_dim).copy()
        off += 8 * n * f_dim
        e = np.frombuffer(blob, "<f8", n * n, off).reshape(n, n).copy()
        off += 8 * n * n
        graphs.append(SensingGraph(x, e, label, anchor, window, valid, ids))
    return GraphDataset(graphs, k, r)
