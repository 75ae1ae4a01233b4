"""Node features: per-metric histograms plus the proportion of outdoor users.

A node (station cluster in one time window) is described by
``[pdf(RSRP) | pdf(SINR) | pdf(RSSI) | POU]``, i.e. ``3k + 1`` numbers for
``k`` histogram bins. Bin edges are equal-width over the dataset-wide integer
range of each metric, with the last bin closed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .ingest import LteTable

METRICS = ("rsrp", "sinr", "rssi")


@dataclass(frozen=True)
class HistogramSpec:
    k: int
    mins: tuple[int, int, int]
    maxs: tuple[int, int, int]

    def __post_init__(self) -> None:
        if self.k < 2:
            raise DataError(f"histogram needs k >= 2 bins, got {self.k}")
        for name, lo, hi in zip(METRICS, self.mins, self.maxs):
            if not lo < hi:
                raise DataError(
                    f"degenerate {name} range [{lo}, {hi}]; widen it with more data "
                    "or pass explicit bounds"
                )

    def bounds(self, metric: str) -> tuple[int, int]:
        i = METRICS.index(metric)
        return self.mins[i], self.maxs[i]

    @property
    def feature_dim(self) -> int:
        return 3 * self.k + 1

    def to_dict(self) -> dict:
        return {"k": self.k, "mins": list(self.mins), "maxs": list(self.maxs)}

    @classmethod
    def from_dict(cls, d: dict) -> "HistogramSpec":
        return cls(int(d["k"]), tuple(int(x) for x in d["mins"]), tuple(int(x) for x in d["maxs"]))


@dataclass
class NodeFeatures:
    vector: np.ndarray
    valid: bool = True


def fit_histogram_spec(records: LteTable, k: int = 5) -> HistogramSpec:
    if len(records) == 0:
        raise DataError("cannot fit a histogram spec on zero records")
    cols = [getattr(records, m) for m in METRICS]
    return HistogramSpec(
        k,
        tuple(int(c.min()) for c in cols),
        tuple(int(c.max()) for c in cols),
    )


def _bin_index(values: np.ndarray, lo: int, hi: int, k: int, metric: str) -> np.ndarray:
    values = np.asarray(values)
    out = (values < lo) | (values > hi)
    if out.any():
        raise DataError(f"{metric} value {values[out][0]} outside histogram range [{lo}, {hi}]")
    idx = (k * (values.astype(np.int64) - lo)) // (hi - lo)
    return np.minimum(idx, k - 1)


def estimate_pdf(values, spec: HistogramSpec, metric: str) -> np.ndarray:
    """Relative frequency of each bin; all zeros for an empty sample."""
    lo, hi = spec.bounds(metric)
    values = np.asarray(values)
    if values.size == 0:
        return np.zeros(spec.k)
    counts = np.bincount(_bin_index(values, lo, hi, spec.k, metric), minlength=spec.k)
    return counts / values.size


def node_features(cluster_records: LteTable, spec: HistogramSpec) -> NodeFeatures:
    n = len(cluster_records)
    if n == 0:
        return NodeFeatures(np.zeros(spec.feature_dim), valid=False)
    blocks = [estimate_pdf(getattr(cluster_records, m), spec, m) for m in METRICS]
    pou = np.count_nonzero(cluster_records.outdoor) / n
    return NodeFeatures(np.concatenate(blocks + [np.array([pou])]))


def feature_tensor(
    records: LteTable,
    cluster: np.ndarray,
    window: np.ndarray,
    n_clusters: int,
    n_windows: int,
    spec: HistogramSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Features of every (window, cluster) node at once.

    Returns ``(features, valid)`` with shapes ``(W, m, 3k+1)`` and ``(W, m)``;
    identical to calling :func:`node_features` on each node's records.
    """
    k = spec.k
    cell = np.asarray(window, dtype=np.int64) * n_clusters + np.asarray(cluster, dtype=np.int64)
    n_cells = n_windows * n_clusters
    total = np.bincount(cell, minlength=n_cells).astype(float)
    feats = np.zeros((n_cells, 3 * k + 1))
    for j, m in enumerate(METRICS):
        lo, hi = spec.bounds(m)
        b = _bin_index(getattr(records, m), lo, hi, k, m)
        counts = np.bincount(cell * k + b, minlength=n_cells * k).reshape(n_cells, k)
        feats[:, j * k:(j + 1) * k] = counts
    feats[:, 3 * k] = np.bincount(cell, weights=records.outdoor.astype(float), minlength=n_cells)
    valid = total > 0
    feats[valid] /= total[valid, None]
    return feats.reshape(n_windows, n_clusters, -1), valid.reshape(n_windows, n_clusters)


def feature_header(k: int) -> list[str]:
    return [f"{m}_{i}" for m in METRICS for i in range(k)] + ["pou"]


def write_features_csv(features: np.ndarray, valid: np.ndarray, k: int, path) -> None:
    """One row per node: ``window,station,valid`` then the 3k+1 feature columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "station", "valid"] + feature_header(k))
        n_w, m, _ = features.shape
        for t in range(n_w):
            for s in range(m):
                w.writerow([t, s, int(valid[t, s])] + [repr(float(x)) for x in features[t, s]])
