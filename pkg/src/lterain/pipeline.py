"""End-to-end assembly: LTE records + radar windows -> graph dataset."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DataError
from .features import HistogramSpec, feature_tensor, fit_histogram_spec
from .geodata import LabelBinning, RadarGrid, cluster_labels
from .graphbuild import GraphDataset, SensingGraph, build_graphs
from .ingest import LteTable, Rat, SynthConfig, synthesize_dataset, synthesize_radar

logger = logging.getLogger(__name__)


@dataclass
class Featurized:
    dataset: GraphDataset
    centers: np.ndarray
    cluster: np.ndarray  # per (filtered) record
    features: np.ndarray  # (W, m, 3k+1)
    valid: np.ndarray
    spec: HistogramSpec
    binning: LabelBinning
    records: LteTable


def record_windows(records: LteTable, radar: Sequence[RadarGrid]) -> np.ndarray:
    """Map each record to the radar window whose half-open interval holds it."""
    starts = np.array([int(g.window_start.timestamp()) for g in radar], dtype=np.int64)
    if np.any(np.diff(starts) <= 0):
        raise DataError("radar windows must be strictly increasing in time")
    w = np.searchsorted(starts, records.timestamp, side="right") - 1
    return w


def featurize(
    records: LteTable,
    radar: Sequence[RadarGrid],
    m: int = 100,
    n: int = 9,
    k: int = 5,
    r: int = 10,
    seed: int = 0,
    rat: Rat | None = Rat.LTE4G,
    window_seconds: int = 1800,
) -> Featurized:
    """Cluster reports into ``m`` stations and build ``n``-node graphs per window."""
    records = records.filter_rat(rat)
    if len(records) == 0:
        raise DataError("no records left after RAT filtering")
    win = record_windows(records, radar)
    last_end = int(radar[-1].window_start.timestamp()) + window_seconds
    keep = (win >= 0) & (records.timestamp < last_end)
    if not keep.all():
        logger.warning("dropping %d records outside the radar time span", int((~keep).sum()))
        records = records.subset(np.flatnonzero(keep))
        win = win[keep]
    latlon = np.column_stack((records.lat, records.lon))
    labels, centers = cluster_labels(latlon, m, seed)
    spec = fit_histogram_spec(records, k)
    feats, valid = feature_tensor(records, labels, win, m, len(radar), spec)
    binning = LabelBinning.fit([g.values for g in radar], r)
    graphs = build_graphs(centers, feats, valid, radar, n, binning)
    meta = {"m": m, "n": n, "k": k, "r": r, "seed": seed, "spec": spec.to_dict(),
            "binning": [binning.min_val, binning.max_val, binning.r]}
    return Featurized(GraphDataset(graphs, k, r, meta), centers, labels, feats, valid, spec, binning, records)


def synthetic_graphs(cfg: SynthConfig, n: int = 9, k: int = 5, seed: int = 0) -> Featurized:
    """Generate a synthetic world from ``cfg`` and featurize it."""
    radar = synthesize_radar(cfg)
    ds = synthesize_dataset(cfg, radar)
    return featurize(ds.records, radar, m=cfg.m_stations, n=n, k=k, r=cfg.class_count,
                     seed=seed, window_seconds=cfg.window_seconds)


def node_ablation_builder(cfg: SynthConfig, k: int = 5, seed: int = 0) -> Callable[[int], list[SensingGraph]]:
    """Generate one world, then featurize it from scratch for every graph size asked for."""
    radar = synthesize_radar(cfg)
    ds = synthesize_dataset(cfg, radar)

    def build(n: int) -> list[SensingGraph]:
        return featurize(ds.records, radar, m=cfg.m_stations, n=n, k=k, r=cfg.class_count,
                         seed=seed, window_seconds=cfg.window_seconds).dataset.graphs

    return build
