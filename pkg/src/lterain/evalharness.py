"""Evaluation protocol: k-fold baselines, node-count ablation and POU ablation.

A classifier is anything with ``fit_predict(graphs, train_idx, test_idx,
seed) -> (predictions, curve)``; the default trains RainNet. Stubs with the
same method make the harness testable without training.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import DataError, LteRainError
from .graphbuild import SensingGraph, half_split, make_splits
from .rainnet import EpochMetrics, RainNetModel, TrainConfig, median_edge_km, predict_batch, prepare_batch, train

logger = logging.getLogger(__name__)


class Classifier(Protocol):
    def fit_predict(
        self, graphs: Sequence[SensingGraph], train_idx: np.ndarray, test_idx: np.ndarray, seed: int
    ) -> tuple[np.ndarray, list[EpochMetrics]]: ...


@dataclass
class RainNetClassifier:
    k: int
    r: int
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    hidden: int = 64
    include_pou: bool = True
    sigma_e: float | None = None  # default: median edge length of the training graphs

    def fit_predict(self, graphs, train_idx, test_idx, seed):
        train_idx = np.asarray(train_idx)
        sigma = self.sigma_e or median_edge_km([graphs[i] for i in train_idx])
        model = RainNetModel.init(self.k, self.r, sigma, seed, self.hidden, self.include_pou)
        data = prepare_batch(model, graphs)
        cfg = TrainConfig(**{**asdict(self.train_cfg), "seed": seed})
        trained, curve = train(model, data, (train_idx, test_idx), cfg)
        return predict_batch(trained, data.take(np.asarray(test_idx))), curve


class PerfectClassifier:
    """Returns the true labels; for harness tests."""

    def fit_predict(self, graphs, train_idx, test_idx, seed):
        return np.array([graphs[i].label for i in test_idx], dtype=np.int64), []


@dataclass
class RandomClassifier:
    """Uniform random guesses over ``r`` classes."""

    r: int

    def fit_predict(self, graphs, train_idx, test_idx, seed):
        return np.random.default_rng(seed).integers(0, self.r, size=len(test_idx)), []


def confusion_matrix(y_true, y_pred, r: int) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    cm = np.zeros((r, r), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def rep_seeds(seed: int, reps: int) -> list[int]:
    """Seed schedule shared by every arm of an experiment."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(reps)]


@dataclass
class ExperimentReport:
    name: str
    mode: str
    fold_accuracies: list
    confusion: np.ndarray
    curves: list  # per fold, list of EpochMetrics
    config: dict = field(default_factory=dict)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def accuracy(self) -> float:
        """Pooled accuracy over every test prediction, trace / total."""
        return float(np.trace(self.confusion) / self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mode": self.mode,
            "fold_accuracies": [float(a) for a in self.fold_accuracies],
            "mean_accuracy": self.mean_accuracy,
            "pooled_accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "config": self.config,
        }

    def write(self, out_dir) -> None:
        """``report.json``, ``confusion.csv``, ``folds.csv`` and ``curves.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        with open(out / "confusion.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            r = self.confusion.shape[0]
            w.writerow(["true\\pred"] + [str(c) for c in range(r)] + ["total"])
            for c in range(r):
                w.writerow([c] + self.confusion[c].tolist() + [int(self.confusion[c].sum())])
        with open(out / "folds.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "accuracy"])
            for i, a in enumerate(self.fold_accuracies):
                w.writerow([i, repr(float(a))])
        with open(out / "curves.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "fold", "train_loss", "test_acc"])
            for fold, curve in enumerate(self.curves):
                for m in curve:
                    w.writerow([m.epoch, fold, repr(m.train_loss), repr(m.test_acc)])


def _labels(graphs: Sequence[SensingGraph]) -> np.ndarray:
    return np.array([g.label for g in graphs], dtype=np.int64)


def run_baseline(
    graphs: Sequence[SensingGraph],
    r: int,
    mode: str = "shuffled",
    classifier: Classifier | None = None,
    seed: int = 0,
    n_folds: int = 5,
    k: int = 5,
    on_fold: Callable[[int, float], None] | None = None,
) -> ExperimentReport:
    """K-fold cross-validation in ``shuffled`` or ``unshuffled`` (time-ordered) mode."""
    y = _labels(graphs)
    if np.any((y < 0) | (y >= r)):
        raise DataError(f"labels must lie in [0, {r - 1}]")
    counts = np.bincount(y, minlength=r)
    thin = np.flatnonzero(counts < 5)
    if len(thin):
        logger.warning("classes %s have fewer than 5 graphs", thin.tolist())
    split = make_splits(graphs, mode, seed, n_folds)
    for fold in range(n_folds):
        tr, te = split.train_test(fold)
        unseen = sorted(set(y[te].tolist()) - set(y[tr].tolist()))
        if unseen:
            raise DataError(f"fold {fold}: test classes {unseen} never occur in its training folds")
    classifier = classifier or RainNetClassifier(k, r)
    accs, curves = [], []
    cm = np.zeros((r, r), dtype=np.int64)
    for fold in range(n_folds):
        tr, te = split.train_test(fold)
        pred, curve = classifier.fit_predict(graphs, tr, te, seed)
        acc = float(np.mean(pred == y[te]))
        accs.append(acc)
        curves.append(curve)
        cm += confusion_matrix(y[te], pred, r)
        logger.info("%s fold %d: accuracy %.4f", mode, fold, acc)
        if on_fold is not None:
            on_fold(fold, acc)
    config = {"mode": mode, "seed": seed, "n_folds": n_folds, "r": r, "graphs": len(graphs)}
    if isinstance(classifier, RainNetClassifier):
        config["train"] = asdict(classifier.train_cfg)
        config["hidden"] = classifier.hidden
        config["include_pou"] = classifier.include_pou
    return ExperimentReport("baseline", mode, accs, cm, curves, config)


@dataclass
class NodeAblationRow:
    n: int
    accuracies: list
    error: str | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def sem(self) -> float:
        """Standard error of the repetition mean."""
        a = np.asarray(self.accuracies)
        return float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0


def _half_split_reps(graphs, seed: int, reps: int) -> list[tuple[int, np.ndarray, np.ndarray]]:
    out = []
    for s in rep_seeds(seed, reps):
        tr, te = half_split(len(graphs), s)
        out.append((s, tr, te))
    return out


def run_node_ablation(
    builder: Callable[[int], Sequence[SensingGraph]],
    classifier_for: Callable[[int], Classifier],
    n_values: Sequence[int] = tuple(range(2, 9)),
    reps: int = 5,
    seed: int = 0,
) -> list[NodeAblationRow]:
    """Accuracy versus graph size on 50/50 splits, averaged over ``reps`` runs.

    ``builder(n)`` returns the graph set for size ``n``; ``classifier_for(n)``
    returns a fresh classifier. A failure at one ``n`` is recorded in that
    row and the sweep continues.
    """
    rows = []
    for n in n_values:
        try:
            graphs = builder(n)
            y = _labels(graphs)
            accs = []
            for s, tr, te in _half_split_reps(graphs, seed, reps):
                pred, _ = classifier_for(n).fit_predict(graphs, tr, te, s)
                accs.append(float(np.mean(pred == y[te])))
            rows.append(NodeAblationRow(n, accs))
            logger.info("n=%d: mean accuracy %.4f", n, rows[-1].mean)
        except LteRainError as exc:
            logger.error("n=%d failed: %s", n, exc)
            rows.append(NodeAblationRow(n, [], f"{type(exc).__name__}: {exc}"))
    return rows


@dataclass
class PouAblation:
    with_pou: list
    without_pou: list
    dims: tuple[int, int]

    @property
    def acc_with(self) -> float:
        return float(np.mean(self.with_pou))

    @property
    def acc_without(self) -> float:
        return float(np.mean(self.without_pou))

    @property
    def gap(self) -> float:
        return self.acc_with - self.acc_without


def run_pou_ablation(
    graphs: Sequence[SensingGraph],
    k: int,
    r: int,
    train_cfg: TrainConfig | None = None,
    reps: int = 5,
    seed: int = 0,
) -> PouAblation:
    """Same splits and seeds with node features of length 3k+1 versus 3k."""
    cfg = train_cfg or TrainConfig()
    y = _labels(graphs)
    arms = {True: [], False: []}
    for s, tr, te in _half_split_reps(graphs, seed, reps):
        for include in (True, False):
            clf = RainNetClassifier(k, r, cfg, include_pou=include)
            pred, _ = clf.fit_predict(graphs, tr, te, s)
            arms[include].append(float(np.mean(pred == y[te])))
    return PouAblation(arms[True], arms[False], (3 * k + 1, 3 * k))


def write_node_ablation_csv(rows: Sequence[NodeAblationRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "mean_accuracy", "sem", "repetitions", "error"])
        for row in rows:
            w.writerow([row.n, repr(row.mean), repr(row.sem), len(row.accuracies), row.error or ""])
