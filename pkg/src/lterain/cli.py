"""Command-line entry point: ``lterain <command> [--config FILE] [--out-dir DIR] [--seed N]``.

Commands and the artifacts they leave in the output directory:

* ``synth``      records.csv, truth.csv, radar/window_NNNN.json
* ``featurize``  features.csv, graphs.bin, featurize.json
* ``train``      model.bin, metrics.csv
* ``eval``       <mode>/report.json, confusion.csv, folds.csv, curves.csv
* ``ablate``     node_ablation.csv, pou_ablation.json
* ``energy``     savings.csv, coverage.csv
* ``water``      water.csv

Every command also writes ``config.json``, the fully resolved configuration.
Outputs are staged and only moved into place when the command succeeds, so a
failed run leaves nothing behind. Errors print one line,
``error: <ErrorClass>: <detail>``, and exit with the class's code.
Set ``LTERAIN_LOG`` (DEBUG, INFO, WARNING...) for log verbosity.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

COMMANDS = ("synth", "featurize", "train", "eval", "ablate", "energy", "water")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

logger = logging.getLogger("lterain")


def default_config() -> dict:
    from .energysim import EnergyScenario
    from .ingest import SynthConfig
    from .rainnet import TrainConfig

    synth = SynthConfig().to_dict()
    synth.pop("seed")
    train = TrainConfig().__dict__.copy()
    train.pop("seed")
    energy = EnergyScenario().to_dict()
    energy.pop("seed")
    return {
        "seed": 0,
        "synth": synth,
        "featurize": {"m": 100, "n": 9, "k": 5, "r": 10, "rat": "LTE4G", "window_seconds": 1800},
        "train": {**train, "hidden": 64, "mode": "shuffled", "fold": 0, "n_folds": 5},
        "eval": {"modes": ["shuffled", "unshuffled"]},
        "ablate": {
            "experiments": ["node", "pou"],
            "n_values": list(range(2, 9)),
            "reps": 5,
            # overrides applied on top of the synth section for each ablation world
            "node_world": {
                "station_bias_sigma": 1.0, "outdoor_prob": [0.5] * 10,
                "m_stations": 36, "n_windows": 100, "users_per_station": 200,
            },
            "pou_world": {
                "station_bias_sigma": 1.0,
                "m_stations": 36, "n_windows": 100, "users_per_station": 200,
            },
            "pou_control_world": {
                "station_bias_sigma": 1.0, "outdoor_prob": [0.5] * 10,
                "m_stations": 36, "n_windows": 100, "users_per_station": 200,
            },
        },
        "energy": {
            **energy,
            "solver": "exact",
            "pr_rain": [round(0.1 * i, 1) for i in range(11)],
            "layout_seeds": None,  # null: just the master seed
        },
        "water": {"freq_ghz": [0.5, 1.0, 2.0, 3.4, 5.0, 10.0, 28.0], "temp_c": [0.0, 25.0, 50.0]},
    }


SECTIONS = {
    "synth": ("synth",),
    "featurize": ("featurize",),
    "train": ("train",),
    "eval": ("train", "eval"),
    "ablate": ("synth", "featurize", "train", "ablate"),
    "energy": ("energy",),
    "water": ("water",),
}


def _merge(base: dict, override: dict, where: str) -> dict:
    from .errors import ConfigError

    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(out[key], dict) and isinstance(val, dict) and not key.endswith("_world"):
            out[key] = _merge(out[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def resolve_config(command: str, path: str | None, seed: int | None) -> dict:
    """Defaults, then the config file, then ``--seed``; only sections the command uses."""
    from .errors import ConfigError, MissingInputError

    cfg = default_config()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise MissingInputError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{p}: top level must be an object")
        cfg = _merge(cfg, user, "")
    if seed is not None:
        cfg["seed"] = seed
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    out = {"command": command, "seed": cfg["seed"]}
    for sec in SECTIONS[command]:
        out[sec] = cfg[sec]
    _validate(out)
    return out


def _validate(cfg: dict) -> None:
    """Construct every config object once so bad values fail before any work."""
    from .errors import ConfigError, LteRainError
    from .ingest import Rat, SynthConfig

    try:
        if "synth" in cfg:
            SynthConfig.from_dict({**cfg["synth"], "seed": cfg["seed"]})
        if "featurize" in cfg:
            f = cfg["featurize"]
            if f["rat"] is not None and f["rat"] not in Rat.__members__:
                raise ConfigError(f"featurize.rat must be one of {list(Rat.__members__)} or null")
            if not 2 <= f["n"] <= f["m"]:
                raise ConfigError("featurize needs 2 <= n <= m")
            if f["k"] < 2 or f["r"] < 2:
                raise ConfigError("featurize needs k >= 2 and r >= 2")
        if "train" in cfg:
            _train_config(cfg)
            t = cfg["train"]
            if t["mode"] not in ("shuffled", "unshuffled"):
                raise ConfigError("train.mode must be shuffled or unshuffled")
            if not 0 <= t["fold"] < t["n_folds"]:
                raise ConfigError("train.fold must lie in [0, n_folds)")
        if "eval" in cfg:
            bad = set(cfg["eval"]["modes"]) - {"shuffled", "unshuffled"}
            if bad:
                raise ConfigError(f"unknown eval modes {sorted(bad)}")
        if "ablate" in cfg:
            a = cfg["ablate"]
            bad = set(a["experiments"]) - {"node", "pou"}
            if bad:
                raise ConfigError(f"unknown ablation experiments {sorted(bad)}")
            for world in ("node_world", "pou_world", "pou_control_world"):
                SynthConfig.from_dict({**cfg["synth"], **a[world], "seed": cfg["seed"]})
        if "energy" in cfg:
            e = cfg["energy"]
            _scenario(e, cfg["seed"])
            if e["solver"] not in ("exact", "greedy"):
                raise ConfigError("energy.solver must be exact or greedy")
            if any(not 0 <= p <= 1 for p in e["pr_rain"]):
                raise ConfigError("energy.pr_rain values must lie in [0, 1]")
        if "water" in cfg:
            from .energysim.water import _check

            _check(cfg["water"]["freq_ghz"], cfg["water"]["temp_c"])
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    except LteRainError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _train_config(cfg: dict):
    from .rainnet import TrainConfig

    t = {k: v for k, v in cfg["train"].items() if k not in ("hidden", "mode", "fold", "n_folds")}
    return TrainConfig(**t, seed=cfg["seed"])


def _scenario(e: dict, seed: int):
    from .energysim import EnergyScenario

    fields = {k: v for k, v in e.items() if k not in ("solver", "pr_rain", "layout_seeds")}
    return EnergyScenario.from_dict({**fields, "seed": seed})


def _synth_config(cfg: dict, overrides: dict | None = None):
    from .ingest import SynthConfig

    return SynthConfig.from_dict({**cfg["synth"], **(overrides or {}), "seed": cfg["seed"]})


def _require(path: Path, what: str) -> Path:
    from .errors import MissingInputError

    if not path.exists():
        raise MissingInputError(f"{what} not found: {path}")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Commands; each writes into a staging directory
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict, args, stage: Path) -> None:
    from .geodata import save_radar_grid
    from .ingest import synthesize_dataset, synthesize_radar, write_lte_csv, write_truth_csv

    sc = _synth_config(cfg)
    radar = synthesize_radar(sc)
    ds = synthesize_dataset(sc, radar)
    write_lte_csv(ds.records, stage / "records.csv")
    write_truth_csv(ds, stage / "truth.csv")
    (stage / "radar").mkdir()
    for w, g in enumerate(radar):
        save_radar_grid(g, stage / "radar" / f"window_{w:04d}.json")
    logger.info("synthesized %d records over %d windows", len(ds.records), len(radar))


def _load_radar_dir(path: Path):
    from .errors import MissingInputError
    from .geodata import load_radar_grid

    files = sorted(_require(path, "radar directory").glob("*.json"))
    if not files:
        raise MissingInputError(f"no radar windows (*.json) in {path}")
    return [load_radar_grid(f) for f in files]


def cmd_featurize(cfg: dict, args, stage: Path) -> None:
    from .features import write_features_csv
    from .graphbuild import save_graphs
    from .ingest import Rat, parse_lte_csv
    from .pipeline import featurize

    records_path = _require(Path(args.records), "LTE records file")
    radar = _load_radar_dir(Path(args.radar))
    records = parse_lte_csv(records_path)
    f = cfg["featurize"]
    rat = None if f["rat"] is None else Rat[f["rat"]]
    out = featurize(records, radar, m=f["m"], n=f["n"], k=f["k"], r=f["r"], seed=cfg["seed"],
                    rat=rat, window_seconds=f["window_seconds"])
    write_features_csv(out.features, out.valid, f["k"], stage / "features.csv")
    save_graphs(out.dataset, stage / "graphs.bin")
    _write_json(stage / "featurize.json", {
        **out.dataset.meta,
        "graphs": len(out.dataset.graphs),
        "centers": out.centers.tolist(),
    })


def _load_graph_set(args):
    from .graphbuild import load_graphs

    ds = load_graphs(_require(Path(args.graphs), "graph container"))
    if not ds.graphs:
        from .errors import DataError

        raise DataError(f"graph container {args.graphs} holds no graphs")
    return ds


def cmd_train(cfg: dict, args, stage: Path) -> None:
    from .graphbuild import make_splits
    from .rainnet import RainNetModel, median_edge_km, save_model, train, write_metrics_csv

    ds = _load_graph_set(args)
    t = cfg["train"]
    tc = _train_config(cfg)
    split = make_splits(ds.graphs, t["mode"], cfg["seed"], t["n_folds"])
    train_idx, _ = split.train_test(t["fold"])
    sigma = median_edge_km([ds.graphs[i] for i in train_idx])
    model = RainNetModel.init(ds.k, ds.r, sigma, cfg["seed"], t["hidden"])
    trained, curve = train(model, ds.graphs, split, tc, t["fold"])
    save_model(trained, stage / "model.bin")
    write_metrics_csv([(t["fold"], m) for m in curve], stage / "metrics.csv")
    logger.info("final test accuracy %.4f", curve[-1].test_acc)


def cmd_eval(cfg: dict, args, stage: Path) -> None:
    from .evalharness import RainNetClassifier, run_baseline

    ds = _load_graph_set(args)
    t = cfg["train"]
    clf = RainNetClassifier(ds.k, ds.r, _train_config(cfg), t["hidden"])
    summary = {}
    for mode in cfg["eval"]["modes"]:
        rep = run_baseline(ds.graphs, ds.r, mode, clf, cfg["seed"], t["n_folds"], ds.k)
        rep.write(stage / mode)
        summary[mode] = rep.mean_accuracy
        print(f"{mode}: mean accuracy {rep.mean_accuracy:.4f}")
    _write_json(stage / "summary.json", summary)


def cmd_ablate(cfg: dict, args, stage: Path) -> None:
    from .evalharness import RainNetClassifier, run_node_ablation, run_pou_ablation, write_node_ablation_csv
    from .pipeline import node_ablation_builder, synthetic_graphs

    a = cfg["ablate"]
    f = cfg["featurize"]
    t = cfg["train"]
    tc = _train_config(cfg)
    if "node" in a["experiments"]:
        builder = node_ablation_builder(_synth_config(cfg, a["node_world"]), f["k"], cfg["seed"])
        rows = run_node_ablation(
            builder, lambda n: RainNetClassifier(f["k"], f["r"], tc, t["hidden"]),
            a["n_values"], a["reps"], cfg["seed"],
        )
        write_node_ablation_csv(rows, stage / "node_ablation.csv")
        for row in rows:
            print(f"n={row.n}: {row.mean:.4f}")
    if "pou" in a["experiments"]:
        out = {}
        for name in ("pou_world", "pou_control_world"):
            sc = _synth_config(cfg, a[name])
            graphs = synthetic_graphs(sc, f["n"], f["k"], cfg["seed"]).dataset.graphs
            res = run_pou_ablation(graphs, f["k"], sc.class_count, tc, a["reps"], cfg["seed"])
            out[name] = {
                "with_pou": res.with_pou, "without_pou": res.without_pou,
                "acc_with": res.acc_with, "acc_without": res.acc_without,
                "gap": res.gap, "feature_dims": list(res.dims),
            }
            print(f"{name}: with POU {res.acc_with:.4f}, without {res.acc_without:.4f}")
        _write_json(stage / "pou_ablation.json", out)


def cmd_energy(cfg: dict, args, stage: Path) -> None:
    import csv

    from .energysim import EnergyTotals, build_layout, min_power_robust, min_power_single

    e = cfg["energy"]
    with open(stage / "savings.csv", "w", newline="") as sv, open(stage / "coverage.csv", "w", newline="") as cv:
        savings = csv.writer(sv, lineterminator="\n")
        coverage = csv.writer(cv, lineterminator="\n")
        savings.writerow(["layout_seed", "pr_rain", "P_w", "P_wo", "savings"])
        coverage.writerow(["layout_seed", "allocation", "active_stations", "macro_dbm",
                           "total_w", "users_covered", "users"])
        seeds = e["layout_seeds"] if e["layout_seeds"] is not None else [cfg["seed"]]
        for layout_seed in seeds:
            sc = _scenario(e, layout_seed)
            layout = build_layout(sc)
            allocs = {
                "rain": min_power_single(sc, True, e["solver"], layout),
                "dry": min_power_single(sc, False, e["solver"], layout),
                "robust": min_power_robust(sc, e["solver"], layout),
            }
            for name, al in allocs.items():
                coverage.writerow([layout_seed, name, int(al.active.sum()), repr(float(al.power_dbm[0])),
                                   repr(al.total_w), int(al.covered().sum()), sc.n_users])
            totals = EnergyTotals(allocs["rain"].total_w, allocs["dry"].total_w, allocs["robust"].total_w)
            for pr in e["pr_rain"]:
                p_w, p_wo, s = totals.expected(pr)
                savings.writerow([layout_seed, repr(float(pr)), repr(p_w), repr(p_wo), repr(s)])
            print(f"layout {layout_seed}: savings at pr_rain=0.5 {totals.expected(0.5)[2]:.4f}")


def cmd_water(cfg: dict, args, stage: Path) -> None:
    from .energysim import water_attenuation_length

    w = cfg["water"]
    with open(stage / "water.csv", "w") as fh:
        fh.write("freq_ghz,temp_c,length_m\n")
        for t in w["temp_c"]:
            for f in w["freq_ghz"]:
                fh.write(f"{float(f)!r},{float(t)!r},{water_attenuation_length(f, t)!r}\n")


HANDLERS = {
    "synth": cmd_synth, "featurize": cmd_featurize, "train": cmd_train, "eval": cmd_eval,
    "ablate": cmd_ablate, "energy": cmd_energy, "water": cmd_water,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding defaults")
    common.add_argument("--out-dir", default="run", help="output directory (default: ./run)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS threads; 1 keeps results bit-reproducible (default: 1)")
    p = argparse.ArgumentParser(prog="lterain", description="Rainfall sensing from LTE statistics.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic LTE + radar world")
    f = sub.add_parser("featurize", parents=[common], help="cluster stations, build graphs")
    f.add_argument("--records", required=True, help="LTE CSV file")
    f.add_argument("--radar", required=True, help="directory of radar window JSON files")
    for name, text in (("train", "train RainNet on one fold"), ("eval", "k-fold evaluation")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--graphs", required=True, help="graph container from featurize")
    sub.add_parser("ablate", parents=[common], help="node-count and POU ablations")
    sub.add_parser("energy", parents=[common], help="rain-aware power case study")
    sub.add_parser("water", parents=[common], help="water attenuation length table")
    return p


def _set_threads(n: int) -> None:
    if n < 1:
        from .errors import ConfigError

        raise ConfigError("--threads must be >= 1")
    if "numpy" in sys.modules:
        logger.debug("numpy already loaded; --threads applies to new processes only")
    for var in THREAD_VARS:
        os.environ[var] = str(n)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("LTERAIN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import LteRainError

    stage = None
    try:
        _set_threads(args.threads)
        cfg = resolve_config(args.command, args.config, args.seed)
        out = Path(args.out_dir)
        out.parent.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(prefix=f".{args.command}-", dir=out.parent))
        HANDLERS[args.command](cfg, args, stage)
        _write_json(stage / "config.json", cfg)
        out.mkdir(exist_ok=True)
        for item in sorted(stage.iterdir()):
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            os.replace(item, target)
        return 0
    except LteRainError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        if stage is not None and stage.exists():
            shutil.rmtree(stage, ignore_errors=True)


def main() -> None:
    sys.exit(run())
