"""Command-line pipeline front door.

Each command is a pure function of (inputs, config, seed): re-running a stage
with the same config rewrites the same bytes. `run-all` chains every stage on
a synthetic source/target city pair and records a manifest of versions, seeds,
and output digests so any artifact can be traced back.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .config import (ConfigError, apply_overrides, config_help, load_config,
                     stage_seed)
from .costmodel import (CityData, CostModelConfig, LossWeights, build_city_graph,
                        load_cost_model, save_cost_model, save_loss_history,
                        train_cost_model)
from .encoder import EncoderConfig
from .metrics import evaluate as evaluate_sets
from .metrics import save_histograms, save_pair_metrics, save_report
from .network import (DataError, load_cost_labels, load_demands, load_network,
                      load_trajectories, preprocess_trajectories,
                      save_cost_labels, save_demands, save_network,
                      save_trajectories)
from .partition import default_cluster_count, load_partition, partition, save_partition
from .preference import (PreferenceConfig, costs_for_slices, generate,
                         load_preference_model, save_infeasible,
                         save_preference_history, save_preference_model,
                         train_preference)
from .space_syntax import assemble_features, load_features, save_features
from .synth import synth_city

CITIES = ("source", "target")

FILE_SCHEMAS = """\
file schemas:
  network.json       {"name", "segments": [{"id", "length_m", "road_type",
                     "direction_deg", "midpoint": [x, y], "geometry"?}],
                     "adjacency": [[i, j], ...]}
  trajectories.txt   one trip per line: traj_id, time_slice, seg;seg;...
                     optionally followed by ;-separated per-segment seconds
  labels.csv         segment_id,time_slice,travel_time_s,speed_mps,sample_count
  demands.csv        od_id,origin,destination,time_slice
  features.csv       segment_id,time_slice,total_depth,integration,
                     connectivity,choice,length,road_type,direction
  partition.csv      segment_id,cluster_id
  *.json checkpoints parameter name -> shape + row-major values, plus metadata
  report.json        distance_jsd, radius_jsd, locfreq_jsd, hausdorff, dtw,
                     edt, edr, and the binning used
  manifest.json      versions, resolved seeds, full config, output digests

exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure
"""


def _workdir(cfg) -> Path:
    return Path(cfg["run"]["workdir"])


def _city_dir(cfg, city: str) -> Path:
    return _workdir(cfg) / city


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DataError(f"missing input {path}; run `crosstraj {producer}` first")
    return path


def _threads(cfg) -> int:
    return cfg["run"]["threads"] or os.cpu_count() or 1


def _say(path: Path, note: str = "") -> None:
    print(f"wrote {path}" + (f" ({note})" if note else ""))


# ---------------------------------------------------------------------------
# stages


def run_synth(cfg, city: str) -> int:
    seed = stage_seed(cfg, "synth", f"{city}_seed", "synth", city)
    s = cfg["synth"]
    built = synth_city(seed, s["rows"], s["cols"], s["jitter"],
                       n_trips=s["n_trips"], holdout_frac=s["holdout_frac"], name=city)
    d = _city_dir(cfg, city)
    d.mkdir(parents=True, exist_ok=True)
    save_network(built.net, d / "network.json")
    save_trajectories(built.trajectories, d / "trajectories.txt")
    save_trajectories(built.holdout, d / "holdout.txt")
    save_cost_labels(built.labels, d / "labels.csv")
    save_demands(built.demands, d / "demands.csv")
    _say(d / "network.json", f"{built.net.n} segments, seed {seed}")
    return seed


def run_features(cfg, city: str) -> None:
    d = _city_dir(cfg, city)
    net = load_network(_require(d / "network.json", f"synth-city --city {city}"))
    table = assemble_features(net)
    save_features(table, d / "features.csv")
    _say(d / "features.csv", f"{net.n * 24} rows")


def run_partition(cfg, city: str) -> int:
    d = _city_dir(cfg, city)
    net = load_network(_require(d / "network.json", f"synth-city --city {city}"))
    k = cfg["partition"]["k_clusters"] or default_cluster_count(net.n)
    seed = stage_seed(cfg, "partition", "seed", "partition", city)
    part = partition(net, k, seed)
    save_partition(part, d / "partition.csv")
    _say(d / "partition.csv", f"{k} clusters")
    return seed


def _load_city(cfg, city: str, with_labels: bool) -> CityData:
    d = _city_dir(cfg, city)
    net = load_network(_require(d / "network.json", f"synth-city --city {city}"))
    features = load_features(_require(d / "features.csv", f"features --city {city}"))
    part = load_partition(_require(d / "partition.csv", f"partition --city {city}"))
    labels = None
    if with_labels:
        labels = load_cost_labels(_require(d / "labels.csv", f"synth-city --city {city}"))
    return CityData(net, features, part, labels)


def _cost_config(cfg) -> CostModelConfig:
    c = cfg["cost"]
    try:
        return CostModelConfig(
            encoder=EncoderConfig(layers=c["layers"], hidden_dim=c["hidden_dim"]),
            latent_dim=c["latent_dim"],
            weights=LossWeights(rank=c["lambda_r"], domain=c["lambda_d"],
                                orthogonal=c["lambda_g"]),
            lr=c["lr"], epochs=c["epochs"], clusters_per_batch=c["k"],
            seed=stage_seed(cfg, "cost", "seed", "train-cost"))
    except ValueError as exc:
        raise ConfigError(f"bad [cost] settings: {exc}") from exc


def run_train_cost(cfg) -> None:
    source = _load_city(cfg, "source", with_labels=True)
    target = _load_city(cfg, "target", with_labels=False)
    model, history = train_cost_model(source, target, _cost_config(cfg))
    out = _workdir(cfg)
    save_cost_model(out / "cost_model.json", model)
    save_loss_history(out / "cost_losses.csv", history)
    _say(out / "cost_model.json", f"{len(history)} epochs")


def _pref_config(cfg, epochs: int, seed: int) -> PreferenceConfig:
    try:
        return PreferenceConfig(lr=cfg["pref"]["lr"], epochs=epochs, seed=seed)
    except ValueError as exc:
        raise ConfigError(f"bad [pref] settings: {exc}") from exc


def _trajectories_and_costs(cfg, city: str, model):
    d = _city_dir(cfg, city)
    net = load_network(_require(d / "network.json", f"synth-city --city {city}"))
    features = load_features(_require(d / "features.csv", f"features --city {city}"))
    raw = load_trajectories(_require(d / "trajectories.txt", f"synth-city --city {city}"))
    trajs = preprocess_trajectories(raw)
    graph = build_city_graph(net, features, model.config)
    costs = costs_for_slices(model, graph, (t.time_slice for t in trajs))
    return net, trajs, costs


def run_train_pref(cfg) -> None:
    out = _workdir(cfg)
    model = load_cost_model(_require(out / "cost_model.json", "train-cost"))
    net, trajs, costs = _trajectories_and_costs(cfg, "source", model)
    pcfg = _pref_config(cfg, cfg["pref"]["epochs"],
                        stage_seed(cfg, "pref", "seed", "train-pref"))
    pref, history = train_preference(net, trajs, costs, pcfg)
    save_preference_model(out / "preference.json", pref, pcfg)
    save_preference_history(out / "pref_losses.csv", history)
    _say(out / "preference.json", f"{len(history)} epochs")


def run_fine_tune(cfg) -> None:
    """Re-run both trainings on the target city, warm-started from the
    transferred checkpoints. The target city's own labels join in."""
    out = _workdir(cfg)
    seed = stage_seed(cfg, "fine_tune", "seed", "fine-tune")
    base = load_cost_model(_require(out / "cost_model.json", "train-cost"))
    source = _load_city(cfg, "source", with_labels=True)
    target = _load_city(cfg, "target", with_labels=True)
    ccfg = replace(base.config, epochs=cfg["fine_tune"]["cost_epochs"], seed=seed)
    model, history = train_cost_model(source, target, ccfg,
                                      use_target_labels=True, init_params=base.params)
    save_cost_model(out / "cost_model_ft.json", model)
    save_loss_history(out / "cost_losses_ft.csv", history)
    _say(out / "cost_model_ft.json", f"{len(history)} epochs")

    base_pref, _ = load_preference_model(_require(out / "preference.json", "train-pref"))
    net, trajs, costs = _trajectories_and_costs(cfg, "target", model)
    pcfg = _pref_config(cfg, cfg["fine_tune"]["pref_epochs"], seed)
    pref, ph = train_preference(net, trajs, costs, pcfg, init_params=base_pref.params)
    save_preference_model(out / "preference_ft.json", pref, pcfg)
    save_preference_history(out / "pref_losses_ft.csv", ph)
    _say(out / "preference_ft.json", f"{len(ph)} epochs")


def run_generate(cfg, fine_tuned: bool) -> None:
    out = _workdir(cfg)
    suffix = "_ft" if fine_tuned else ""
    model = load_cost_model(_require(out / f"cost_model{suffix}.json",
                                     "fine-tune" if fine_tuned else "train-cost"))
    pref, _ = load_preference_model(_require(out / f"preference{suffix}.json",
                                             "fine-tune" if fine_tuned else "train-pref"))
    d = _city_dir(cfg, "target")
    net = load_network(_require(d / "network.json", "synth-city --city target"))
    features = load_features(_require(d / "features.csv", "features --city target"))
    demands = load_demands(_require(d / "demands.csv", "synth-city --city target"))
    trajs, infeasible = generate(model, pref, net, features, demands)
    save_trajectories(trajs, out / "generated.txt")
    save_infeasible(out / "infeasible.csv", infeasible)
    _say(out / "generated.txt", f"{len(trajs)} trajectories, {len(infeasible)} infeasible")


def run_evaluate(cfg) -> None:
    out = _workdir(cfg)
    d = _city_dir(cfg, "target")
    net = load_network(_require(d / "network.json", "synth-city --city target"))
    real = load_trajectories(_require(d / "holdout.txt", "synth-city --city target"))
    generated = load_trajectories(_require(out / "generated.txt", "generate"))
    report = evaluate_sets(real, generated, net,
                           epsilon=cfg["eval"]["edr_epsilon"], bins=cfg["eval"]["bins"],
                           threads=_threads(cfg))
    save_report(out / "report.json", report)
    save_pair_metrics(out / "pair_metrics.csv", report)
    save_histograms(out / "histograms.csv", report)
    _say(out / "report.json",
         ", ".join(f"{k}={report.metrics[k]:.4f}" for k in ("distance_jsd", "edr")))


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_all(cfg) -> None:
    seeds = {}
    for city in CITIES:
        seeds[f"synth.{city}"] = run_synth(cfg, city)
        run_features(cfg, city)
        seeds[f"partition.{city}"] = run_partition(cfg, city)
    run_train_cost(cfg)
    seeds["train-cost"] = stage_seed(cfg, "cost", "seed", "train-cost")
    run_train_pref(cfg)
    seeds["train-pref"] = stage_seed(cfg, "pref", "seed", "train-pref")
    fine_tuned = cfg["run"]["fine_tune"]
    if fine_tuned:
        run_fine_tune(cfg)
        seeds["fine-tune"] = stage_seed(cfg, "fine_tune", "seed", "fine-tune")
    run_generate(cfg, fine_tuned)
    run_evaluate(cfg)

    out = _workdir(cfg)
    outputs = {str(p.relative_to(out)): _digest(p)
               for p in sorted(out.rglob("*"))
               if p.is_file() and p.name != "manifest.json"}
    manifest = {
        "tool": {"crosstraj": __version__, "numpy": np.__version__,
                 "python": platform.python_version()},
        "config": cfg,
        "seeds": seeds,
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                                       encoding="utf-8")
    _say(out / "manifest.json", f"{len(outputs)} outputs")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="sectioned key-value config file; defaults apply without it")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--workdir", metavar="DIR", help="shorthand for run.workdir")
    common.add_argument("--seed", type=int, metavar="N", help="shorthand for run.seed")
    common.add_argument("--threads", type=int, metavar="N", help="shorthand for run.threads")

    parser = argparse.ArgumentParser(
        prog="crosstraj",
        description="Cross-city trajectory generation pipeline: synthesize cities, "
                    "extract road features, learn transferable travel costs and "
                    "preferences, generate and evaluate trajectories.",
        epilog=config_help() + "\n\n" + FILE_SCHEMAS,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, text, **kwargs):
        return sub.add_parser(name, help=text, description=text, parents=[common],
                              formatter_class=argparse.RawDescriptionHelpFormatter,
                              **kwargs)

    for name, text in (("synth-city", "generate a synthetic city and its trips"),
                       ("features", "compute per-segment Space Syntax features"),
                       ("partition", "split the network into balanced clusters")):
        p = add(name, text)
        p.add_argument("--city", choices=CITIES, required=True)
    add("train-cost", "adversarial training of the transferable cost model")
    add("train-pref", "learn travel preferences from source-city trips")
    add("fine-tune", "re-run both trainings warm-started on the target city")
    p = add("generate", "generate trajectories for target-city demands")
    p.add_argument("--fine-tune", action="store_true",
                   help="fine-tune on the target city first, then generate from "
                        "the fine-tuned checkpoints")
    add("evaluate", "compare generated trajectories against held-out real ones")
    add("run-all", "run every stage and write a reproducibility manifest")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        overrides = list(args.set)
        if args.workdir is not None:
            overrides.append(f"run.workdir={args.workdir}")
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.threads is not None:
            overrides.append(f"run.threads={args.threads}")
        cfg = apply_overrides(cfg, overrides)

        if args.command == "synth-city":
            run_synth(cfg, args.city)
        elif args.command == "features":
            run_features(cfg, args.city)
        elif args.command == "partition":
            run_partition(cfg, args.city)
        elif args.command == "train-cost":
            run_train_cost(cfg)
        elif args.command == "train-pref":
            run_train_pref(cfg)
        elif args.command == "fine-tune":
            run_fine_tune(cfg)
        elif args.command == "generate":
            if args.fine_tune:
                run_fine_tune(cfg)
            run_generate(cfg, args.fine_tune)
        elif args.command == "evaluate":
            run_evaluate(cfg)
        else:
            run_all(cfg)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ad.NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
