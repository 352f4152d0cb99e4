"""Command-line entry point: count queries, data simulation, training, verification.

One run is driven by a single JSON config file (schema documented in the
README); command-line flags override config fields. Output files are
byte-identical across runs with the same inputs and seed; wall-clock
timestamps appear only in the run manifest.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .countdp import InstanceScores, count_log_prob, count_distribution, interval_log_prob
from .datasets import (
    CsvSchema,
    Dataset,
    Standardizer,
    load_bags,
    load_csv,
    load_pu_split,
    make_llp_bags,
    make_mil_bags,
    make_pu_split,
    make_synthetic_gaussians,
    save_bags,
    save_dataset_csv,
    save_pu_split,
    subsample,
)
from .model import forward, load_checkpoint, save_checkpoint
from .oracle import run_verification
from .trainer import (
    TrainConfig,
    auc,
    bag_positive_log_prob,
    binary_metrics,
    train,
)


class ConfigError(ValueError):
    """A config or input value violates the documented schema."""


def _fail(code: int, message: str) -> int:
    print(f"countsup: {message}", file=sys.stderr)
    return code


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{path}: {message}")


def _get(section: dict, path: str, key: str, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    return section[key]


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    _require(isinstance(config, dict), "config", "top level must be an object")
    _require(config.get("version") == 1, "version", "must be 1")
    task = _get(config, "config", "task", required=True)
    _require(task in ("llp", "mil", "pu"), "task", "must be one of llp, mil, pu")
    seed = config.get("seed", 0)
    _require(isinstance(seed, int), "seed", "must be an integer")
    _require(isinstance(config.get("data"), dict), "data", "must be an object")
    return config


def _build_dataset(config: dict, seed: int):
    """Returns (dataset, standardizer or None, source descriptor)."""
    data = config["data"]
    source = _get(data, "data", "source", required=True)
    if source == "synthetic":
        n = _get(data, "data", "n", 2000)
        dim = _get(data, "data", "dim", 2)
        separation = _get(data, "data", "separation", 4.0)
        dataset = make_synthetic_gaussians(n, dim, separation, seed)
        return dataset, None, {"source": "synthetic", "n": n, "dim": dim,
                               "separation": separation}
    if source == "csv":
        path = _get(data, "data", "path", required=True)
        schema = CsvSchema(
            label_column=_get(data, "data", "label_column", "label"),
            categorical_columns=tuple(_get(data, "data", "categorical_columns", ())),
            positive_label=_get(data, "data", "positive_label"),
        )
        dataset, _ = load_csv(path, schema)
        limit = _get(data, "data", "limit")
        if limit is not None:
            dataset = subsample(dataset, int(limit), seed)
        standardizer = None
        if _get(data, "data", "standardize", True):
            standardizer = Standardizer.fit(dataset.features)
            dataset = standardizer.transform(dataset)
        return dataset, standardizer, {"source": "csv", "path": str(path)}
    raise ConfigError(f"data.source: unknown source {source!r}")


def _build_weak_labels(config: dict, dataset, seed: int):
    """Returns (bags or None, pu_split or None)."""
    task = config["task"]
    bags_cfg = config.get("bags")
    _require(isinstance(bags_cfg, dict), "bags", "must be an object")
    if task == "llp":
        return (
            make_llp_bags(
                dataset,
                _get(bags_cfg, "bags", "bag_size", required=True),
                (
                    _get(bags_cfg, "bags", "proportion_low", 0.0),
                    _get(bags_cfg, "bags", "proportion_high", 1.0),
                ),
                _get(bags_cfg, "bags", "count", required=True),
                seed,
            ),
            None,
        )
    if task == "mil":
        return (
            make_mil_bags(
                dataset,
                _get(bags_cfg, "bags", "size_mean", required=True),
                _get(bags_cfg, "bags", "size_std", 0.0),
                _get(bags_cfg, "bags", "positive_classes", (1,)),
                _get(bags_cfg, "bags", "count", required=True),
                seed,
            ),
            None,
        )
    return (
        None,
        make_pu_split(
            dataset,
            _get(bags_cfg, "bags", "alpha", required=True),
            _get(bags_cfg, "bags", "c", required=True),
            seed,
        ),
    )


def _train_config(config: dict, task: str, seed: int, epochs_override=None) -> TrainConfig:
    t = config.get("train", {})
    _require(isinstance(t, dict), "train", "must be an object")
    objective = _get(t, "train", "objective", {"llp": "llp", "mil": "mil", "pu": "pu_kl"}[task])
    if task == "pu":
        _require(objective in ("pu_kl", "pu_expect"), "train.objective",
                 "pu task needs pu_kl or pu_expect")
    else:
        _require(objective == task, "train.objective", f"must match task {task!r}")
    epochs = epochs_override if epochs_override is not None else _get(t, "train", "epochs", 100)
    try:
        return TrainConfig(
            setting=objective,
            epochs=int(epochs),
            hidden_widths=tuple(_get(t, "train", "hidden_widths", (32,))),
            optimizer=_get(t, "train", "optimizer", "adam"),
            learning_rate=float(_get(t, "train", "learning_rate", 1e-3)),
            beta1=float(_get(t, "train", "beta1", 0.9)),
            beta2=float(_get(t, "train", "beta2", 0.999)),
            weight_decay=float(_get(t, "train", "weight_decay", 0.0)),
            l1=float(_get(t, "train", "l1", 0.0)),
            warm_epochs=int(_get(t, "train", "warm_epochs", 0)),
            validation_fraction=_get(t, "train", "validation_fraction"),
            early_stop=_get(t, "train", "early_stop", "val_loss"),
            unlabeled_bag_size=int(_get(t, "train", "unlabeled_bag_size", 100)),
            w_pos=float(_get(t, "train", "w_pos", 1.0)),
            w_unl=float(_get(t, "train", "w_unl", 1.0)),
            mil_positive_weight=float(_get(t, "train", "mil_positive_weight", 1.0)),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc


def _fingerprint(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, config: dict, artifacts: list) -> None:
    manifest = {
        "tool": "countsup",
        "version": __version__,
        "config": config,
        "seed": config.get("seed", 0),
        "created_unix": time.time(),
        "artifacts": {
            name: {"path": str(p), "sha256": _fingerprint(p)} for name, p in artifacts
        },
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_probabilities(stream) -> list:
    tokens = stream.read().split()
    if not tokens:
        raise ConfigError("no probabilities on stdin")
    probs = []
    for tok in tokens:
        try:
            value = float(tok)
        except ValueError:
            raise ConfigError(f"not a number: {tok!r}") from None
        if not 0.0 < value < 1.0:
            raise ConfigError(f"probability out of range (0, 1): {tok}")
        probs.append(value)
    return probs


def cmd_count(args) -> int:
    probs = _read_probabilities(sys.stdin)
    scores = InstanceScores.from_probabilities(probs)
    k = scores.k

    def emit(label, log_value):
        print(f"{label}  log={log_value:.12g}  p={math.exp(log_value):.12g}")

    if args.s is not None:
        if not 0 <= args.s <= k:
            raise ConfigError(f"--s must lie in [0, {k}]")
        emit(f"s={args.s}", count_log_prob(scores, args.s))
    elif args.interval is not None:
        lo, hi = args.interval
        if not 0 <= lo <= hi <= k:
            raise ConfigError(f"--interval bounds must satisfy 0 <= a <= b <= {k}")
        emit(f"s in [{lo},{hi}]", interval_log_prob(scores, lo, hi))
    else:
        dist = count_distribution(scores)
        for s in range(k + 1):
            emit(f"s={s}", float(dist.logp[s]))
    return 0


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    config["seed"] = seed
    out_dir = Path(args.out or config.get("output_dir", "run"))
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, _, _ = _build_dataset(config, seed)
    bags, pu_split = _build_weak_labels(config, dataset, seed)
    artifacts = []
    instances_path = out_dir / "instances.csv"
    save_dataset_csv(instances_path, dataset)
    artifacts.append(("instances", instances_path))
    if bags is not None:
        bags_path = out_dir / "bags.jsonl"
        save_bags(bags_path, bags)
        artifacts.append(("bags", bags_path))
        print(f"wrote {len(bags)} bags over {dataset.n} instances to {out_dir}")
    else:
        split_path = out_dir / "pu_split.json"
        save_pu_split(split_path, pu_split)
        artifacts.append(("pu_split", split_path))
        print(
            f"wrote {pu_split.positive_indices.size} labeled positives and "
            f"{pu_split.unlabeled_indices.size} unlabeled instances to {out_dir}"
        )
    _write_manifest(out_dir, config, artifacts)
    return 0


def _load_or_build_data(config: dict, seed: int):
    data = config["data"]
    if data.get("source") == "files":
        instances = _get(data, "data", "instances", required=True)
        dataset, _ = load_csv(instances, CsvSchema(label_column="label"))
        standardizer = None
        if _get(data, "data", "standardize", False):
            standardizer = Standardizer.fit(dataset.features)
            dataset = standardizer.transform(dataset)
        if config["task"] == "pu":
            split = load_pu_split(_get(data, "data", "split", required=True))
            return dataset, None, split, standardizer
        bags = load_bags(_get(data, "data", "bags", required=True))
        return dataset, bags, None, standardizer
    dataset, standardizer, _ = _build_dataset(config, seed)
    bags, pu_split = _build_weak_labels(config, dataset, seed)
    return dataset, bags, pu_split, standardizer


def cmd_train(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    config["seed"] = seed
    out_dir = Path(args.out or config.get("output_dir", "run"))
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, bags, pu_split, standardizer = _load_or_build_data(config, seed)
    tc = _train_config(config, config["task"], seed, epochs_override=args.epochs)
    metrics_path = out_dir / "metrics.jsonl"
    metrics_path.write_text("")
    result = train(tc, dataset, bags=bags, pu_split=pu_split, metrics_path=metrics_path)
    extra = {"best_epoch": result.best_epoch, "setting": tc.setting}
    if standardizer is not None:
        extra["standardizer"] = {
            "mean": [float(v) for v in standardizer.mean],
            "scale": [float(v) for v in standardizer.scale],
        }
    checkpoint_path = out_dir / "checkpoint.bin"
    save_checkpoint(result.model, checkpoint_path, extra=extra)
    _write_manifest(
        out_dir, config, [("checkpoint", checkpoint_path), ("metrics", metrics_path)]
    )
    if result.history:
        last = result.history[-1]
        print(
            f"trained {tc.setting} for {tc.epochs} epochs; "
            f"best epoch {result.best_epoch}; final train loss {last.train_loss:.6f}"
        )
    else:
        print("epochs=0: checkpointed the initial model")
    return 0


def cmd_evaluate(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    dataset, _ = load_csv(args.data, CsvSchema(label_column="label"))
    std = extra.get("standardizer")
    if std:
        features = (dataset.features - np.asarray(std["mean"])) / np.asarray(std["scale"])
        dataset = Dataset(features, dataset.labels)
    if dataset.labels is None:
        raise ConfigError("evaluation data must carry a label column")
    t, _ = forward(model, dataset.features)
    scores = np.exp(t)
    y = dataset.labels
    metrics = binary_metrics(scores, y)
    print(f"instances={dataset.n}")
    print(f"auc={auc(scores, y):.6f}")
    for name in ("accuracy", "precision", "recall", "f1"):
        print(f"{name}={metrics[name]:.6f}")
    if args.bags:
        bags = load_bags(args.bags)
        bag_scores = np.asarray(
            [
                math.exp(bag_positive_log_prob(model, dataset.features[b.instance_indices]))
                for b in bags
            ]
        )
        bag_labels = np.asarray([int(b.weak_label.value) for b in bags])
        bm = binary_metrics(bag_scores, bag_labels)
        print(f"bag_auc={auc(bag_scores, bag_labels):.6f}")
        print(f"bag_accuracy={bm['accuracy']:.6f}")
    return 0


def cmd_verify(args) -> int:
    report = run_verification(args.trials, args.kmax, args.tolerance, seed=args.seed or 0)
    print(report.to_json())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countsup",
        description="Exact count probabilities over Bernoulli predictions and "
        "count-loss training on bag-labeled data.",
    )
    parser.add_argument("--version", action="version", version=f"countsup {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_count = sub.add_parser("count", help="count probabilities from stdin probabilities")
    group = p_count.add_mutually_exclusive_group()
    group.add_argument("--s", type=int, default=None, help="a single count")
    group.add_argument("--all", action="store_true", help="the full distribution (default)")
    group.add_argument("--interval", type=int, nargs=2, metavar=("A", "B"),
                       help="probability of A <= sum <= B")
    p_count.set_defaults(func=cmd_count)

    p_sim = sub.add_parser("simulate", help="generate a dataset and weak labels")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default=None, help="output directory override")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="train a scorer per the config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint against labeled data")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--bags", default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    p_verify = sub.add_parser("verify", help="check the kernel against brute force")
    p_verify.add_argument("trials", type=int)
    p_verify.add_argument("kmax", type=int)
    p_verify.add_argument("tolerance", type=float)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(2, str(exc))
    except (ValueError, OSError, RuntimeError) as exc:
        return _fail(1, str(exc))


if __name__ == "__main__":
    sys.exit(main())
