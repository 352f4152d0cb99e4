"""Training loops for proportion, presence, and positive/unlabeled supervision.

One optimizer step per bag, bags visited in a seeded shuffled order, with a
validation split held out for loss tracking and early stopping. Runs are
deterministic functions of (config, data): the model init, the shuffles,
and the splits each draw from their own stream derived from the run seed.

``train_bce_reference`` is the fully supervised baseline: the identical
loop over singleton groups with plain binary cross-entropy. With bag size 1
the proportion objective reduces to the same loss and gradient bit for bit,
which the test suite checks by comparing whole trajectories.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .countdp import InstanceScores, interval_log_prob, log1mexp
from .datasets import Bag, Dataset, PUDataset
from .losses import (
    estimate_mixture_proportion,
    llp_loss,
    mil_loss,
    positive_ce_loss,
    pu_expect_loss,
    pu_kl_loss,
)
from .model import Mlp, MlpSpec, OptimState, backward, forward, step

SETTINGS = ("llp", "mil", "pu_kl", "pu_expect")
EARLY_STOP_RULES = ("none", "val_loss", "pu_prior_proximity")


@dataclass(frozen=True)
class TrainConfig:
    setting: str
    epochs: int
    hidden_widths: tuple = (32,)
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    l1: float = 0.0
    warm_epochs: int = 0
    validation_fraction: float | None = None
    early_stop: str = "val_loss"
    unlabeled_bag_size: int = 100
    w_pos: float = 1.0
    w_unl: float = 1.0
    mil_positive_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.early_stop not in EARLY_STOP_RULES:
            raise ValueError(f"early_stop must be one of {EARLY_STOP_RULES}")
        if self.validation_fraction is not None and not (
            0.0 <= self.validation_fraction < 1.0
        ):
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.warm_epochs < 0:
            raise ValueError("warm_epochs must be non-negative")
        if self.unlabeled_bag_size < 1:
            raise ValueError("unlabeled_bag_size must be positive")

    @property
    def resolved_validation_fraction(self) -> float:
        if self.validation_fraction is not None:
            return self.validation_fraction
        return 0.1 if self.setting.startswith("pu") else 0.125


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    validation_loss: float | None = None
    instance_auc: float | None = None
    instance_accuracy: float | None = None
    instance_f1: float | None = None
    instance_precision: float | None = None
    instance_recall: float | None = None
    bag_auc: float | None = None
    bag_accuracy: float | None = None
    prior_proximity: float | None = None

    def __post_init__(self):
        if self.train_loss < 0 or (
            self.validation_loss is not None and self.validation_loss < 0
        ):
            raise ValueError("losses must be non-negative")
        for f in fields(self):
            if f.name in ("epoch", "train_loss", "validation_loss", "prior_proximity"):
                continue
            v = getattr(self, f.name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name} must lie in [0, 1], got {v!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TrainResult:
    model: Mlp
    history: list
    best_epoch: int
    final_model: Mlp


def auc(scores, labels) -> float:
    """Rank-based AUC: P(score_pos > score_neg) + 0.5 P(tie), via average ranks.

    Raises:
        ValueError: when only one class is present; the metric is undefined.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be matching 1-D sequences")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be binary 0/1")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined with a single class")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    high = np.cumsum(counts)
    average_rank = high - (counts - 1) / 2.0
    ranks = average_rank[inverse]
    u = float(np.sum(ranks[y == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def binary_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """Accuracy, precision, recall, F1 at a threshold; ties predict positive."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pred = (s >= threshold).astype(np.int64)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    accuracy = float(np.mean(pred == y))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def bag_positive_log_prob(model: Mlp, features) -> float:
    """log p(at least one positive prediction) for one bag of features."""
    t, _ = forward(model, np.atleast_2d(features))
    scores = InstanceScores.from_log_probabilities(t)
    return interval_log_prob(scores, 1, scores.k)


def predict_bag_mil(model: Mlp, features) -> int:
    """Bag prediction by thresholding the exact p(sum >= 1) at 0.5, ties up."""
    return int(math.exp(bag_positive_log_prob(model, features)) >= 0.5)


def early_stop_select(history, rule: str) -> int:
    """Pick the best 1-based epoch from a metrics history.

    ``val_loss`` takes the first minimum of validation loss;
    ``pu_prior_proximity`` takes the smallest distance between validation
    accuracy against selection labels and the value a perfect classifier
    would score, breaking exact ties by lower validation loss. ``none``
    returns the last epoch.
    """
    if not history:
        raise ValueError("history is empty")
    if rule == "none":
        return history[-1].epoch
    if rule == "val_loss":
        losses = [r.validation_loss for r in history]
        if any(v is None for v in losses):
            raise ValueError("validation loss missing from history")
        return history[int(np.argmin(losses))].epoch
    if rule == "pu_prior_proximity":
        prox = [r.prior_proximity for r in history]
        if any(v is None for v in prox):
            raise ValueError("prior proximity missing from history")
        best = min(prox)
        tied = [r for r in history if r.prior_proximity == best]
        tied.sort(key=lambda r: (r.validation_loss, r.epoch))
        return tied[0].epoch
    raise ValueError(f"unknown early-stop rule {rule!r}")


def _shuffle_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def _stride_split(items, fraction: float):
    """Every stride-th element goes to validation; deterministic, no RNG."""
    if fraction <= 0.0:
        return list(items), []
    stride = max(2, int(round(1.0 / fraction)))
    train, val = [], []
    for i, item in enumerate(items):
        (val if i % stride == stride - 1 else train).append(item)
    if not val:
        return list(items), []
    return train, val


def _split_bags(bags, fraction: float, setting: str):
    if setting == "llp":
        order = sorted(range(len(bags)), key=lambda i: (bags[i].weak_label.value, i))
    else:
        pos = [i for i, b in enumerate(bags) if b.weak_label.value == 1]
        neg = [i for i, b in enumerate(bags) if b.weak_label.value != 1]
        order = pos + neg
    train_idx, val_idx = _stride_split(order, fraction)
    return [bags[i] for i in sorted(train_idx)], [bags[i] for i in sorted(val_idx)]


def _score_instances(model: Mlp, features) -> np.ndarray:
    t, _ = forward(model, features)
    return np.exp(np.atleast_1d(t))


def _bag_scores(model: Mlp, X) -> tuple:
    t, cache = forward(model, X)
    return InstanceScores.from_log_probabilities(np.atleast_1d(t)), cache


def _bag_loss(config: TrainConfig, scores: InstanceScores, bag: Bag):
    if config.setting == "llp":
        if bag.weak_label.kind != "proportion":
            raise ValueError("llp training requires proportion-labeled bags")
        return llp_loss(scores, bag.weak_label.value)
    if bag.weak_label.kind != "max":
        raise ValueError("mil training requires presence-labeled bags")
    return mil_loss(scores, int(bag.weak_label.value), config.mil_positive_weight)


def _make_optimizer(config: TrainConfig, model: Mlp) -> OptimState:
    if config.optimizer == "sgd":
        return OptimState.sgd(
            config.learning_rate, weight_decay=config.weight_decay, l1=config.l1
        )
    return OptimState.adam(
        model,
        config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        weight_decay=config.weight_decay,
        l1=config.l1,
    )


def _warmup_lr(config: TrainConfig, epoch: int) -> float:
    if config.warm_epochs <= 0 or epoch > config.warm_epochs:
        return config.learning_rate
    return config.learning_rate * epoch / config.warm_epochs


def _instance_metric_fields(dataset: Dataset, indices, scores) -> dict:
    if dataset.labels is None or len(indices) == 0:
        return {}
    y = dataset.labels[np.asarray(indices, dtype=np.int64)]
    if np.any((y != 0) & (y != 1)):
        return {}
    m = binary_metrics(scores, y)
    out = {
        "instance_accuracy": m["accuracy"],
        "instance_f1": m["f1"],
        "instance_precision": m["precision"],
        "instance_recall": m["recall"],
    }
    if 0 < int(y.sum()) < y.size:
        out["instance_auc"] = auc(scores, y)
    return out


class _BestTracker:
    """Online equivalent of early_stop_select over a growing history."""

    def __init__(self, rule: str):
        self.rule = rule
        self.epoch = 0
        self.model = None
        self._val = math.inf
        self._prox = math.inf

    def offer(self, epoch: int, model: Mlp, record: MetricsRecord) -> None:
        take = False
        if self.rule == "none":
            take = True
        elif self.rule == "val_loss":
            if record.validation_loss is None:
                raise ValueError("early_stop='val_loss' needs a validation split")
            take = record.validation_loss < self._val
        else:
            if record.prior_proximity is None or record.validation_loss is None:
                raise ValueError(
                    "early_stop='pu_prior_proximity' needs a validation split "
                    "with selection labels"
                )
            take = record.prior_proximity < self._prox or (
                record.prior_proximity == self._prox
                and record.validation_loss < self._val
            )
        if take:
            self.epoch = epoch
            self.model = model.clone()
            if record.validation_loss is not None:
                self._val = record.validation_loss
            if record.prior_proximity is not None:
                self._prox = record.prior_proximity


def _append_metrics(metrics_path, record: MetricsRecord) -> None:
    if metrics_path is None:
        return
    with open(metrics_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_dict()) + "\n")


def _diagnose(bag_no, bag: Bag, exc: Exception) -> RuntimeError:
    label = f"{bag.weak_label.kind}={bag.weak_label.value}"
    return RuntimeError(
        f"loss computation failed on bag {bag_no} (size {bag.size}, {label}): {exc}"
    )


def train(
    config: TrainConfig,
    dataset: Dataset,
    bags=None,
    pu_split: PUDataset | None = None,
    metrics_path=None,
) -> TrainResult:
    """Run the configured objective end to end; returns the best-epoch model.

    ``bags`` feeds the llp and mil settings, ``pu_split`` the pu settings.

    Raises:
        ValueError: on data/setting mismatches or an impossible early-stop
            configuration.
        RuntimeError: when a loss turns non-finite, naming the offending bag.
    """
    if config.setting in ("llp", "mil"):
        if not bags:
            raise ValueError(f"{config.setting} training requires bags")
        return _train_bags(config, dataset, list(bags), metrics_path)
    if pu_split is None:
        raise ValueError(f"{config.setting} training requires a pu_split")
    return _train_pu(config, dataset, pu_split, metrics_path)


def _train_bags(config, dataset, bags, metrics_path) -> TrainResult:
    model = Mlp.initialize(MlpSpec((dataset.d, *config.hidden_widths, 1)), config.seed)
    opt = _make_optimizer(config, model)
    rng = _shuffle_rng(config.seed)
    train_bags, val_bags = _split_bags(
        bags, config.resolved_validation_fraction, config.setting
    )
    if not train_bags:
        raise ValueError("validation split left no training bags")
    if config.early_stop != "none" and not val_bags:
        raise ValueError(f"early_stop={config.early_stop!r} needs a validation split")
    tracker = _BestTracker(config.early_stop)
    history = []
    for epoch in range(1, config.epochs + 1):
        opt.learning_rate = _warmup_lr(config, epoch)
        total = 0.0
        for j in rng.permutation(len(train_bags)):
            bag = train_bags[j]
            X = dataset.features[bag.instance_indices]
            try:
                scores, cache = _bag_scores(model, X)
                lv = _bag_loss(config, scores, bag)
            except ValueError as exc:
                raise _diagnose(int(j), bag, exc) from exc
            grads = backward(model, cache, lv.grad.d_t)
            step(model, grads, opt)
            total += lv.loss
        record = _evaluate_bags(
            config, dataset, model, epoch, total / len(train_bags), val_bags
        )
        history.append(record)
        _append_metrics(metrics_path, record)
        tracker.offer(epoch, model, record)
    best = tracker.model if tracker.model is not None else model.clone()
    best_epoch = tracker.epoch if tracker.model is not None else 0
    return TrainResult(best, history, best_epoch, model)


def _evaluate_bags(config, dataset, model, epoch, train_loss, val_bags) -> MetricsRecord:
    extra: dict = {}
    val_loss = None
    if val_bags:
        total = 0.0
        for bag in val_bags:
            X = dataset.features[bag.instance_indices]
            scores, _ = _bag_scores(model, X)
            total += _bag_loss(config, scores, bag).loss
        val_loss = total / len(val_bags)
        val_instances = np.unique(np.concatenate([b.instance_indices for b in val_bags]))
        ins_scores = _score_instances(model, dataset.features[val_instances])
        extra.update(_instance_metric_fields(dataset, val_instances, ins_scores))
        if config.setting == "mil":
            bag_scores = []
            bag_labels = []
            for bag in val_bags:
                lp = bag_positive_log_prob(model, dataset.features[bag.instance_indices])
                bag_scores.append(math.exp(lp))
                bag_labels.append(int(bag.weak_label.value))
            bag_scores = np.asarray(bag_scores)
            bag_labels = np.asarray(bag_labels)
            extra["bag_accuracy"] = binary_metrics(bag_scores, bag_labels)["accuracy"]
            if 0 < bag_labels.sum() < bag_labels.size:
                extra["bag_auc"] = auc(bag_scores, bag_labels)
    return MetricsRecord(
        epoch=epoch, train_loss=train_loss, validation_loss=val_loss, **extra
    )


def _unlabeled_groups(indices: np.ndarray, group_size: int):
    """Consecutive full groups; a single short group only when nothing else fits."""
    n = indices.size
    if n < group_size:
        return [indices]
    n_groups = n // group_size
    return [indices[g * group_size : (g + 1) * group_size] for g in range(n_groups)]


def _pu_beta(pu: PUDataset) -> float:
    return estimate_mixture_proportion(pu.alpha, pu.alpha * pu.c).beta


def _train_pu(config, dataset, pu: PUDataset, metrics_path) -> TrainResult:
    beta = _pu_beta(pu)
    if config.setting == "pu_kl" and not 0.0 < beta < 1.0:
        raise ValueError(
            f"mixture proportion beta={beta} is degenerate; "
            "the KL objective needs beta in (0, 1), use pu_expect instead"
        )
    unl_loss = pu_kl_loss if config.setting == "pu_kl" else pu_expect_loss
    model = Mlp.initialize(MlpSpec((dataset.d, *config.hidden_widths, 1)), config.seed)
    opt = _make_optimizer(config, model)
    rng = _shuffle_rng(config.seed)
    frac = config.resolved_validation_fraction
    train_pos, val_pos = _stride_split(pu.positive_indices.tolist(), frac)
    train_unl, val_unl = _stride_split(pu.unlabeled_indices.tolist(), frac)
    if not train_pos or not train_unl:
        raise ValueError("validation split left no training data")
    if config.early_stop != "none" and not (val_pos and val_unl):
        raise ValueError(f"early_stop={config.early_stop!r} needs a validation split")
    train_pos = np.asarray(train_pos, dtype=np.int64)
    train_unl = np.asarray(train_unl, dtype=np.int64)
    k_u = config.unlabeled_bag_size
    tracker = _BestTracker(config.early_stop)
    history = []
    for epoch in range(1, config.epochs + 1):
        opt.learning_rate = _warmup_lr(config, epoch)
        groups = _unlabeled_groups(train_unl[rng.permutation(train_unl.size)], k_u)
        pos_order = train_pos[rng.permutation(train_pos.size)]
        pos_chunk = min(k_u, pos_order.size)
        total = 0.0
        for g, group in enumerate(groups):
            start = (g * pos_chunk) % pos_order.size
            pos_batch = np.take(
                pos_order, np.arange(start, start + pos_chunk), mode="wrap"
            )
            scores_u, cache_u = _bag_scores(model, dataset.features[group])
            lv_u = unl_loss(scores_u, beta)
            scores_p, cache_p = _bag_scores(model, dataset.features[pos_batch])
            lv_p = positive_ce_loss(scores_p)
            grads_u = backward(model, cache_u, config.w_unl * lv_u.grad.d_t)
            grads_p = backward(model, cache_p, config.w_pos * lv_p.grad.d_t)
            grads = [
                (du + dp, bu + bp)
                for (du, bu), (dp, bp) in zip(grads_u, grads_p)
            ]
            step(model, grads, opt)
            total += config.w_unl * lv_u.loss + config.w_pos * lv_p.loss
        record = _evaluate_pu(
            config, dataset, model, epoch, total / len(groups), val_pos, val_unl, beta
        )
        history.append(record)
        _append_metrics(metrics_path, record)
        tracker.offer(epoch, model, record)
    best = tracker.model if tracker.model is not None else model.clone()
    best_epoch = tracker.epoch if tracker.model is not None else 0
    return TrainResult(best, history, best_epoch, model)


def _evaluate_pu(config, dataset, model, epoch, train_loss,
                 val_pos, val_unl, beta) -> MetricsRecord:
    extra: dict = {}
    val_loss = None
    if val_pos and val_unl:
        vp = np.asarray(val_pos, dtype=np.int64)
        vu = np.asarray(val_unl, dtype=np.int64)
        unl_loss = pu_kl_loss if config.setting == "pu_kl" else pu_expect_loss
        scores_p, _ = _bag_scores(model, dataset.features[vp])
        loss_p = positive_ce_loss(scores_p).loss
        groups = _unlabeled_groups(vu, config.unlabeled_bag_size)
        loss_u = 0.0
        for group in groups:
            scores_u, _ = _bag_scores(model, dataset.features[group])
            loss_u += unl_loss(scores_u, beta).loss
        val_loss = config.w_pos * loss_p + config.w_unl * loss_u / len(groups)
        all_idx = np.concatenate([vp, vu])
        selection = np.concatenate([np.ones(vp.size), np.zeros(vu.size)])
        ins_scores = _score_instances(model, dataset.features[all_idx])
        predicted = (ins_scores >= 0.5).astype(np.float64)
        selection_accuracy = float(np.mean(predicted == selection))
        expected = (vp.size + vu.size * (1.0 - beta)) / (vp.size + vu.size)
        extra["prior_proximity"] = abs(selection_accuracy - expected)
        extra.update(_instance_metric_fields(dataset, all_idx, ins_scores))
    return MetricsRecord(
        epoch=epoch, train_loss=train_loss, validation_loss=val_loss, **extra
    )


def train_bce_reference(
    config: TrainConfig, dataset: Dataset, metrics_path=None
) -> TrainResult:
    """Supervised binary cross-entropy over single instances.

    Shares the loop, streams, and update rules with :func:`train`, so a
    proportion run on singleton bags must reproduce it exactly.
    """
    y = dataset.binary_labels()
    model = Mlp.initialize(MlpSpec((dataset.d, *config.hidden_widths, 1)), config.seed)
    opt = _make_optimizer(config, model)
    rng = _shuffle_rng(config.seed)
    history = []
    for epoch in range(1, config.epochs + 1):
        opt.learning_rate = _warmup_lr(config, epoch)
        total = 0.0
        for j in rng.permutation(dataset.n):
            t, cache = forward(model, dataset.features[j : j + 1])
            t0 = float(t[0])
            tc0 = log1mexp(t0)
            if y[j] == 1:
                loss = -t0
                d_t = -1.0
            else:
                loss = -tc0
                d_t = math.exp(t0 - tc0)
            grads = backward(model, cache, np.asarray([d_t]))
            step(model, grads, opt)
            total += loss
        record = MetricsRecord(epoch=epoch, train_loss=total / dataset.n)
        history.append(record)
        _append_metrics(metrics_path, record)
    return TrainResult(model.clone(), history, 0, model)
