"""Tabular ingestion, synthetic data, and weakly-labeled bag construction.

Instance labels loaded or generated here are ground truth kept only for
evaluation; training consumes the weak annotations (bag proportions, bag
presence labels, or positive/unlabeled selections) built on top of them.
All generators are deterministic functions of (data, config, seed).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with optional held-out instance labels."""

    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("features must be a non-empty (n, d) matrix")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise ValueError("labels must be one integer per row")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def binary_labels(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError("dataset carries no labels")
        y = self.labels
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be binary 0/1 for this operation")
        return y


@dataclass(frozen=True)
class WeakLabel:
    """Exactly one weak annotation: a positive proportion or a presence bit."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "proportion":
            if not 0.0 <= self.value <= 1.0:
                raise ValueError("proportion must lie in [0, 1]")
        elif self.kind == "max":
            if self.value not in (0, 1):
                raise ValueError("presence label must be 0 or 1")
        else:
            raise ValueError(f"unknown weak label kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Bag:
    """Indices into a dataset plus the bag's weak label."""

    instance_indices: np.ndarray
    weak_label: WeakLabel

    def __post_init__(self):
        idx = np.asarray(self.instance_indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise ValueError("a bag needs at least one instance")
        if np.any(idx < 0):
            raise ValueError("instance indices must be non-negative")
        idx.setflags(write=False)
        object.__setattr__(self, "instance_indices", idx)
        if self.weak_label.kind == "proportion":
            target = self.weak_label.value * idx.size
            if abs(target - round(target)) > 1e-6:
                raise ValueError(
                    f"proportion {self.weak_label.value!r} times bag size {idx.size} "
                    "is not within 1e-6 of an integer"
                )

    @property
    def size(self) -> int:
        return self.instance_indices.size


@dataclass(frozen=True, eq=False)
class PUDataset:
    """Labeled-positive and unlabeled index sets with the generating rates."""

    positive_indices: np.ndarray
    unlabeled_indices: np.ndarray
    alpha: float
    c: float

    def __post_init__(self):
        for name in ("positive_indices", "unlabeled_indices"):
            idx = np.asarray(getattr(self, name), dtype=np.int64)
            if idx.ndim != 1 or idx.size < 1:
                raise ValueError(f"{name} must be a non-empty index vector")
            idx.setflags(write=False)
            object.__setattr__(self, name, idx)
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.c <= 1.0:
            raise ValueError("c must lie in (0, 1]")

    @property
    def labeled_fraction(self) -> float:
        n = self.positive_indices.size + self.unlabeled_indices.size
        return self.positive_indices.size / n


@dataclass(frozen=True)
class CsvSchema:
    """How to interpret a CSV: label column, categorical encodings, positive token."""

    label_column: str | None = "label"
    categorical_columns: tuple = ()
    categories: dict | None = None
    positive_label: str | None = None


def _normalize_token(raw: str) -> str:
    return raw.strip().rstrip(".")


def load_csv(path, schema: CsvSchema):
    """Read a header CSV into a Dataset under the given schema.

    Categorical columns are one-hot encoded in sorted category order; when
    ``schema.categories`` is provided the encoding is fixed and unknown
    values are rejected, which is how a test file reuses the training
    encoding. Returns (dataset, resolved_schema); the resolved schema pins
    the categories actually used.

    Raises:
        ValueError: with ``path:line`` prefixes for malformed rows, bad
            numerics, unknown categories, or missing columns.
    """
    try:
        fh = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}:1: empty file, expected a header row")
        header = [h.strip() for h in header]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{line_no}: expected {len(header)} columns, got {len(row)}"
                )
            rows.append((line_no, [_normalize_token(v) for v in row]))
    if not rows:
        raise ValueError(f"{path}: no data rows")

    categorical = set(schema.categorical_columns)
    missing = categorical - set(header)
    if missing:
        raise ValueError(f"{path}: categorical columns not in header: {sorted(missing)}")
    label_col = schema.label_column if schema.label_column in header else None
    feature_cols = [h for h in header if h != label_col]

    categories = dict(schema.categories) if schema.categories else {}
    for col in sorted(categorical):
        if col not in categories:
            j = header.index(col)
            categories[col] = tuple(sorted({row[j] for _, row in rows}))

    offsets = {}
    width = 0
    for col in feature_cols:
        offsets[col] = width
        width += len(categories[col]) if col in categorical else 1

    features = np.zeros((len(rows), width))
    labels = np.zeros(len(rows), dtype=np.int64) if label_col else None
    col_pos = {col: header.index(col) for col in header}
    cat_index = {
        col: {v: i for i, v in enumerate(categories[col])} for col in categorical
    }
    for r, (line_no, row) in enumerate(rows):
        for col in feature_cols:
            value = row[col_pos[col]]
            if col in categorical:
                slot = cat_index[col].get(value)
                if slot is None:
                    raise ValueError(
                        f"{path}:{line_no}: unknown category {value!r} in column {col!r}"
                    )
                features[r, offsets[col] + slot] = 1.0
            else:
                try:
                    features[r, offsets[col]] = float(value)
                except ValueError:
                    raise ValueError(
                        f"{path}:{line_no}: non-numeric value {value!r} in column {col!r}"
                    ) from None
        if label_col:
            value = row[col_pos[label_col]]
            if schema.positive_label is not None:
                labels[r] = 1 if value == _normalize_token(schema.positive_label) else 0
            else:
                try:
                    parsed = int(value)
                except ValueError:
                    raise ValueError(
                        f"{path}:{line_no}: label {value!r} is not an integer; "
                        "set positive_label to map string labels"
                    ) from None
                labels[r] = parsed
    resolved = replace(
        schema,
        categories={c: categories[c] for c in sorted(categorical)} or None,
    )
    log.info("loaded %s: %d rows, %d feature columns (encoded width %d)",
             path, len(rows), len(feature_cols), width)
    return Dataset(features, labels), resolved


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Uniform subsample without replacement, seed-deterministic."""
    if not 1 <= n <= dataset.n:
        raise ValueError(f"subsample size must lie in [1, {dataset.n}]")
    keep = np.random.default_rng(seed).permutation(dataset.n)[:n]
    labels = dataset.labels[keep] if dataset.labels is not None else None
    return Dataset(dataset.features[keep], labels)


@dataclass(frozen=True)
class Standardizer:
    """Column-wise affine map fitted on training data: x -> (x - mean) / scale."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        scale = np.where(scale == 0.0, 1.0, scale)
        return cls(mean=mean, scale=scale)

    def transform(self, dataset: Dataset) -> Dataset:
        return Dataset((dataset.features - self.mean) / self.scale, dataset.labels)


def make_synthetic_gaussians(n: int, d: int, separation: float, seed: int) -> Dataset:
    """Two isotropic unit-variance clusters split 50/50 along the first axis."""
    if n < 2 or n % 2 != 0:
        raise ValueError("n must be even and at least 2")
    if d < 1:
        raise ValueError("d must be at least 1")
    if separation < 0.0:
        raise ValueError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    half = n // 2
    x = rng.standard_normal((n, d))
    x[:half, 0] -= separation / 2.0
    x[half:, 0] += separation / 2.0
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    order = rng.permutation(n)
    return Dataset(x[order], y[order])


def gaussian_bayes_accuracy(separation: float) -> float:
    """Accuracy of the optimal classifier for the synthetic Gaussian pair."""
    return 0.5 * (1.0 + math.erf(separation / (2.0 * math.sqrt(2.0))))


def make_llp_bags(
    dataset: Dataset,
    bag_size: int,
    proportion_range,
    count: int,
    seed: int,
):
    """Assemble proportion-labeled bags of a fixed size.

    Each bag draws a target proportion uniformly from the range, quantizes
    it to the nearest feasible positives count s, then fills the bag with s
    positives and size - s negatives. Bags draw from per-class pools without
    replacement until a pool runs dry; after that, bags fall back to
    sampling from the full class populations (so bags may share instances)
    and a warning is logged. The stored proportion is exactly s / size.
    """
    lo, hi = float(proportion_range[0]), float(proportion_range[1])
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError("proportion range must satisfy 0 <= lo <= hi <= 1")
    if bag_size < 1 or count < 1:
        raise ValueError("bag_size and count must be positive")
    y = dataset.binary_labels()
    positives = np.flatnonzero(y == 1)
    negatives = np.flatnonzero(y == 0)
    rng = np.random.default_rng(seed)
    pos_pool = list(rng.permutation(positives))
    neg_pool = list(rng.permutation(negatives))
    s_min = max(0, bag_size - negatives.size)
    s_max = min(bag_size, positives.size)
    if s_min > s_max:
        raise ValueError("dataset classes are too small for this bag size")

    exhausted = False
    bags = []
    for _ in range(count):
        target = rng.uniform(lo, hi) * bag_size
        s = min(max(int(round(target)), s_min), s_max)
        if len(pos_pool) >= s and len(neg_pool) >= bag_size - s:
            chosen_pos = [pos_pool.pop() for _ in range(s)]
            chosen_neg = [neg_pool.pop() for _ in range(bag_size - s)]
        else:
            if not exhausted:
                log.warning(
                    "llp bag generation exhausted a class pool; "
                    "remaining bags sample with replacement across bags"
                )
                exhausted = True
            chosen_pos = list(rng.choice(positives, size=s, replace=False))
            chosen_neg = list(rng.choice(negatives, size=bag_size - s, replace=False))
        idx = np.asarray(chosen_pos + chosen_neg, dtype=np.int64)
        idx = idx[rng.permutation(bag_size)]
        bags.append(Bag(idx, WeakLabel("proportion", s / bag_size)))
    return bags


def make_mil_bags(
    dataset: Dataset,
    size_mean: float,
    size_std: float,
    positive_classes,
    count: int,
    seed: int,
):
    """Assemble presence-labeled bags, balanced between positive and negative.

    Bag sizes come from round(Normal(size_mean, size_std)) floored at 2.
    Negative bags draw from the all-negative pool (the conditional law of
    rejection sampling); positive bags rejection-sample from the full pool
    until at least one positive lands inside.

    Raises:
        ValueError: when a negative bag cannot be formed or rejection fails
            to produce a positive bag.
    """
    if size_mean <= 0:
        raise ValueError("size_mean must be positive")
    if count < 1:
        raise ValueError("count must be positive")
    if dataset.labels is None:
        raise ValueError("dataset carries no labels")
    y = np.isin(dataset.labels, np.asarray(list(positive_classes))).astype(np.int64)
    negatives = np.flatnonzero(y == 0)
    if not np.any(y == 1):
        raise ValueError("no positive instances under the given rule")
    rng = np.random.default_rng(seed)
    bags = []
    for b in range(count):
        target = 1 if b % 2 == 0 else 0
        size = max(2, int(round(rng.normal(size_mean, size_std))))
        if target == 0:
            if size > negatives.size:
                raise ValueError(
                    f"cannot form a negative bag of size {size}: "
                    f"only {negatives.size} negative instances"
                )
            idx = rng.choice(negatives, size=size, replace=False)
        else:
            if size > dataset.n:
                raise ValueError(f"bag size {size} exceeds dataset size {dataset.n}")
            for _ in range(1000):
                idx = rng.choice(dataset.n, size=size, replace=False)
                if y[idx].any():
                    break
            else:
                raise ValueError(
                    "rejection sampling failed to produce a positive bag; "
                    "positives are too rare for this bag size"
                )
        bags.append(Bag(np.asarray(idx, dtype=np.int64), WeakLabel("max", target)))
    return bags


def make_pu_split(dataset: Dataset, alpha: float, c: float, seed: int) -> PUDataset:
    """Select labeled positives completely at random and pool the rest.

    The dataset is first subsampled so the retained class prior is alpha;
    each retained positive is then labeled independently with probability c,
    regardless of its features. Unlabeled indices are shuffled so ordering
    leaks nothing.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not 0.0 < c <= 1.0:
        raise ValueError("c must lie in (0, 1]")
    y = dataset.binary_labels()
    positives = np.flatnonzero(y == 1)
    negatives = np.flatnonzero(y == 0)
    n_total = min(
        int(positives.size / alpha), int(negatives.size / (1.0 - alpha))
    )
    n_pos = int(round(alpha * n_total))
    n_neg = n_total - n_pos
    if n_pos < 1 or n_neg < 1:
        raise ValueError(
            f"class prior {alpha} is infeasible for {positives.size} positives "
            f"and {negatives.size} negatives"
        )
    rng = np.random.default_rng(seed)
    keep_pos = rng.permutation(positives)[:n_pos]
    keep_neg = rng.permutation(negatives)[:n_neg]
    labeled_mask = rng.random(n_pos) < c
    labeled = keep_pos[labeled_mask]
    if labeled.size == 0:
        raise ValueError("no positives were selected; increase c or the dataset size")
    unlabeled = np.concatenate([keep_pos[~labeled_mask], keep_neg])
    unlabeled = unlabeled[rng.permutation(unlabeled.size)]
    if unlabeled.size == 0:
        raise ValueError("the unlabeled pool is empty; decrease c")
    return PUDataset(labeled, unlabeled, alpha=alpha, c=c)


def save_dataset_csv(path, dataset: Dataset) -> None:
    """Write features (and labels when present) as a header CSV, full precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        cols = [f"f{j}" for j in range(dataset.d)]
        if dataset.labels is not None:
            cols.append("label")
        writer.writerow(cols)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


def save_bags(path, bags) -> None:
    """One JSON record per bag; floats round-trip exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, bag in enumerate(bags):
            record = {
                "bag": i,
                "kind": bag.weak_label.kind,
                "value": bag.weak_label.value,
                "instances": [int(j) for j in bag.instance_indices],
            }
            fh.write(json.dumps(record) + "\n")


def load_bags(path):
    bags = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                bags.append(
                    Bag(
                        np.asarray(record["instances"], dtype=np.int64),
                        WeakLabel(record["kind"], record["value"]),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad bag record: {exc}") from exc
    if not bags:
        raise ValueError(f"{path}: no bag records")
    return bags


def save_pu_split(path, split: PUDataset) -> None:
    payload = {
        "alpha": split.alpha,
        "c": split.c,
        "positive": [int(i) for i in split.positive_indices],
        "unlabeled": [int(i) for i in split.unlabeled_indices],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_pu_split(path) -> PUDataset:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        return PUDataset(
            np.asarray(payload["positive"], dtype=np.int64),
            np.asarray(payload["unlabeled"], dtype=np.int64),
            alpha=float(payload["alpha"]),
            c=float(payload["c"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: bad split file: {exc}") from exc
