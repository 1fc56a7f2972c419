"""Synthetic tasks, Dirichlet non-IID partitioning, and CSV/JSONL loading."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParams, LabelOutOfRange, ParseError, TooManyDevices
from .model import Example

MIN_SHARD = 4


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int
    provenance: str = ""

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise InvalidParams(f"features {self.X.shape} do not match {len(self.y)} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.y)

    def __iter__(self):
        for x, label in zip(self.X, self.y):
            yield Example(x, int(label))

    @property
    def input_dim(self):
        return self.X.shape[1]

    def subset(self, idx, provenance=None):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.num_classes,
                       self.provenance if provenance is None else provenance)

    def class_counts(self):
        return np.bincount(self.y, minlength=self.num_classes)

    def same_as(self, other):
        return (self.num_classes == other.num_classes and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y))


@dataclass(frozen=True)
class PartitionSpec:
    num_devices: int
    label_alpha: float = 1.0
    size_alpha: float = 5.0
    seed: int = 0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.num_devices < 1:
            raise InvalidParams("num_devices must be >= 1")
        if not (self.label_alpha > 0 and self.size_alpha > 0):
            raise InvalidParams("Dirichlet concentrations must be positive")
        if not 0 < self.holdout_fraction <= 0.5:
            raise InvalidParams("holdout_fraction must lie in (0, 0.5]")


@dataclass(eq=False)
class Shard:
    train: Dataset
    holdout: Dataset
    indices: np.ndarray = field(repr=False)


def synth_task(seed, num_classes, input_dim, n, margin=3.0, noise=1.0):
    """Gaussian blobs around ``num_classes`` anchors of norm ``margin``.

    Classes are stratified (sizes differ by at most one) and rows are
    shuffled deterministically.
    """
    if num_classes < 2 or input_dim < 1:
        raise InvalidParams("need at least two classes and one feature")
    if n < 10 * num_classes:
        raise InvalidParams(f"n={n} is below 10 examples per class")
    if margin < 0 or noise < 0:
        raise InvalidParams("margin and noise must be nonnegative")
    rng = np.random.default_rng(seed)
    anchors = rng.normal(size=(num_classes, input_dim))
    anchors *= margin / np.linalg.norm(anchors, axis=1, keepdims=True)
    y = np.arange(n) % num_classes
    rng.shuffle(y)
    X = anchors[y] + noise * rng.normal(size=(n, input_dim))
    return Dataset(X, y, num_classes, f"synthetic(seed={seed},C={num_classes},d={input_dim},n={n},margin={margin},noise={noise})")


def _largest_remainder(weights, total):
    raw = np.asarray(weights, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _device_sizes(rng, n, m, alpha):
    sizes = _largest_remainder(rng.dirichlet(np.full(m, alpha)), n)
    # lift tiny shards, taking from the largest each time
    for i in range(m):
        while sizes[i] < MIN_SHARD:
            j = int(np.argmax(sizes))
            sizes[j] -= 1
            sizes[i] += 1
    return sizes


def _stratified_holdout(rng, labels, fraction):
    n = len(labels)
    target = max(1, int(round(fraction * n)))
    classes, counts = np.unique(labels, return_counts=True)
    per_class = _largest_remainder(counts / n, target)
    per_class = np.minimum(per_class, counts)
    picked = []
    for c, k in zip(classes, per_class):
        where = np.flatnonzero(labels == c)
        picked.append(rng.permutation(where)[:k])
    mask = np.zeros(n, dtype=bool)
    mask[np.concatenate(picked)] = True
    return mask


def dirichlet_partition(d: Dataset, spec: PartitionSpec):
    """Split ``d`` into per-device (train, holdout) shards.

    Device sizes follow Dirichlet(size_alpha) proportions; each device's label
    mixture is Dirichlet(label_alpha). Every example lands on exactly one
    device.
    """
    n = len(d)
    m = spec.num_devices
    if m > n // 4:
        raise TooManyDevices(f"{m} devices for {n} examples (need n >= 4 per device)")
    rng = np.random.default_rng(spec.seed)
    C = d.num_classes
    sizes = _device_sizes(rng, n, m, spec.size_alpha)
    mixtures = rng.dirichlet(np.full(C, spec.label_alpha), size=m)
    pools = [list(rng.permutation(np.flatnonzero(d.y == c))) for c in range(C)]
    assigned = [[] for _ in range(m)]
    for i in rng.permutation(m):
        want = _largest_remainder(mixtures[i], int(sizes[i]))
        for c in range(C):
            take = min(int(want[c]), len(pools[c]))
            assigned[i].extend(pools[c][:take])
            del pools[c][:take]
        missing = int(sizes[i]) - len(assigned[i])
        while missing > 0:
            avail = np.array([len(pl) for pl in pools], dtype=np.float64)
            probs = mixtures[i] * (avail > 0)
            probs = probs / probs.sum() if probs.sum() > 0 else avail / avail.sum()
            c = int(rng.choice(C, p=probs))
            assigned[i].append(pools[c].pop(0))
            missing -= 1
    shards = []
    for i in range(m):
        idx = np.sort(np.asarray(assigned[i], dtype=np.int64))
        held = _stratified_holdout(rng, d.y[idx], spec.holdout_fraction)
        shards.append(Shard(d.subset(idx[~held], f"device{i}/train"),
                            d.subset(idx[held], f"device{i}/holdout"), idx))
    return shards


def _check_label(raw, line, num_classes):
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"label {raw!r} is not a number", line) from None
    if value != int(value):
        raise ParseError(f"label {raw!r} is not an integer", line)
    label = int(value)
    if label < 0 or (num_classes is not None and label >= num_classes):
        raise LabelOutOfRange(f"line {line}: label {label} out of range")
    return label


def _finite(values, line):
    try:
        out = [float(v) for v in values]
    except (TypeError, ValueError):
        raise ParseError(f"non-numeric feature in {values!r}", line) from None
    if not np.all(np.isfinite(out)):
        raise ParseError("non-finite feature", line)
    return out


def load_table(path, fmt=None, num_classes=None):
    """Read a numeric classification table from CSV or JSONL.

    CSV files carry a header ``f0,...,f{d-1},label``; JSONL rows are objects
    with ``features`` and ``label``. ``num_classes`` defaults to one more
    than the largest label seen.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    rows, labels = [], []
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[-1].strip() != "label":
                raise ParseError("header must end with 'label'", 1)
            width = len(header) - 1
            for expect, name in enumerate(header[:-1]):
                if name.strip() != f"f{expect}":
                    raise ParseError(f"unexpected header column {name!r}", 1)
            for line, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != width + 1:
                    raise ParseError(f"expected {width + 1} fields, got {len(row)}", line)
                rows.append(_finite(row[:-1], line))
                labels.append(_check_label(row[-1], line, num_classes))
    elif fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for line, text in enumerate(fh, start=1):
                if not text.strip():
                    continue
                try:
                    obj = json.loads(text)
                    feats, label = obj["features"], obj["label"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ParseError(f"bad record ({exc})", line) from None
                if not isinstance(feats, list) or (rows and len(feats) != len(rows[0])):
                    raise ParseError("features must be a list of consistent length", line)
                if isinstance(label, bool) or not isinstance(label, (int, float)):
                    raise ParseError(f"label {label!r} is not an integer", line)
                rows.append(_finite(feats, line))
                labels.append(_check_label(label, line, num_classes))
    else:
        raise ParseError(f"unknown table format {fmt!r}")
    if not rows:
        raise ParseError("table has no rows")
    C = num_classes if num_classes is not None else max(labels) + 1
    return Dataset(np.array(rows), np.array(labels), C, f"file:{path.name}")
