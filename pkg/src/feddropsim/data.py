"""Dataset generation, CSV ingestion, and per-client partitioning.

The CSV format is plain UTF-8, comma-separated: each row holds the feature
values (decimal-point reals) followed by one integer class label; a header
row is optional. Partitioning splits a dataset into per-client (train, eval)
shards where eval is a held-out 20% of each client's allocation, so weighted
evaluation has per-client example counts to work with.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .nn import DataBatch

PARTITION_KINDS = ("iid", "label_skew")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # [n, dim] float64
    labels: np.ndarray  # [n] integer class ids
    class_count: int

    def __post_init__(self) -> None:
        x, y = np.asarray(self.features), np.asarray(self.labels)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise InputError(f"features {x.shape} and labels {y.shape} are inconsistent")
        if not np.isfinite(x).all():
            raise InputError("features contain non-finite values")
        if self.class_count < 2:
            raise InputError("need at least 2 classes")
        if x.shape[0] < self.class_count:
            raise InputError("need at least one example per class")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise InputError(f"labels must lie in [0, {self.class_count})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def synth_blobs(
    seed: int, classes: int, dim: int, n_per_class: int, spread: float
) -> Dataset:
    """Gaussian cluster per class with unit-spaced collinear means.

    Class c is centered at c along the first feature axis (zero elsewhere)
    with isotropic standard deviation ``spread``, so small spreads give a
    nearest-mean-separable problem and large ones force class overlap.
    """
    if classes < 2 or dim < 2:
        raise InputError("need classes >= 2 and dim >= 2")
    if n_per_class < 1:
        raise InputError("n_per_class must be >= 1")
    if not spread > 0:
        raise InputError("spread must be positive")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    blocks = []
    for c in range(classes):
        block = rng.normal(0.0, spread, size=(n_per_class, dim))
        block[:, 0] += float(c)
        blocks.append(block)
    features = np.concatenate(blocks)
    labels = np.repeat(np.arange(classes), n_per_class)
    return Dataset(features, labels, classes)


def load_csv(path: str | Path) -> Dataset:
    """Parse a dataset file; malformed rows are rejected by 1-based line number."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read dataset file {path}: {exc}") from exc
    rows = [(i, row) for i, row in enumerate(csv.reader(text.splitlines()), 1) if row]
    if rows and _looks_like_header(rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise InputError(f"dataset file {path} has no data rows")
    width = len(rows[0][1])
    if width < 2:
        raise InputError(f"row {rows[0][0]}: need at least one feature and a label")
    features, labels = [], []
    for lineno, row in rows:
        if len(row) != width:
            raise InputError(f"row {lineno}: expected {width} columns, got {len(row)}")
        try:
            features.append([float(cell) for cell in row[:-1]])
        except ValueError as exc:
            raise InputError(f"row {lineno}: bad feature value ({exc})") from exc
        try:
            label = int(row[-1])
        except ValueError as exc:
            raise InputError(
                f"row {lineno}: label {row[-1]!r} is not an integer"
            ) from exc
        if label < 0:
            raise InputError(f"row {lineno}: label must be nonnegative")
        labels.append(label)
    y = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(features, dtype=np.float64), y, int(y.max()) + 1)


def _looks_like_header(row: list[str]) -> bool:
    for cell in row:
        try:
            float(cell)
        except ValueError:
            return True
    return False


def dataset_csv_text(ds: Dataset) -> str:
    """Render the CSV format load_csv accepts; floats use shortest round-trip
    repr so the same dataset always produces byte-identical text."""
    lines = [",".join([f"f{i}" for i in range(ds.dim)] + ["label"])]
    for row, label in zip(ds.features, ds.labels):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(label))]))
    return "\n".join(lines) + "\n"


def save_csv(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(dataset_csv_text(ds), encoding="utf-8")


@dataclass(frozen=True)
class PartitionSpec:
    kind: str  # "iid" or "label_skew"
    client_count: int
    seed: int = 0
    skew_alpha: float | None = None  # Dirichlet concentration, label_skew only

    def __post_init__(self) -> None:
        if self.kind not in PARTITION_KINDS:
            raise InputError(f"kind must be one of {PARTITION_KINDS}, got {self.kind!r}")
        if self.client_count < 2:
            raise InputError("client_count must be >= 2")
        if self.kind == "label_skew" and not (
            self.skew_alpha is not None and self.skew_alpha > 0
        ):
            raise InputError("label_skew needs a positive skew_alpha")


def _apportion(total: int, props: np.ndarray) -> np.ndarray:
    """Integer counts summing to total, proportional to props
    (largest-remainder rounding, ties to the lower index)."""
    raw = props * total
    counts = np.floor(raw).astype(int)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition(ds: Dataset, spec: PartitionSpec) -> list[tuple[DataBatch, DataBatch]]:
    """Split a dataset into per-client (train, eval) shards.

    iid: seeded shuffle then near-equal contiguous splits (earlier clients
    absorb the remainder). label_skew: each class is allocated across clients
    by proportions drawn from a symmetric Dirichlet(skew_alpha). Every client
    ends with at least 1 train and 1 eval example; the shards are a disjoint
    cover of the dataset.
    """
    if ds.n < 2 * spec.client_count:
        raise InputError(
            f"{ds.n} examples cannot give {spec.client_count} clients 2 examples each"
        )
    rng = np.random.default_rng(spec.seed & 0xFFFFFFFFFFFFFFFF)
    if spec.kind == "iid":
        alloc = [list(part) for part in np.array_split(rng.permutation(ds.n), spec.client_count)]
    else:
        alloc = [[] for _ in range(spec.client_count)]
        for c in range(ds.class_count):
            idx = np.flatnonzero(ds.labels == c)
            rng.shuffle(idx)
            props = rng.dirichlet([spec.skew_alpha] * spec.client_count)
            bounds = np.cumsum(_apportion(len(idx), props))[:-1]
            for ci, part in enumerate(np.split(idx, bounds)):
                alloc[ci].extend(int(i) for i in part)
        _rebalance_min_size(alloc, minimum=2)
    shards = []
    for indices in alloc:
        idx = np.asarray(indices, dtype=np.int64)
        n_eval = max(1, len(idx) // 5)
        train, evl = idx[: len(idx) - n_eval], idx[len(idx) - n_eval :]
        shards.append((DataBatch(ds.features[train], ds.labels[train]),
                       DataBatch(ds.features[evl], ds.labels[evl])))
    return shards


def _rebalance_min_size(alloc: list[list[int]], minimum: int) -> None:
    """Move single examples from the largest allocation to any client below
    the minimum. Deterministic: richest donor (ties to the lower id) gives
    its last-allocated example to the poorest client."""
    while True:
        sizes = [len(a) for a in alloc]
        poor = min(range(len(alloc)), key=lambda i: (sizes[i], i))
        if sizes[poor] >= minimum:
            return
        donor = max(range(len(alloc)), key=lambda i: (sizes[i], -i))
        alloc[poor].append(alloc[donor].pop())
