"""Task datasets: CSV I/O, synthetic Gaussian tasks, label drift, synchronized batches."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ValidationError

SPLITS = ("train", "val", "test")


@dataclass
class TaskDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "task"
    split: str = "train"
    class_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValidationError(f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("feature rows must be finite")
        self.class_counts = np.bincount(self.labels, minlength=self.num_classes)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx) -> "TaskDataset":
        return TaskDataset(self.features[idx], self.labels[idx], self.num_classes, self.name, self.split)


# --------------------------------------------------------------------------- CSV

@dataclass
class CsvSchema:
    feature_columns: list[str]
    label_column: str
    num_classes: int


def load_csv(path, schema: CsvSchema, name: str | None = None, split: str = "train") -> TaskDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    feats, labels = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        missing = [c for c in [*schema.feature_columns, schema.label_column] if c not in header]
        if missing:
            raise ValidationError(f"{path}: header lacks columns {missing}")
        fidx = [header.index(c) for c in schema.feature_columns]
        lidx = header.index(schema.label_column)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for col, i in zip(schema.feature_columns, fidx):
                try:
                    v = float(row[i])
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: column {col!r} is not numeric: {row[i]!r}") from None
                if not math.isfinite(v):
                    raise ValidationError(f"{path}:{lineno}: column {col!r} is not finite")
                vals.append(v)
            try:
                y = int(row[lidx])
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: label column {schema.label_column!r} is not an integer: {row[lidx]!r}"
                ) from None
            if not 0 <= y < schema.num_classes:
                raise ValidationError(f"{path}:{lineno}: label {y} outside [0, {schema.num_classes})")
            feats.append(vals)
            labels.append(y)
    X = np.array(feats, dtype=np.float64).reshape(len(feats), len(schema.feature_columns))
    return TaskDataset(X, np.array(labels, dtype=np.int64), schema.num_classes, name or path.stem, split)


def save_csv(dataset: TaskDataset, path, feature_columns: list[str] | None = None, label_column: str = "label") -> CsvSchema:
    cols = feature_columns or [f"x{i}" for i in range(dataset.dim)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*cols, label_column])
        for x, y in zip(dataset.features, dataset.labels):
            w.writerow([*(repr(float(v)) for v in x), int(y)])
    return CsvSchema(cols, label_column, dataset.num_classes)


# --------------------------------------------------------------------- synthetic

@dataclass
class SyntheticTasks:
    splits: list[dict[str, TaskDataset]]
    anchors: np.ndarray  # (K, d)
    offsets: np.ndarray  # (T, K, d)

    def split(self, name: str) -> list[TaskDataset]:
        return [s[name] for s in self.splits]


def make_anchors(num_classes: int, dim: int, spacing: float, rng: np.random.Generator) -> np.ndarray:
    """Random class anchors rescaled so the closest pair sits exactly ``spacing`` apart."""
    A = rng.standard_normal((num_classes, dim))
    if num_classes == 1:
        return np.zeros((1, dim))
    diff = A[:, None, :] - A[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    closest = dist[~np.eye(num_classes, dtype=bool)].min()
    return A * (spacing / closest)


def make_synthetic_tasks(
    num_tasks: int,
    num_classes: int,
    dim: int,
    n_per_class: int,
    task_shift: float = 0.0,
    noise: float = 1.0,
    seed: int = 0,
    n_val_per_class: int | None = None,
    n_test_per_class: int | None = None,
    anchor_spacing: float | None = None,
) -> SyntheticTasks:
    """Gaussian classes at ``anchor_k + offset_{t,k}`` with ``||offset_{t,k}|| = task_shift``.

    Anchor pairs are at least ``anchor_spacing`` (default ``4 * noise``) apart.
    """
    if min(num_tasks, num_classes, dim, n_per_class) < 1:
        raise ValidationError("all sizes must be positive")
    rng = np.random.default_rng(seed)
    spacing = 4.0 * noise if anchor_spacing is None else anchor_spacing
    anchors = make_anchors(num_classes, dim, spacing, rng)
    dirs = rng.standard_normal((num_tasks, num_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    offsets = task_shift * dirs
    sizes = {"train": n_per_class, "val": n_val_per_class or n_per_class, "test": n_test_per_class or n_per_class}

    splits = []
    for t in range(num_tasks):
        per_split = {}
        for split in SPLITS:
            n = sizes[split]
            labels = np.repeat(np.arange(num_classes), n)
            means = anchors[labels] + offsets[t, labels]
            X = means + noise * rng.standard_normal((labels.size, dim))
            per_split[split] = TaskDataset(X, labels, num_classes, f"task{t}", split)
        splits.append(per_split)
    return SyntheticTasks(splits, anchors, offsets)


# ------------------------------------------------------------------------- drift

@dataclass(frozen=True)
class TaskDrift:
    classes: tuple[int, ...]
    ratio: float

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValidationError(f"drift ratio {self.ratio} outside [0, 1)")


@dataclass(frozen=True)
class DriftSpec:
    """Per-task drift; ``tasks[t]`` is None for undrifted tasks."""

    tasks: tuple[TaskDrift | None, ...]

    @classmethod
    def disjoint(cls, num_tasks: int, num_classes: int, ratio: float, classes_per_task: int | None = None) -> "DriftSpec":
        """Task t drifts its own contiguous block of classes (t*b .. t*b + b - 1)."""
        b = classes_per_task or max(num_classes // num_tasks, 1)
        if b * num_tasks > num_classes:
            raise ValidationError("disjoint drift blocks exceed the class count")
        return cls(tuple(TaskDrift(tuple(range(t * b, (t + 1) * b)), ratio) for t in range(num_tasks)))

    def with_ratio(self, ratio: float) -> "DriftSpec":
        return DriftSpec(tuple(None if d is None else TaskDrift(d.classes, ratio) for d in self.tasks))

    def to_dict(self) -> dict:
        return {"tasks": [None if d is None else {"classes": list(d.classes), "ratio": d.ratio} for d in self.tasks]}

    @classmethod
    def from_dict(cls, raw: dict) -> "DriftSpec":
        return cls(tuple(None if d is None else TaskDrift(tuple(d["classes"]), float(d["ratio"])) for d in raw["tasks"]))

    def apply(self, datasets: list[TaskDataset], seed: int) -> list[TaskDataset]:
        if len(self.tasks) != len(datasets):
            raise ValidationError(f"drift spec covers {len(self.tasks)} tasks, data has {len(datasets)}")
        return [
            ds if d is None else apply_drift(ds, d, np.random.default_rng([seed, t]))
            for t, (ds, d) in enumerate(zip(datasets, self.tasks))
        ]


def retained_count(n: int, ratio: float) -> int:
    # Guard against float fuzz such as (1 - 0.3) * 100 = 70.00000000000001.
    return max(1, math.ceil((1.0 - ratio) * n - 1e-9))


def apply_drift(dataset: TaskDataset, drift: TaskDrift, seed) -> TaskDataset:
    """Keep a uniform random ``ceil((1 - ratio) * n_k)`` rows of each drifted class."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for k in drift.classes:
        if not 0 <= k < dataset.num_classes or dataset.class_counts[k] == 0:
            raise ValidationError(f"drift references class {k}, absent from {dataset.name}")
    keep = np.ones(len(dataset), dtype=bool)
    for k in sorted(drift.classes):
        idx = np.flatnonzero(dataset.labels == k)
        n_keep = retained_count(idx.size, drift.ratio)
        if n_keep == idx.size:
            continue
        kept = rng.choice(idx, size=n_keep, replace=False)
        keep[idx] = False
        keep[kept] = True
    if keep.all():
        return dataset
    return dataset.subset(np.flatnonzero(keep))


# ----------------------------------------------------------------------- batches

def steps_per_epoch(datasets: list[TaskDataset], batch_size: int) -> int:
    return math.ceil(max(len(d) for d in datasets) / batch_size)


def batch_iterator(
    datasets: list[TaskDataset], batch_size: int, seed: int, epoch: int
) -> Iterator[list[tuple[np.ndarray, np.ndarray]]]:
    """Yield one equal-size (x, y) batch per task per step.

    Every task is reshuffled each epoch and wraps around with a fresh
    permutation when exhausted, so each wrap visits every row exactly once.
    """
    if any(len(d) == 0 for d in datasets):
        raise ValidationError("every task needs at least one row")
    steps = steps_per_epoch(datasets, batch_size)
    need = steps * batch_size
    orders = []
    for t, ds in enumerate(datasets):
        rng = np.random.default_rng([seed, epoch, t])
        n = len(ds)
        wraps = math.ceil(need / n)
        orders.append(np.concatenate([rng.permutation(n) for _ in range(wraps)])[:need])
    for s in range(steps):
        sl = slice(s * batch_size, (s + 1) * batch_size)
        yield [(ds.features[o[sl]], ds.labels[o[sl]]) for ds, o in zip(datasets, orders)]
