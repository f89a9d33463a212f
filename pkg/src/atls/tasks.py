"""Synthetic transfer-learning tasks and CSV dataset ingestion.

A fixed random teacher network maps Gaussian-mixture inputs to a small feature
space. The pre-training task labels inputs by the argmax of one projection of
those features; fine-tuning tasks use a fresh projection restricted to a
handful of class ids, so they share the backbone but are smaller.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng

__all__ = [
    "Dataset",
    "TaskFamily",
    "DatasetFormatError",
    "generate_task",
    "batches",
    "load_csv_dataset",
    "save_csv_dataset",
]

_STAGES = {"pretrain": 1, "finetune": 2}
_SPLITS = {"train": 1, "test": 2}


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __len__(self):
        return len(self.y)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)


@dataclass(frozen=True)
class TaskFamily:
    """Parameters of a teacher-generated pre-train / fine-tune task pair.

    ``finetune_subset`` holds class ids drawn from a separate label space of
    ``finetune_label_space`` classes (the fine-tune projection), mirroring a
    subset of a larger dataset's classes. Samples whose top-two teacher logits
    differ by less than ``min_margin`` are rejected.
    """

    input_dim: int = 32
    pretrain_classes: int = 10
    finetune_subset: tuple = (0, 1)
    finetune_label_space: int = 100
    samples_per_class_pretrain: int = 300
    samples_per_class_finetune: int = 50
    samples_per_class_test: int = 100
    teacher_hidden: int = 8
    n_components: int = 1
    component_std: float = 1.0
    min_margin: float = 1.0
    noise_std: float = 0.0
    seed: int = 0
    _teacher: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "finetune_subset", tuple(int(c) for c in self.finetune_subset))
        sub = self.finetune_subset
        if not sub:
            raise ValueError("finetune_subset is empty")
        if len(set(sub)) != len(sub):
            raise ValueError("finetune_subset has duplicate class ids")
        if min(sub) < 0 or max(sub) >= self.finetune_label_space:
            raise ValueError(f"finetune class ids must lie in [0, {self.finetune_label_space})")
        if len(sub) >= self.pretrain_classes:
            raise ValueError("fine-tune task must have fewer classes than the pre-train task")
        if not self.samples_per_class_finetune < self.samples_per_class_pretrain:
            raise ValueError("fine-tune task must have fewer samples per class than pre-training")
        if min(self.input_dim, self.teacher_hidden, self.n_components) < 1 or self.pretrain_classes < 2:
            raise ValueError("invalid task dimensions")

    @property
    def teacher(self) -> dict:
        if self._teacher is None:
            rng = make_rng(self.seed, 0x7EAC)
            d, h = self.input_dim, self.teacher_hidden
            t = {
                "W1": rng.standard_normal((h, d)) * 2.0 / np.sqrt(d),
                "b1": 0.3 * rng.standard_normal(h),
                "centers": rng.standard_normal((self.n_components, d)),
                "pretrain": rng.standard_normal((self.pretrain_classes, h)),
                "finetune": rng.standard_normal((self.finetune_label_space, h)),
            }
            object.__setattr__(self, "_teacher", t)
            calib = self._draw_inputs(rng, 20000)
            feats = self.features(calib)
            t["pretrain_bias"] = _balance_bias(feats @ t["pretrain"].T)
            proj = t["finetune"][list(self.finetune_subset)]
            t["finetune_bias"] = _balance_bias(feats @ proj.T)
        return self._teacher

    def _draw_inputs(self, rng, n) -> np.ndarray:
        comp = rng.integers(self.n_components, size=n)
        return self.teacher["centers"][comp] + self.component_std * rng.standard_normal((n, self.input_dim))

    def features(self, X) -> np.ndarray:
        t = self.teacher
        return np.tanh(X @ t["W1"].T + t["b1"])

    def logits(self, X, stage="pretrain") -> np.ndarray:
        t = self.teacher
        feats = self.features(X)
        if stage == "pretrain":
            return feats @ t["pretrain"].T + t["pretrain_bias"]
        return feats @ t["finetune"][list(self.finetune_subset)].T + t["finetune_bias"]

    def n_classes(self, stage) -> int:
        return self.pretrain_classes if stage == "pretrain" else len(self.finetune_subset)


def _balance_bias(logits, iters=300, step=2.0):
    """Per-class offsets that make every argmax class roughly equally frequent."""
    n, k = logits.shape
    bias = np.zeros(k)
    for _ in range(iters):
        freq = np.bincount(np.argmax(logits + bias, axis=1), minlength=k) / n
        bias -= step * (freq - 1.0 / k)
    return bias


def generate_task(family: TaskFamily, split="train", seed=0, stage="finetune",
                  max_draw_factor=400) -> Dataset:
    """Draw a class-balanced dataset by rejection sampling the teacher labels."""
    if stage not in _STAGES or split not in _SPLITS:
        raise ValueError(f"stage must be one of {list(_STAGES)}, split one of {list(_SPLITS)}")
    k = family.n_classes(stage)
    if split == "test":
        per_class = family.samples_per_class_test
    elif stage == "pretrain":
        per_class = family.samples_per_class_pretrain
    else:
        per_class = family.samples_per_class_finetune
    rng = make_rng(family.seed, seed, _STAGES[stage], _SPLITS[split])

    kept_X = [[] for _ in range(k)]
    need = np.full(k, per_class)
    drawn = 0
    chunk = max(256, 4 * k * per_class)
    while need.any():
        if drawn > max_draw_factor * k * per_class:
            raise RuntimeError(f"could not fill class quotas; still missing {need.tolist()}")
        X = family._draw_inputs(rng, chunk)
        logits = family.logits(X, stage)
        labels = np.argmax(logits, axis=1)
        if family.min_margin > 0 and k > 1:
            top2 = np.sort(logits, axis=1)[:, -2:]
            labels = np.where(top2[:, 1] - top2[:, 0] >= family.min_margin, labels, -1)
        drawn += chunk
        for c in np.flatnonzero(need):
            rows = X[labels == c][: need[c]]
            kept_X[c].append(rows)
            need[c] -= len(rows)

    X = np.concatenate([np.concatenate(rows) for rows in kept_X])
    y = np.repeat(np.arange(k), per_class)
    order = rng.permutation(len(y))
    return Dataset(X[order], y[order], k)


def batches(dataset: Dataset, batch_size: int, shuffle_seed=0, jitter_std=0.0):
    """Yield shuffled ``(X, y)`` mini-batches; the last short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    order = np.arange(n) if shuffle_seed is None else make_rng(shuffle_seed, 0x5A).permutation(n)
    jitter = make_rng(shuffle_seed or 0, 0x17) if jitter_std > 0 else None
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        X = dataset.X[idx]
        if jitter is not None:
            X = X + jitter_std * jitter.standard_normal(X.shape)
        yield X, dataset.y[idx]


def _parse_float(cell, lineno):
    try:
        return float(cell)
    except ValueError:
        raise DatasetFormatError(f"line {lineno}: non-numeric value {cell!r}") from None


def load_csv_dataset(path, class_filter=None) -> Dataset:
    """Read ``label,f1,f2,...`` rows; features are min-max scaled to [0, 1].

    A header line is allowed only as the first line. ``class_filter`` keeps the
    listed labels and re-indexes them densely (in sorted order) from 0.
    """
    labels, rows = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1:
                try:
                    float(row[0])
                except ValueError:
                    continue
            values = [_parse_float(c.strip(), lineno) for c in row]
            if len(values) < 2:
                raise DatasetFormatError(f"line {lineno}: expected a label and at least one feature")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DatasetFormatError(f"line {lineno}: expected {width} columns, got {len(values)}")
            if values[0] != int(values[0]):
                raise DatasetFormatError(f"line {lineno}: label {values[0]} is not an integer")
            labels.append(int(values[0]))
            rows.append(values[1:])
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    X = np.asarray(rows, dtype=float)
    y = np.asarray(labels)
    lo, hi = X.min(), X.max()
    X = (X - lo) / (hi - lo) if hi > lo else np.zeros_like(X)

    classes = sorted(set(labels)) if class_filter is None else sorted({int(c) for c in class_filter})
    missing = set(classes) - set(labels)
    if missing:
        raise ValueError(f"classes {sorted(missing)} not present in {path}")
    keep = np.isin(y, classes)
    remap = {c: i for i, c in enumerate(classes)}
    return Dataset(X[keep], np.array([remap[c] for c in y[keep]], dtype=np.int64), len(classes))


def save_csv_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for label, row in zip(dataset.y, dataset.X):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])
    return path
