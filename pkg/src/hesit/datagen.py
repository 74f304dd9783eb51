"""Deterministic Gaussian-mixture task streams and the dataset CSV format."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset

SHIFT_MODES = ("class_split", "mean_shift", "rotation")
SPLITS = ("trn", "val", "tst")


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class StreamSpec:
    n_tasks: int = 5
    dim: int = 2
    n_classes: int = 10
    task_sizes: tuple = (300,)
    separation: float = 6.0
    shift_mode: str = "class_split"
    noise_fraction: tuple = (0.0,)
    split: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        sizes = _per_task(self.task_sizes, self.n_tasks, "task_sizes")
        noise = _per_task(self.noise_fraction, self.n_tasks, "noise_fraction")
        object.__setattr__(self, "task_sizes", tuple(int(s) for s in sizes))
        object.__setattr__(self, "noise_fraction", tuple(float(x) for x in noise))
        object.__setattr__(self, "split", tuple(float(x) for x in self.split))
        if self.n_tasks < 1 or self.dim < 1 or self.n_classes < 1:
            raise ValueError("n_tasks, dim and n_classes must be positive")
        if self.shift_mode not in SHIFT_MODES:
            raise ValueError(f"shift_mode must be one of {SHIFT_MODES}")
        if self.shift_mode == "class_split" and self.n_classes < self.n_tasks:
            raise ValueError("class_split needs at least one class per task")
        if any(s < self.n_classes for s in self.task_sizes):
            raise ValueError("every task needs at least n_classes examples")
        if any(not 0 <= x < 0.5 for x in self.noise_fraction):
            raise ValueError("noise_fraction must lie in [0, 0.5)")
        if len(self.split) != 3 or any(x < 0 for x in self.split) or abs(sum(self.split) - 1) > 1e-9:
            raise ValueError("split ratios must be three non-negative numbers summing to 1")

    def task_classes(self, t):
        if self.shift_mode == "class_split":
            return [c for c in range(self.n_classes) if c % self.n_tasks == t]
        return list(range(self.n_classes))


def _per_task(value, n, name):
    value = tuple(value) if isinstance(value, (list, tuple)) else (value,)
    if len(value) == 1:
        return value * n
    if len(value) != n:
        raise ValueError(f"{name} needs 1 or {n} entries")
    return value


@dataclass
class Task:
    task_id: int
    trn: Dataset
    val: Dataset
    tst: Dataset
    classes: list = field(default_factory=list)


@dataclass
class TaskStream:
    tasks: list
    dim: int
    n_classes: int

    def __len__(self):
        return len(self.tasks)

    def reordered(self, order):
        return TaskStream([self.tasks[i] for i in order], self.dim, self.n_classes)

    def all_examples(self):
        return Dataset.concat([d for t in self.tasks for d in (t.trn, t.val, t.tst)])


def class_means(n_classes, dim, separation, rng):
    """Class centres with minimum pairwise distance ``separation``.

    Scaled simplex vertices when ``n_classes <= dim``, otherwise a circle in a
    seeded random 2-D plane.
    """
    if n_classes <= dim:
        Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        return separation / np.sqrt(2) * Q[:, :n_classes].T
    if dim == 1:
        return separation * (np.arange(n_classes) - (n_classes - 1) / 2)[:, None]
    Q, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    radius = separation / (2 * np.sin(np.pi / n_classes))
    ang = 2 * np.pi * np.arange(n_classes) / n_classes
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1) @ Q.T


def _rotation(dim, angle, rng):
    if dim < 2:
        return np.eye(dim)
    Q, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    c, s = np.cos(angle) - 1, np.sin(angle)
    u, w = Q[:, 0], Q[:, 1]
    return np.eye(dim) + c * (np.outer(u, u) + np.outer(w, w)) + s * (np.outer(w, u) - np.outer(u, w))


def gen_task_stream(spec: StreamSpec) -> TaskStream:
    master = np.random.default_rng(spec.seed)
    base = class_means(spec.n_classes, spec.dim, spec.separation, master)
    rot_rng = np.random.default_rng([spec.seed, 1])
    task_seeds = master.integers(0, 2**63 - 1, size=spec.n_tasks)
    tasks = []
    next_id = 0
    for t in range(spec.n_tasks):
        rng = np.random.default_rng(int(task_seeds[t]))
        means = base
        if spec.shift_mode == "mean_shift":
            means = base + t * 0.5 * spec.separation * _unit(rng.normal(size=spec.dim))
        elif spec.shift_mode == "rotation":
            means = base @ _rotation(spec.dim, t * np.pi / (2 * spec.n_tasks), rot_rng).T
        classes = spec.task_classes(t)
        n = spec.task_sizes[t]
        labels = np.array([classes[i % len(classes)] for i in range(n)], dtype=np.int64)
        labels = labels[rng.permutation(n)]
        X = means[labels] + rng.normal(size=(n, spec.dim))
        n_trn = int(round(spec.split[0] * n))
        n_val = int(round(spec.split[1] * n))
        n_trn = min(n_trn, n)
        n_val = min(n_val, n - n_trn)
        split = np.array(["trn"] * n_trn + ["val"] * n_val + ["tst"] * (n - n_trn - n_val))
        noise = np.zeros(n, bool)
        n_flip = int(np.floor(spec.noise_fraction[t] * n_trn))
        if n_flip:
            flip = rng.choice(n_trn, size=n_flip, replace=False)
            pool = classes if len(classes) > 1 else list(range(spec.n_classes))
            for i in np.sort(flip):
                others = [c for c in pool if c != labels[i]]
                labels[i] = others[rng.integers(len(others))]
            noise[flip] = True
        ids = np.arange(next_id, next_id + n)
        next_id += n
        full = Dataset(ids, X, labels, np.full(n, t), noise, split)
        tasks.append(Task(t, full.where(split == "trn"), full.where(split == "val"),
                          full.where(split == "tst"), classes))
    return TaskStream(tasks, spec.dim, spec.n_classes)


def _unit(x):
    return x / np.linalg.norm(x)


def blobs(n, dim, n_classes, separation, seed, noise_fraction=0.0):
    """Single-task convenience wrapper: ``(trn, val, tst)`` of one Gaussian-mixture task."""
    stream = gen_task_stream(StreamSpec(1, dim, n_classes, (n,), separation, "mean_shift",
                                        (noise_fraction,), (0.6, 0.2, 0.2), seed))
    t = stream.tasks[0]
    return t.trn, t.val, t.tst


# --- CSV --------------------------------------------------------------------

def _header(dim):
    return ["id", *[f"f{k}" for k in range(dim)], "label", "task_id", "noise_flag", "split"]


def save_dataset(dataset: Dataset, path):
    """Write ``dataset`` to a path or an open text handle."""
    own = isinstance(path, str) or hasattr(path, "__fspath__")
    f = open(path, "w", newline="", encoding="utf-8") if own else path
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(_header(dataset.dim))
        for i in range(len(dataset)):
            w.writerow([int(dataset.ids[i]), *[format(x, ".17g") for x in dataset.X[i]],
                        int(dataset.y[i]), int(dataset.task_id[i]), int(dataset.noise[i]),
                        dataset.split[i]])
    finally:
        if own:
            f.close()


def save_stream(stream: TaskStream, path):
    save_dataset(stream.all_examples(), path)


def load_dataset(path, n_classes=None) -> Dataset:
    """Parse and validate a dataset CSV; errors name the offending row."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DatasetFormatError(f"{path}: missing header")
    head = rows[0]
    dim = len(head) - 5
    if dim < 1 or head != _header(dim):
        raise DatasetFormatError(f"{path}: malformed header {','.join(head)!r}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise DatasetFormatError("empty dataset")
    ids, X, y, task, noise, split = [], [], [], [], [], []
    seen = set()
    for n, row in enumerate(body, start=2):
        if len(row) != len(head):
            raise DatasetFormatError(f"{path}: row {n} has {len(row)} fields, expected {len(head)}")
        try:
            i = int(row[0])
            feats = [float(x) for x in row[1:1 + dim]]
            label, t, flag = int(row[1 + dim]), int(row[2 + dim]), int(row[3 + dim])
        except ValueError as e:
            raise DatasetFormatError(f"{path}: row {n}: {e}") from None
        if i in seen:
            raise DatasetFormatError(f"{path}: row {n}: duplicate id {i}")
        if label < 0 or (n_classes is not None and label >= n_classes):
            raise DatasetFormatError(f"{path}: row {n}: label {label} outside [0, {n_classes})")
        if flag not in (0, 1):
            raise DatasetFormatError(f"{path}: row {n}: noise_flag must be 0 or 1")
        if row[4 + dim] not in SPLITS:
            raise DatasetFormatError(f"{path}: row {n}: split must be one of {SPLITS}")
        seen.add(i)
        ids.append(i)
        X.append(feats)
        y.append(label)
        task.append(t)
        noise.append(bool(flag))
        split.append(row[4 + dim])
    return Dataset(ids, np.array(X), y, task, noise, split)


def stream_from_dataset(data: Dataset, n_classes=None) -> TaskStream:
    """Regroup a loaded dataset file into per-task splits (tasks in ascending id order)."""
    n_classes = n_classes or int(data.y.max()) + 1
    tasks = []
    for t in np.unique(data.task_id):
        part = data.where(data.task_id == t)
        tasks.append(Task(int(t), part.where(part.split == "trn"), part.where(part.split == "val"),
                          part.where(part.split == "tst"), sorted(set(part.y.tolist()))))
    return TaskStream(tasks, data.dim, n_classes)
