"""Labeled examples and array-backed datasets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Example:
    id: int
    features: np.ndarray
    label: int
    task_id: int = 0
    noise_flag: bool = False


@dataclass(eq=False)
class Dataset:
    """Column-oriented collection of examples.

    Rows keep their order; ``ids`` must be unique. ``split`` holds one of
    ``trn``/``val``/``tst`` per row (empty string when unknown).
    """

    ids: np.ndarray
    X: np.ndarray
    y: np.ndarray
    task_id: np.ndarray = None
    noise: np.ndarray = None
    split: np.ndarray = None
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X.reshape(len(self.ids), -1)
        self.y = np.asarray(self.y, dtype=np.int64)
        n = len(self.ids)
        self.task_id = np.zeros(n, np.int64) if self.task_id is None else np.asarray(self.task_id, np.int64)
        self.noise = np.zeros(n, bool) if self.noise is None else np.asarray(self.noise, bool)
        self.split = np.full(n, "", dtype="<U3") if self.split is None else np.asarray(self.split, dtype="<U3")
        if not (self.X.shape[0] == len(self.y) == len(self.task_id) == len(self.noise) == len(self.split) == n):
            raise ValueError("dataset columns have different lengths")
        if len(np.unique(self.ids)) != n:
            raise ValueError("duplicate example ids")

    @classmethod
    def from_examples(cls, examples, split=None):
        examples = list(examples)
        if not examples:
            return cls.empty(0)
        return cls(
            ids=[e.id for e in examples],
            X=np.stack([np.asarray(e.features, dtype=np.float64) for e in examples]),
            y=[e.label for e in examples],
            task_id=[e.task_id for e in examples],
            noise=[e.noise_flag for e in examples],
            split=split,
        )

    @classmethod
    def empty(cls, dim):
        return cls(ids=np.zeros(0, np.int64), X=np.zeros((0, dim)), y=np.zeros(0, np.int64))

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.X.shape[1]

    def __getitem__(self, i):
        return Example(int(self.ids[i]), self.X[i].copy(), int(self.y[i]),
                       int(self.task_id[i]), bool(self.noise[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def index_of(self, example_id):
        if self._index is None:
            self._index = {int(k): i for i, k in enumerate(self.ids)}
        try:
            return self._index[int(example_id)]
        except KeyError:
            raise KeyError(f"example id {example_id} not in dataset") from None

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.ids[idx], self.X[idx], self.y[idx], self.task_id[idx],
                       self.noise[idx], self.split[idx])

    def select_ids(self, ids):
        return self.subset([self.index_of(i) for i in ids])

    def without(self, example_id):
        keep = np.flatnonzero(self.ids != example_id)
        return self.subset(keep)

    def where(self, mask):
        return self.subset(np.flatnonzero(mask))

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("nothing to concatenate")
        return Dataset(
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.task_id for p in parts]),
            np.concatenate([p.noise for p in parts]),
            np.concatenate([p.split for p in parts]),
        )

    def equals(self, other):
        return (
            isinstance(other, Dataset)
            and np.array_equal(self.ids, other.ids)
            and self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.task_id, other.task_id)
            and np.array_equal(self.noise, other.noise)
            and np.array_equal(self.split, other.split)
        )


def as_dataset(data):
    """Accept a Dataset, a single Example or a list of Examples."""
    if isinstance(data, Dataset):
        return data
    if isinstance(data, Example):
        return Dataset.from_examples([data])
    return Dataset.from_examples(data)
