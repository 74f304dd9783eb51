"""Sequential task training with a replay buffer and per-task exemplar selection."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import Dataset
from .datagen import TaskStream
from .influence import HesitConfig, hesit_trace
from .model import evaluate
from .selection import HESIT_MODES, STRATEGIES, SelectionRequest, select
from .train import TrainConfig, TrainingError, train


@dataclass
class CurriculumConfig:
    strategy: str = "hesit"
    k: int = 50
    pool_size: int = 1000
    trace_epochs: int = 5
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10, early_stopping=True))
    order_seed: Optional[int] = None
    repeats: int = 3
    hesit_mode: str = "signed_desc"
    hesit_variant: str = "eq6"
    trace_on: str = "task"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.hesit_mode not in HESIT_MODES:
            raise ValueError(f"unknown hesit mode {self.hesit_mode!r}")
        if self.k < 0 or self.pool_size < self.k:
            raise ValueError("need 0 <= K <= pool_size")
        if self.trace_epochs < 1 or self.repeats < 1:
            raise ValueError("trace_epochs and repeats must be >= 1")

    @property
    def effective_k(self):
        return 0 if self.strategy == "vanilla" else self.k


class ReplayBuffer:
    """Append-only exemplar memory, one list per finished task."""

    def __init__(self):
        self.per_task = []
        self._parts = []

    def add(self, task_id, examples: Dataset):
        self.per_task.append((task_id, [int(i) for i in examples.ids]))
        if len(examples):
            self._parts.append(examples)

    def __len__(self):
        return sum(len(ids) for _, ids in self.per_task)

    def ids(self):
        return [i for _, ids in self.per_task for i in ids]

    def examples(self):
        return Dataset.concat(self._parts) if self._parts else None


@dataclass
class CurriculumReport:
    strategy: str
    repeat: int
    order: list
    A: np.ndarray
    val_loss: list
    final_avg: float
    forgetting: np.ndarray
    task_sec: list
    trace_sec: list
    selections: list
    final_params: np.ndarray = field(repr=False)

    @property
    def mean_forgetting(self):
        return float(np.mean(self.forgetting[:-1])) if len(self.forgetting) > 1 else 0.0

    @property
    def total_sec(self):
        return float(sum(self.task_sec))


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> 1)


def evaluate_all_seen(spec, params, stream: TaskStream, t):
    """Test accuracy on the first ``t`` tasks of ``stream``."""
    return np.array([evaluate(spec, params, stream.tasks[i].tst)[1] for i in range(t)])


def forgetting_stats(A):
    """``(final average accuracy, per-task forgetting)`` from the learning-curve matrix."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        raise ValueError("empty learning-curve matrix")
    T = A.shape[0]
    final = A[T - 1]
    F = np.array([np.nanmax(A[j:, j]) - final[j] for j in range(T)])
    return float(np.mean(final)), F


def task_order(n_tasks, order_seed):
    if order_seed is None:
        return list(range(n_tasks))
    return [int(i) for i in np.random.default_rng(order_seed).permutation(n_tasks)]


def run_curriculum(stream: TaskStream, ccfg: CurriculumConfig, spec, repeat=0, init=None):
    order = task_order(len(stream), ccfg.order_seed)
    stream = stream.reordered(order)
    T = len(stream)
    base_seed = ccfg.train.seed
    params = spec.init(np.random.default_rng(derive_seed(base_seed, repeat))) if init is None else np.array(init)
    buffer = ReplayBuffer()
    A = np.full((T, T), np.nan)
    val_loss, task_sec, trace_sec, selections = [], [], [], []
    k = ccfg.effective_k
    for t, task in enumerate(stream.tasks):
        t0 = time.perf_counter()
        cfg = ccfg.train.replace(seed=derive_seed(base_seed, repeat, t))
        replay = buffer.examples()
        data = task.trn if replay is None else Dataset.concat([task.trn, replay])
        rng = np.random.default_rng(derive_seed(base_seed, repeat, t, 1))
        n_pool = min(ccfg.pool_size, len(task.trn))
        pool = task.trn.subset(np.sort(rng.choice(len(task.trn), size=n_pool, replace=False)))
        traced = 0.0
        records = None
        if ccfg.strategy == "hesit" and k > 0:
            s = time.perf_counter()
            hc = HesitConfig(ccfg.hesit_variant, trace_epochs=ccfg.trace_epochs, traced_ids=list(pool.ids))
            trace_data = task.trn if ccfg.trace_on == "task" else data
            records = hesit_trace(spec, cfg.replace(early_stopping=False), trace_data, task.val, hc, params)
            traced = time.perf_counter() - s
        try:
            res = train(spec, cfg, data, task.val, init=params)
        except TrainingError as e:
            raise TrainingError(f"task {t + 1} (id {task.task_id}): {e}") from e
        params = res.final_params
        kk = min(k, len(pool))
        chosen = select(ccfg.strategy, SelectionRequest(pool, kk, derive_seed(base_seed, repeat, t, 2),
                                                        spec, params, records, ccfg.hesit_mode))
        buffer.add(task.task_id, pool.select_ids(chosen) if chosen else Dataset.empty(stream.dim))
        selections.append((task.task_id, chosen))
        A[t, :t + 1] = evaluate_all_seen(spec, params, stream, t + 1)
        val_loss.append(evaluate(spec, params, task.val)[0])
        task_sec.append(time.perf_counter() - t0)
        trace_sec.append(traced)
    final_avg, F = forgetting_stats(A)
    return CurriculumReport(ccfg.strategy, repeat, order, A, val_loss, final_avg, F, task_sec, trace_sec,
                            selections, params)


def run_repeats(stream, ccfg: CurriculumConfig, spec):
    return [run_curriculum(stream, ccfg, spec, r) for r in range(ccfg.repeats)]


CURVE_COLUMNS = ["strategy", "repeat", "after_task", "eval_task", "accuracy"]
SUMMARY_COLUMNS = ["strategy", "repeat", "final_avg_acc", "mean_forgetting", "total_sec", "trace_sec"]


def curve_rows(report: CurriculumReport):
    T = report.A.shape[0]
    return [[report.strategy, report.repeat, t + 1, j + 1, repr(float(report.A[t, j]))]
            for t in range(T) for j in range(t + 1)]


def summary_row(report: CurriculumReport):
    return [report.strategy, report.repeat, repr(report.final_avg), repr(report.mean_forgetting),
            f"{report.total_sec:.6f}", f"{sum(report.trace_sec):.6f}"]


def write_reports(reports, curve_path, summary_path):
    reports = sorted(reports, key=lambda r: (r.strategy, r.repeat))
    with open(curve_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in reports:
            w.writerows(curve_rows(r))
    with open(summary_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in reports:
            w.writerow(summary_row(r))
