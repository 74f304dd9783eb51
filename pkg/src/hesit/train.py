"""Bit-reproducible seeded SGD with a read-only per-step hook."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .dataset import Dataset
from .model import _check, _reduce_grads, evaluate


class TrainingError(RuntimeError):
    pass


class ReproducibilityError(RuntimeError):
    pass


SCHEDULES = ("constant", "linear_warmup_constant")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 32
    epochs: int = 10
    lr: float = 0.1
    warmup_steps: int = 0
    schedule: str = "constant"
    shuffle: bool = True
    early_stopping: bool = False
    patience: int = 3

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")

    def lr_at(self, step):
        """Learning rate of 1-based optimization step ``step``."""
        if self.schedule == "linear_warmup_constant" and self.warmup_steps > 0:
            return self.lr * min(1.0, step / self.warmup_steps)
        return self.lr

    def replace(self, **kw):
        return replace(self, **kw)


def make_batch_schedule(config: TrainConfig, n, start_epoch=0, epochs=None):
    """Index batches for each epoch: ``[[batch, ...], ...]``.

    Epoch ``e`` shuffles with seed ``config.seed ^ e``, so any epoch can be
    rebuilt on its own.
    """
    if n < 1:
        raise ValueError("dataset must be non-empty")
    epochs = config.epochs if epochs is None else epochs
    out = []
    for e in range(start_epoch, start_epoch + epochs):
        if config.shuffle:
            order = np.random.default_rng(config.seed ^ e).permutation(n)
        else:
            order = np.arange(n)
        out.append([order[i:i + config.batch_size] for i in range(0, n, config.batch_size)])
    return out


@dataclass(frozen=True)
class StepContext:
    """What a hook sees before update ``step`` (1-based).

    ``params`` is theta_{step-1}; arrays are read-only views.
    """

    step: int
    epoch: int
    params: np.ndarray
    batch_indices: np.ndarray
    batch_ids: np.ndarray
    lr: float
    example_grads: np.ndarray
    losses: np.ndarray


Hook = Callable[[StepContext], None]


@dataclass
class TrainRun:
    spec: object
    config: TrainConfig
    train_set: Dataset
    val_set: Optional[Dataset]
    init: np.ndarray
    weights: Optional[np.ndarray] = None
    start_epoch: int = 0
    max_steps: Optional[int] = None


@dataclass
class TrainResult:
    final_params: np.ndarray
    steps_taken: int
    val_history: list
    schedule_digest: int
    trajectory_digest: str
    run: TrainRun = field(repr=False)
    stopped_early: bool = False
    snapshot: Optional[dict] = field(default=None, repr=False)

    @property
    def digest_hex(self):
        return f"{self.schedule_digest:016x}"


def _readonly(a):
    v = a.view()
    v.flags.writeable = False
    return v


def train(spec, config: TrainConfig, train_set: Dataset, val_set: Dataset = None,
          hook: Hook = None, init=None, *, weights=None, start_epoch=0, max_steps=None,
          snapshot_at=None):
    """Plain SGD over the seeded batch schedule.

    ``weights`` scales each training row's loss contribution; ``max_steps``
    truncates the run. ``snapshot_at`` keeps theta and both digests right
    after that step so a shorter replay can be verified against them.
    """
    if not len(train_set):
        raise ValueError("training set is empty")
    if init is None:
        init = spec.init(np.random.default_rng(config.seed))
    params = np.array(init, dtype=np.float64, copy=True)
    _check(spec, params, train_set)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(train_set),):
            raise ValueError("weights must have one entry per training example")
    run = TrainRun(spec, config, train_set, val_set, np.array(init, dtype=np.float64, copy=True),
                   None if weights is None else weights.copy(), start_epoch, max_steps)

    sched_hash = hashlib.blake2b(digest_size=8)
    traj_hash = hashlib.blake2b(digest_size=16)
    traj_hash.update(params.tobytes())
    history = []
    best, bad_epochs = np.inf, 0
    step = 0
    stopped = False
    snapshot = None
    for e_off, batches in enumerate(make_batch_schedule(config, len(train_set), start_epoch)):
        epoch = start_epoch + e_off
        if max_steps is not None and step >= max_steps:
            break
        for idx in batches[:None if max_steps is None else max_steps - step]:
            step += 1
            ids = train_set.ids[idx]
            sched_hash.update(struct.pack("<qq", step, len(ids)))
            sched_hash.update(ids.astype("<i8").tobytes())
            losses, G = spec.example_grads(params, train_set.X[idx], train_set.y[idx])
            if not np.all(np.isfinite(losses)):
                raise TrainingError(f"non-finite loss at step {step} (epoch {epoch})")
            lr = config.lr_at(step)
            if hook is not None:
                hook(StepContext(step, epoch, _readonly(params), _readonly(idx), _readonly(ids), lr,
                                 _readonly(G), _readonly(losses)))
            g = _reduce_grads(spec, params, G, None if weights is None else weights[idx])
            params = params - lr * g
            if not np.all(np.isfinite(params)):
                raise TrainingError(f"non-finite parameters after step {step} (epoch {epoch})")
            traj_hash.update(params.tobytes())
            if step == snapshot_at:
                snapshot = {"step": step, "params": params.copy(),
                            "schedule_digest": int.from_bytes(sched_hash.copy().digest(), "little"),
                            "trajectory_digest": traj_hash.copy().hexdigest()}
        if val_set is None or not len(val_set):
            continue
        vl = evaluate(spec, params, val_set)[0]
        if not np.isfinite(vl):
            raise TrainingError(f"non-finite validation loss after step {step} (epoch {epoch})")
        history.append(vl)
        if config.early_stopping:
            if vl < best:
                best, bad_epochs = vl, 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    stopped = True
                    break
    return TrainResult(params, step, history, int.from_bytes(sched_hash.digest(), "little"),
                       traj_hash.hexdigest(), run, stopped, snapshot)


def rerun(run: TrainRun, hook: Hook = None):
    return train(run.spec, run.config, run.train_set, run.val_set, hook, run.init,
                 weights=run.weights, start_epoch=run.start_epoch, max_steps=run.max_steps)


def retrain_identically(prior: TrainResult, hook: Hook = None):
    """Reset and replay a finished run; fail hard if anything differs."""
    again = rerun(prior.run, hook)
    if again.schedule_digest != prior.schedule_digest:
        raise ReproducibilityError(
            f"batch schedule digest mismatch: {again.digest_hex} != {prior.digest_hex}")
    if again.trajectory_digest != prior.trajectory_digest or not np.array_equal(
            again.final_params, prior.final_params):
        raise ReproducibilityError("parameter trajectory differs between identical runs")
    return again


def replay_prefix(prior: TrainResult, steps, hook: Hook = None):
    """Replay the first ``steps`` updates of a finished run and verify them bitwise.

    ``prior`` must have been trained with ``snapshot_at=steps`` unless
    ``steps`` equals its full length.
    """
    if steps == prior.steps_taken:
        ref = {"schedule_digest": prior.schedule_digest, "trajectory_digest": prior.trajectory_digest,
               "params": prior.final_params}
    elif prior.snapshot is not None and prior.snapshot["step"] == steps:
        ref = prior.snapshot
    else:
        raise ValueError(f"no reference snapshot at step {steps}")
    r = prior.run
    again = train(r.spec, r.config, r.train_set, None, hook, r.init, weights=r.weights,
                  start_epoch=r.start_epoch, max_steps=steps)
    if again.schedule_digest != ref["schedule_digest"]:
        raise ReproducibilityError(f"batch schedule digest mismatch within the first {steps} steps")
    if again.trajectory_digest != ref["trajectory_digest"] or not np.array_equal(
            again.final_params, ref["params"]):
        raise ReproducibilityError(f"parameter trajectory differs within the first {steps} steps")
    return again


class CheckpointRecorder:
    """Hook that keeps ``(params, lr)`` every ``every`` steps, optionally on disk."""

    def __init__(self, every=1, directory=None):
        self.every = every
        self.directory = Path(directory) if directory else None
        self.checkpoints = []

    def __call__(self, ctx: StepContext):
        if ctx.step % self.every:
            return
        self.checkpoints.append((np.array(ctx.params), ctx.lr))
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            save_checkpoint(self.directory / f"step{ctx.step:08d}.ckpt", ctx.params, ctx.step)


def save_checkpoint(path, params, step):
    params = np.asarray(params, dtype="<f8")
    with open(path, "wb") as f:
        f.write(struct.pack("<QQ", params.shape[0], step))
        f.write(params.tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated checkpoint header")
    n, step = struct.unpack_from("<QQ", raw)
    if len(raw) != 16 + 8 * n:
        raise ValueError(f"{path}: expected {n} parameters, file holds {(len(raw) - 16) / 8}")
    return np.frombuffer(raw, dtype="<f8", offset=16).astype(np.float64), step
