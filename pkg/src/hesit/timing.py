"""Wall-clock comparison of the influence estimators.

Every method starts from the same trained model theta_hat, whose training
run is shared and not timed. A method's time covers the work it adds on
top: the validation gradient, HESIT's replay of the traced window, any
inverse-HVP solve, and scoring all T examples.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .datagen import StreamSpec, gen_task_stream
from .influence import (HesitConfig, MethodOptions, if_scores, inverse_hvp, trace_influence,
                        tracin_influence, validation_gradient)
from .train import CheckpointRecorder, train


@dataclass(frozen=True)
class TimingRow:
    method: str
    T: int
    V: int
    seconds: float


def timing_task(T, V, dim, n_classes, seed=0, separation=3.0):
    spec = StreamSpec(1, dim, n_classes, (T + V,), separation, "mean_shift", (0.0,),
                      (T / (T + V), V / (T + V), 0.0), seed)
    task = gen_task_stream(spec).tasks[0]
    return task.trn, task.val


def _run(method, spec, trn, val, opts, base, checkpoints):
    if method == "hesit":
        trace_influence(spec, base.run.config, trn, [val], opts.hesit, first_pass=base)
    elif method == "tracin":
        tracin_influence(spec, checkpoints, trn, val)
    else:
        theta = base.final_params
        v = validation_gradient(spec, theta, val)
        if_scores(spec, theta, inverse_hvp(method, spec, theta, trn, v, opts), trn)


def time_methods(spec, config, trn, val, methods, opts: MethodOptions = None, repeats=1):
    """Best-of-``repeats`` seconds per method on one (T, V) pool."""
    opts = opts or MethodOptions(hesit=HesitConfig(trace_epochs=5))
    config = config.replace(early_stopping=False)
    rec = CheckpointRecorder(every=opts.tracin_every)
    window = opts.hesit.window(config, len(trn))
    base = train(spec, config, trn, None, rec, snapshot_at=window)
    rows = []
    for m in methods:
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            _run(m, spec, trn, val, opts, base, rec.checkpoints)
            best = min(best, time.perf_counter() - t0)
        rows.append(TimingRow(m, len(trn), len(val), best))
    return rows, base


def gradient_time(spec, data, params=None, reps=5):
    """Mean seconds per example gradient (the per-gradient cost of tracing)."""
    params = spec.init(np.random.default_rng(0)) if params is None else params
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        spec.example_grads(params, data.X, data.y)
        best = min(best, time.perf_counter() - t0)
    return best / len(data)
