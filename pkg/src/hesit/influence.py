"""Training-data influence estimators.

Every method reports scores on one scale: positive means the example lowers
the validation loss (removing it would hurt), matching the leave-one-out
definition ``L_val(without z) - L_val(with z)``.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import Dataset, as_dataset
from .model import NonFiniteError, evaluate, example_grads, grad_example, hvp
from .train import CheckpointRecorder, TrainConfig, replay_prefix, train

log = logging.getLogger(__name__)

METHODS = ("hesit", "tracin", "lissa", "cg", "loo", "eps_fd")
VARIANTS = ("eq6", "algo1_literal")


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class InfluenceRecord:
    example_id: int
    method: str
    raw: float
    normalized: float


def make_records(ids, raw, method):
    raw = np.asarray(raw, dtype=np.float64)
    top = float(np.max(np.abs(raw))) if raw.size else 0.0
    norm = raw / top if top > 0 else np.zeros_like(raw)
    return [InfluenceRecord(int(i), method, float(r), float(n)) for i, r, n in zip(ids, raw, norm)]


def validation_gradient(spec, params, val_set):
    """Gradient of the mean validation loss (no ridge term) at ``params``."""
    G = example_grads(spec, params, val_set)
    v = np.add.reduce(G, axis=0) / G.shape[0]
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("validation gradient is not finite")
    return v


# --- hyper-gradient tracing -------------------------------------------------

@dataclass
class HesitConfig:
    """Tracing setup.

    ``trace_steps`` or ``trace_epochs`` bound the traced window (both unset
    means the whole run); the window is clamped to the steps actually taken.
    ``traced_ids=None`` traces every training example.
    """

    variant: str = "eq6"
    trace_steps: Optional[int] = None
    trace_epochs: Optional[int] = None
    traced_ids: Optional[list] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    def window(self, config: TrainConfig, n):
        steps_per_epoch = -(-n // config.batch_size)
        bounds = [config.epochs * steps_per_epoch]
        if self.trace_steps is not None:
            bounds.append(self.trace_steps)
        if self.trace_epochs is not None:
            bounds.append(self.trace_epochs * steps_per_epoch)
        return min(bounds)


class _Tracer:
    """Step hook holding one scalar accumulator per (traced example, validation vector)."""

    def __init__(self, traced_rows, n_rows, V, window, variant, N):
        self.V = V
        self.window = window
        self.variant = variant
        self.N = N
        self.slot = np.full(n_rows, -1, dtype=np.int64)
        self.slot[traced_rows] = np.arange(len(traced_rows))
        self.acc = np.zeros((len(traced_rows), V.shape[0]))

    def __call__(self, ctx):
        if ctx.step > self.window:
            return
        B = len(ctx.batch_indices)
        slots = self.slot[ctx.batch_indices]
        hit = slots >= 0
        if self.variant == "algo1_literal":
            self.acc *= ctx.lr
        if not hit.any():
            return
        dots = ctx.example_grads[hit] @ self.V.T
        if self.variant == "eq6":
            self.acc[slots[hit]] -= (ctx.lr / B) * dots
        else:
            self.acc[slots[hit]] -= (self.N / B) * dots
        if not np.all(np.isfinite(self.acc)):
            raise NonFiniteError(f"trace accumulator is not finite at step {ctx.step}")


@dataclass
class TraceResult:
    ids: np.ndarray
    scores: np.ndarray  # (n_traced, n_val_sets)
    accumulators: np.ndarray
    window: int
    first_pass: object = field(repr=False)


def trace_influence(spec, config, train_set, val_sets, hcfg: HesitConfig, init=None, first_pass=None):
    """Two-pass Hessian-free hyper-gradient tracing against one or more validation sets.

    Pass 1 (or the supplied ``first_pass``, which must carry a snapshot at the
    window end) is the full training run giving theta_hat. Pass 2 replays only
    the traced window and is verified bit-for-bit against pass 1.
    """
    train_set = as_dataset(train_set)
    if init is None:
        init = spec.init(np.random.default_rng(config.seed))
    ids = train_set.ids if hcfg.traced_ids is None else np.asarray(hcfg.traced_ids, dtype=np.int64)
    if not len(ids):
        raise ValueError("no examples to trace")
    rows = np.array([train_set.index_of(i) for i in ids], dtype=np.int64)
    window = hcfg.window(config, len(train_set))
    if first_pass is None:
        es_val = as_dataset(val_sets[0]) if config.early_stopping else None
        first_pass = train(spec, config, train_set, es_val, init=init, snapshot_at=window)
    window = min(window, first_pass.steps_taken)
    V = np.stack([validation_gradient(spec, first_pass.final_params, as_dataset(v)) for v in val_sets])
    N = len(train_set)
    tracer = _Tracer(rows, N, V, window, hcfg.variant, N)
    replay_prefix(first_pass, window, tracer)
    return TraceResult(ids, -tracer.acc / N, tracer.acc, window, first_pass)


def hesit_trace(spec, config, train_set, val_set, hcfg: HesitConfig = None, init=None):
    """HESIT influence of each traced training example on ``val_set``.

    Pass 1 trains to theta_hat and takes the validation gradient v there;
    pass 2 replays the first R steps bit-identically and accumulates
    v . grad(z_i, theta_{r-1}) whenever z_i is in the batch. The score is
    ``-a_i / N``.
    """
    hcfg = hcfg or HesitConfig()
    res = trace_influence(spec, config, train_set, [val_set], hcfg, init)
    return make_records(res.ids, res.scores[:, 0], "hesit")


# --- oracles ----------------------------------------------------------------

def eps_fd_oracle(spec, config, train_set, val_set, example_id, eps_step=1e-3, init=None,
                  max_steps=None):
    """Central-difference estimate of ``-(1/N) dL_val/d eps`` for one example."""
    if not eps_step > 0:
        raise ValueError("eps_step must be positive")
    train_set = as_dataset(train_set)
    if init is None:
        init = spec.init(np.random.default_rng(config.seed))
    row = train_set.index_of(example_id)
    out = []
    for sign in (1.0, -1.0):
        w = np.ones(len(train_set))
        w[row] += sign * eps_step
        out.append(train(spec, config, train_set, None, init=init, weights=w, max_steps=max_steps))
    plus, minus = out
    if plus.schedule_digest != minus.schedule_digest or plus.steps_taken != minus.steps_taken:
        raise RuntimeError("perturbed runs followed different batch schedules")
    lp = evaluate(spec, plus.final_params, val_set)[0]
    lm = evaluate(spec, minus.final_params, val_set)[0]
    return -(lp - lm) / (2 * eps_step * len(train_set))


def _loo_one(args):
    spec, config, train_set, val_set, init, example_id, base = args
    reduced = train_set.without(example_id)
    if not len(reduced):
        raise ValueError("removing the example leaves an empty training set")
    res = train(spec, config, reduced, val_set if config.early_stopping else None, init=init)
    return evaluate(spec, res.final_params, val_set)[0] - base


def loo_oracle(spec, config, train_set, val_set, ids=None, init=None, jobs=1):
    """Leave-one-out retraining: ``{id: L_val(without id) - L_val(full)}``.

    Every retraining starts from the same init with a schedule rebuilt for N-1.
    """
    train_set = as_dataset(train_set)
    if init is None:
        init = spec.init(np.random.default_rng(config.seed))
    ids = train_set.ids if ids is None else ids
    full = train(spec, config, train_set, val_set if config.early_stopping else None, init=init)
    base = evaluate(spec, full.final_params, val_set)[0]
    tasks = [(spec, config, train_set, val_set, init, int(i), base) for i in ids]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            vals = list(pool.map(_loo_one, tasks))
    else:
        vals = [_loo_one(t) for t in tasks]
    return {int(i): float(v) for i, v in zip(ids, vals)}


# --- checkpoint tracing -----------------------------------------------------

def tracin_score(checkpoints, z, zprime, spec):
    """Checkpoint average of ``lr * grad(z) . grad(z')``."""
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    total = 0.0
    for params, lr in checkpoints:
        total += lr * float(grad_example(spec, params, z) @ grad_example(spec, params, zprime))
    return total / len(checkpoints)


def tracin_influence(spec, checkpoints, train_set, val_set):
    """TracIn of every training example against the mean validation gradient."""
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    out = np.zeros(len(train_set))
    for params, lr in checkpoints:
        out += lr * (example_grads(spec, params, train_set) @ validation_gradient(spec, params, val_set))
    return out / len(checkpoints)


# --- Hessian-involved baselines ---------------------------------------------

def lissa_inverse_hvp(spec, params, train_set, v, depth, repeat, damping=0.0, scale=10.0, seed=0,
                      batch_size=1):
    """Stochastic Neumann-series estimate of ``(H + damping I)^{-1} v``.

    Each iteration uses the HVP on ``batch_size`` examples drawn without
    replacement; ``repeat`` independent recursions are averaged.
    """
    if depth < 1 or repeat < 1:
        raise ValueError("depth and repeat must be >= 1")
    train_set = as_dataset(train_set)
    v = np.asarray(v, dtype=np.float64)
    limit = 1e6 * max(float(np.linalg.norm(v)), np.finfo(float).tiny)
    rng = np.random.default_rng(seed)
    n = len(train_set)
    total = np.zeros_like(v)
    for _ in range(repeat):
        est = v.copy()
        for j in range(depth):
            idx = rng.choice(n, size=min(batch_size, n), replace=False)
            est = v + est - (hvp(spec, params, train_set.subset(idx), est) + damping * est) / scale
            if not np.all(np.isfinite(est)) or np.linalg.norm(est) > limit:
                raise DivergenceError(
                    f"LISSA diverged at iteration {j + 1} (scale={scale}, damping={damping}); "
                    "increase scale or damping")
        total += est / scale
    return total / repeat


def cg_inverse_hvp(spec, params, train_set, v, max_iter=100, tol=1e-10, damping=0.0):
    """Conjugate-gradient solve of ``(H + damping I) x = v`` on the full-batch HVP."""
    train_set = as_dataset(train_set)
    v = np.asarray(v, dtype=np.float64)
    x = np.zeros_like(v)
    r = v.copy()
    p = r.copy()
    rr = float(r @ r)
    stop = (tol * float(np.linalg.norm(v))) ** 2
    for it in range(max_iter):
        if rr <= stop:
            break
        Ap = hvp(spec, params, train_set, p) + damping * p
        curv = float(p @ Ap)
        if curv <= 0:
            log.warning("CG met non-positive curvature at iteration %d; returning current iterate", it)
            break
        alpha = rr / curv
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"CG iterate is not finite at iteration {it + 1}")
    return x


def if_influence(spec, params, inverse_hvp_result, z):
    """Influence-function value ``-(H^{-1} v) . grad(z)``."""
    g = grad_example(spec, params, z)
    if g.shape != np.shape(inverse_hvp_result):
        raise ValueError("inverse HVP does not match the parameter dimension")
    return -float(np.asarray(inverse_hvp_result) @ g)


def if_scores(spec, params, inverse_hvp_result, examples, n_train=None):
    """Leave-one-out-aligned influence-function scores.

    Removing z from N training points shifts the validation loss by about
    ``-if_influence(z) / N``; ``n_train`` defaults to ``len(examples)``.
    """
    G = example_grads(spec, params, examples)
    return (G @ inverse_hvp_result) / (len(examples) if n_train is None else n_train)


# --- one entry point per method ---------------------------------------------

@dataclass
class MethodOptions:
    """Knobs for ``influence_scores``; unused fields are ignored by each method."""

    hesit: HesitConfig = field(default_factory=HesitConfig)
    damping: float = 0.01
    lissa_depth: Optional[int] = None  # default T / 10
    lissa_repeat: int = 10
    lissa_scale: float = 10.0
    lissa_batch: int = 1
    cg_max_iter: Optional[int] = None  # default T
    cg_tol: float = 1e-10
    tracin_every: int = 1
    eps_step: float = 1e-3
    seed: int = 0
    jobs: int = 1


def influence_scores(method, spec, config, train_set, val_set, opts: MethodOptions = None,
                     init=None, ids=None):
    """Records for ``ids`` (default: all of ``train_set``) under ``method``."""
    opts = opts or MethodOptions()
    train_set = as_dataset(train_set)
    if init is None:
        init = spec.init(np.random.default_rng(config.seed))
    ids = train_set.ids if ids is None else np.asarray(ids, dtype=np.int64)
    N = len(train_set)
    if method == "hesit":
        hc = HesitConfig(opts.hesit.variant, opts.hesit.trace_steps, opts.hesit.trace_epochs, list(ids))
        return hesit_trace(spec, config, train_set, val_set, hc, init)
    if method == "loo":
        scores = loo_oracle(spec, config, train_set, val_set, ids, init, jobs=opts.jobs)
        return make_records(ids, [scores[int(i)] for i in ids], method)
    if method == "eps_fd":
        return make_records(ids, [eps_fd_oracle(spec, config, train_set, val_set, i, opts.eps_step, init)
                                  for i in ids], method)
    if method == "tracin":
        rec = CheckpointRecorder(every=opts.tracin_every)
        train(spec, config, train_set, None, rec, init)
        rows = [train_set.index_of(i) for i in ids]
        return make_records(ids, tracin_influence(spec, rec.checkpoints, train_set.subset(rows), val_set), method)
    if method in ("lissa", "cg"):
        theta = train(spec, config, train_set, None, init=init).final_params
        v = validation_gradient(spec, theta, val_set)
        inv = inverse_hvp(method, spec, theta, train_set, v, opts)
        rows = [train_set.index_of(i) for i in ids]
        return make_records(ids, if_scores(spec, theta, inv, train_set.subset(rows), N), method)
    raise ValueError(f"unknown method {method!r}")


def inverse_hvp(method, spec, params, train_set, v, opts: MethodOptions):
    T = len(train_set)
    if method == "lissa":
        depth = opts.lissa_depth or max(1, T // 10)
        return lissa_inverse_hvp(spec, params, train_set, v, depth, opts.lissa_repeat, opts.damping,
                                 opts.lissa_scale, opts.seed, opts.lissa_batch)
    return cg_inverse_hvp(spec, params, train_set, v, opts.cg_max_iter or T, opts.cg_tol, opts.damping)


# --- per-class contributions ------------------------------------------------

def contribution_matrix(groups, train_labels, n_classes):
    """Mean normalized influence of class-a training examples on the class-b validation subset.

    ``groups`` maps validation class b to its list of InfluenceRecord
    (normalized within the group); ``train_labels`` maps example id to class.
    """
    M = np.zeros((n_classes, n_classes))
    for b in range(n_classes):
        recs = groups.get(b)
        if not recs:
            raise ValueError(f"validation class {b} has no records")
        for a in range(n_classes):
            vals = [r.normalized for r in recs if train_labels[r.example_id] == a]
            if not vals:
                raise ValueError(f"training class {a} has no traced examples")
            M[a, b] = float(np.mean(vals))
    return M


def class_contributions(spec, config, train_set, val_set, n_classes, method="hesit",
                        opts: MethodOptions = None, init=None):
    """Full pipeline behind ``contribution_matrix``: one validation subset per class."""
    opts = opts or MethodOptions()
    train_set = as_dataset(train_set)
    val_set = as_dataset(val_set)
    if init is None:
        init = spec.init(np.random.default_rng(config.seed))
    val_parts = [val_set.where(val_set.y == b) for b in range(n_classes)]
    if any(not len(p) for p in val_parts):
        raise ValueError("every class needs validation examples")
    if method == "hesit":
        res = trace_influence(spec, config, train_set, val_parts, opts.hesit, init)
        ids, cols = res.ids, [res.scores[:, b] for b in range(n_classes)]
    elif method in ("lissa", "cg"):
        theta = train(spec, config, train_set, None, init=init).final_params
        ids = train_set.ids
        cols = [if_scores(spec, theta, inverse_hvp(method, spec, theta, train_set,
                                                    validation_gradient(spec, theta, p), opts), train_set)
                for p in val_parts]
    else:
        raise ValueError(f"contribution matrix not supported for {method!r}")
    groups = {b: make_records(ids, cols[b], method) for b in range(n_classes)}
    labels = {int(i): int(train_set.y[train_set.index_of(i)]) for i in ids}
    return contribution_matrix(groups, labels, n_classes)


# --- CSV --------------------------------------------------------------------

INFLUENCE_COLUMNS = ["example_id", "method", "raw_score", "normalized_score", "rank"]


def rank_records(records):
    """Rank within each method: 1 is the highest raw score, ties go to the lower id."""
    order = sorted(records, key=lambda r: (r.method, -r.raw, r.example_id))
    out, rank, prev = [], 0, None
    for r in order:
        rank = rank + 1 if r.method == prev else 1
        prev = r.method
        out.append((r, rank))
    return out


def write_influence_csv(records, fh):
    own = isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__")
    f = open(fh, "w", newline="", encoding="utf-8") if own else fh
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(INFLUENCE_COLUMNS)
        for r, k in rank_records(records):
            w.writerow([r.example_id, r.method, repr(r.raw), repr(r.normalized), k])
    finally:
        if own:
            f.close()


def read_influence_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return _parse_influence(f)


def _parse_influence(f):
    rows = list(csv.reader(f))
    if not rows or rows[0] != INFLUENCE_COLUMNS:
        raise ValueError(f"influence CSV header must be {','.join(INFLUENCE_COLUMNS)}")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(INFLUENCE_COLUMNS):
            raise ValueError(f"row {n}: expected {len(INFLUENCE_COLUMNS)} fields")
        out.append(InfluenceRecord(int(row[0]), row[1], float(row[2]), float(row[3])))
    return out


def influence_csv_text(records):
    buf = io.StringIO()
    write_influence_csv(records, buf)
    return buf.getvalue()
