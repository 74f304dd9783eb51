"""Exemplar selection policies: K ids out of a candidate pool.

All ties break toward the lower example id.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import Dataset
from .model import example_grads

STRATEGIES = ("vanilla", "random", "uniform", "reservoir", "gss", "loss", "hesit")
HESIT_MODES = ("signed_desc", "magnitude_desc")


@dataclass
class SelectionRequest:
    candidates: Dataset
    k: int
    seed: int = 0
    spec: object = None
    params: Optional[np.ndarray] = None
    records: Optional[list] = None
    mode: str = "signed_desc"

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("K must be non-negative")
        if self.k > len(self.candidates):
            raise ValueError(f"K={self.k} exceeds the pool of {len(self.candidates)} candidates")


def _top_k(ids, key, k):
    """Ids of the k largest ``key`` values, lower id first on ties."""
    order = np.lexsort((ids, -key))
    return [int(i) for i in ids[order[:k]]]


def select_random(req: SelectionRequest):
    rng = np.random.default_rng(req.seed)
    return [int(i) for i in rng.choice(req.candidates.ids, size=req.k, replace=False)]


def select_uniform_by_label(req: SelectionRequest):
    """Round-robin over labels in ascending order, one random unpicked member per visit."""
    rng = np.random.default_rng(req.seed)
    cand = req.candidates
    queues = {int(c): list(rng.permutation(cand.ids[cand.y == c])) for c in np.unique(cand.y)}
    out = []
    while len(out) < req.k:
        for c in sorted(queues):
            if queues[c] and len(out) < req.k:
                out.append(int(queues[c].pop(0)))
    return out


def select_reservoir(stream, k, seed=0):
    """Classic reservoir sampling over an iterable of examples (or ids)."""
    rng = np.random.default_rng(seed)
    buf = []
    for n, item in enumerate(stream, start=1):
        item_id = int(getattr(item, "id", item))
        if n <= k:
            buf.append(item_id)
        else:
            j = int(rng.integers(n))
            if j < k:
                buf[j] = item_id
    return buf


def gss_from_gradients(ids, grads, k):
    """Greedy gradient dispersion: largest-norm first, then min of max cosine similarity."""
    ids = np.asarray(ids, dtype=np.int64)
    grads = np.asarray(grads, dtype=np.float64)
    if k == 0:
        return []
    norms = np.linalg.norm(grads, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = grads / safe[:, None]
    # zero-gradient candidates get cosine 0 against everything
    unit[norms == 0] = 0.0
    first = np.lexsort((ids, -norms))[0]
    chosen = [first]
    max_sim = unit @ unit[first]
    taken = np.zeros(len(ids), bool)
    taken[first] = True
    while len(chosen) < k:
        key = np.where(taken, np.inf, max_sim)
        nxt = np.lexsort((ids, key))[0]
        chosen.append(nxt)
        taken[nxt] = True
        max_sim = np.maximum(max_sim, unit @ unit[nxt])
    return [int(ids[i]) for i in chosen]


def select_gss(req: SelectionRequest):
    if req.spec is None or req.params is None:
        raise ValueError("GSS needs trained parameters")
    G = example_grads(req.spec, req.params, req.candidates)
    return gss_from_gradients(req.candidates.ids, G, req.k)


def select_loss_based(req: SelectionRequest):
    """K lowest-loss candidates at the trained parameters."""
    if req.spec is None or req.params is None:
        raise ValueError("loss-based selection needs trained parameters")
    c = req.candidates
    losses = req.spec.example_losses(req.params, c.X, c.y)
    return _top_k(c.ids, -losses, req.k)


def scores_top_k(ids, raw, k, mode="signed_desc"):
    if mode not in HESIT_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    raw = np.asarray(raw, dtype=np.float64)
    return _top_k(np.asarray(ids, dtype=np.int64), raw if mode == "signed_desc" else np.abs(raw), k)


def select_hesit(req: SelectionRequest):
    if req.records is None:
        raise ValueError("HESIT selection needs influence records")
    by_id = {r.example_id: r.raw for r in req.records}
    missing = [int(i) for i in req.candidates.ids if int(i) not in by_id]
    if missing:
        raise ValueError(f"no influence record for candidates {missing[:5]}")
    ids = req.candidates.ids
    return scores_top_k(ids, [by_id[int(i)] for i in ids], req.k, req.mode)


def select(strategy, req: SelectionRequest):
    if strategy == "vanilla" or req.k == 0:
        return []
    if strategy == "random":
        return select_random(req)
    if strategy == "uniform":
        return select_uniform_by_label(req)
    if strategy == "reservoir":
        return select_reservoir(req.candidates, req.k, req.seed)
    if strategy == "gss":
        return select_gss(req)
    if strategy == "loss":
        return select_loss_based(req)
    if strategy == "hesit":
        return select_hesit(req)
    raise ValueError(f"unknown strategy {strategy!r}")


SELECTION_COLUMNS = ["task_id", "strategy", "example_id", "rank"]


def write_selection_csv(rows, fh):
    """``rows``: iterable of (task_id, strategy, [ids in rank order])."""
    own = isinstance(fh, str) or hasattr(fh, "__fspath__")
    f = open(fh, "w", newline="", encoding="utf-8") if own else fh
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SELECTION_COLUMNS)
        for task_id, strategy, ids in rows:
            for rank, i in enumerate(ids, start=1):
                w.writerow([task_id, strategy, i, rank])
    finally:
        if own:
            f.close()
