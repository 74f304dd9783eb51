"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--reps 20]

Times per-example gradients at a few batch/model sizes and one short
training run, then prints the speedup of each backend over the numpy one.
"""
import argparse
import time

import numpy as np

from hesit import _backend
from hesit.datagen import blobs
from hesit.model import ModelSpec
from hesit.train import TrainConfig, train

CASES = [
    # (batch, dim, classes, hidden)
    (1, 10, 10, ()),
    (16, 10, 10, ()),
    (16, 10, 10, (32,)),
    (256, 10, 10, (32,)),
    (16, 50, 10, (64, 64)),
]


def best_of(fn, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(reps):
    rows = []
    for B, d, C, hidden in CASES:
        spec = ModelSpec(d, C, hidden, "relu", 1e-3)
        rng = np.random.default_rng(0)
        p = spec.init(rng)
        X, y = rng.normal(size=(B, d)), rng.integers(C, size=B)
        t = {}
        for name in _backend.available():
            _backend.use(name)
            t[name] = best_of(lambda: spec.example_grads(p, X, y), reps)
        rows.append((f"example_grads B={B} d={d} C={C} hidden={hidden}", t))
    trn, _, _ = blobs(1000, 10, 10, 3.0, 0)
    spec = ModelSpec(10, 10, (32,), "relu", 1e-3)
    cfg = TrainConfig(batch_size=16, epochs=5)
    t = {}
    for name in _backend.available():
        _backend.use(name)
        t[name] = best_of(lambda: train(spec, cfg, trn), max(1, reps // 10))
    rows.append(("train 5 epochs, 600 examples, B=16, hidden=(32,)", t))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()
    start = _backend.name
    try:
        rows = bench(args.reps)
    finally:
        _backend.use(start)
    names = _backend.available()
    print(f"{'case':58s}" + "".join(f"{n:>12s}" for n in names) + "   speedup")
    for label, t in rows:
        line = f"{label:58s}" + "".join(f"{t[n] * 1e6:10.1f}us" for n in names)
        if "cython" in t:
            line += f"   {t['python'] / t['cython']:6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
