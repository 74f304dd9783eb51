"""``hesit`` command line: data generation, influence tracing, selection and CL runs.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .config import SCHEMA, ConfigError, config_digest, load_config, render_defaults
from .curriculum import (CurriculumConfig, derive_seed, run_curriculum, write_reports)
from .datagen import (DatasetFormatError, StreamSpec, gen_task_stream, load_dataset, save_stream,
                      stream_from_dataset)
from .influence import (METHODS, VARIANTS, DivergenceError, HesitConfig, MethodOptions, hesit_trace,
                        influence_scores, read_influence_csv, write_influence_csv)
from .metrics import correlation_summary
from .model import ACTIVATIONS, DimensionError, ModelSpec, NonFiniteError
from .selection import HESIT_MODES, STRATEGIES, SelectionRequest, select, write_selection_csv
from .timing import gradient_time, time_methods, timing_task
from .train import SCHEDULES, ReproducibilityError, TrainConfig, TrainingError, train

log = logging.getLogger("hesit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
# anything else raised while running (bad K, singular data, ...) is a runtime failure too
RUNTIME_ERRORS = (ReproducibilityError, DivergenceError, TrainingError, NonFiniteError,
                  DatasetFormatError, DimensionError, ValueError, RuntimeError, ArithmeticError)

ENUMS = {
    ("stream", "shift_mode"): ("class_split", "mean_shift", "rotation"),
    ("model", "activation"): tuple(ACTIVATIONS),
    ("train", "schedule"): SCHEDULES,
    ("trace", "variant"): VARIANTS,
    ("select", "mode"): HESIT_MODES,
    ("curriculum", "mode"): HESIT_MODES,
    ("curriculum", "variant"): VARIANTS,
    ("curriculum", "strategy"): STRATEGIES,
}
LIST_ENUMS = {
    ("trace", "methods"): METHODS,
    ("select", "strategies"): STRATEGIES,
    ("oracle", "methods"): ("loo", "eps_fd"),
    ("curriculum", "strategies"): STRATEGIES,
    ("timing", "methods"): ("hesit", "lissa", "cg", "tracin"),
}


def validate(cfg):
    """Reject values outside their allowed set, naming the key."""
    for (sec, key), allowed in ENUMS.items():
        if cfg[sec][key] not in allowed:
            raise ConfigError(f"{sec}.{key} = {cfg[sec][key]!r}; expected one of {', '.join(allowed)}")
    for (sec, key), allowed in LIST_ENUMS.items():
        bad = [v for v in cfg[sec][key] if v not in allowed]
        if bad:
            raise ConfigError(f"{sec}.{key}: unknown {', '.join(bad)}; expected any of {', '.join(allowed)}")
    positive = [("train", "batch_size"), ("train", "epochs"), ("select", "k"), ("select", "pool_size"),
                ("curriculum", "pool_size"), ("curriculum", "trace_epochs"), ("curriculum", "repeats"),
                ("trace", "lissa_repeat"), ("trace", "tracin_every"), ("timing", "repeats")]
    for sec, key in positive:
        if cfg[sec][key] < 1:
            raise ConfigError(f"{sec}.{key} must be >= 1")
    for sec, key in [("train", "lr"), ("trace", "lissa_scale"), ("trace", "eps_step")]:
        if not cfg[sec][key] > 0:
            raise ConfigError(f"{sec}.{key} must be positive")
    if cfg["curriculum"]["k"] < 0:
        raise ConfigError("curriculum.k must be >= 0")
    return cfg


# --- config -> objects ------------------------------------------------------

def stream_spec(cfg):
    s = cfg["stream"]
    try:
        return StreamSpec(s["n_tasks"], s["dim"], s["n_classes"], s["task_sizes"], s["separation"],
                          s["shift_mode"], s["noise_fraction"], s["split"], s["seed"])
    except ValueError as e:
        raise ConfigError(f"[stream]: {e}") from None


def load_stream(cfg):
    path = cfg["data"]["path"]
    if not path:
        return gen_task_stream(stream_spec(cfg))
    if not Path(path).is_file():
        raise ConfigError(f"data.path: file not found: {path}")
    data = load_dataset(path, cfg["stream"]["n_classes"])
    return stream_from_dataset(data, cfg["stream"]["n_classes"])


def model_spec(cfg, dim, n_classes):
    m = cfg["model"]
    return ModelSpec(dim, n_classes, m["hidden"], m["activation"], m["l2_lambda"])


def train_config(cfg):
    t = cfg["train"]
    return TrainConfig(t["seed"], t["batch_size"], t["epochs"], t["lr"], t["warmup_steps"], t["schedule"],
                       t["shuffle"], t["early_stopping"], t["patience"])


def method_options(cfg, jobs=1):
    tr = cfg["trace"]
    return MethodOptions(HesitConfig(tr["variant"], trace_epochs=tr["trace_epochs"]), tr["damping"],
                         tr["lissa_depth"], tr["lissa_repeat"], tr["lissa_scale"], tr["lissa_batch"],
                         tr["cg_max_iter"], tr["cg_tol"], tr["tracin_every"], tr["eps_step"],
                         cfg["train"]["seed"], jobs)


def curriculum_config(cfg, strategy):
    c = cfg["curriculum"]
    return CurriculumConfig(strategy, c["k"], c["pool_size"], c["trace_epochs"], train_config(cfg),
                            c["order_seed"], c["repeats"], c["mode"], c["variant"])


def pick_task(cfg, stream):
    t = cfg["data"]["task"]
    if not 0 <= t < len(stream):
        raise ConfigError(f"data.task = {t} but the stream has {len(stream)} tasks")
    return stream.tasks[t]


# --- run context ------------------------------------------------------------

class Run:
    """Output directory, phase timers and manifest bookkeeping for one command."""

    def __init__(self, command, cfg, out, to_stdout):
        self.command = command
        self.cfg = cfg
        self.out = Path(out)
        self.to_stdout = to_stdout
        self.phases = {}
        self.artifacts = {}
        self.extra = {}
        self.out.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0

    def emit(self, name, text, primary=False):
        """Write an artifact; the primary one goes to stdout instead under ``--stdout``."""
        if primary and self.to_stdout:
            sys.stdout.write(text)
        else:
            (self.out / name).write_text(text, encoding="utf-8")
        self.artifacts[name] = hashlib.sha256(text.encode()).hexdigest()

    def manifest(self):
        doc = {
            "command": self.command,
            "config_digest": config_digest(self.cfg),
            "version": __version__,
            "backend": _backend.name,
            "phase_seconds": {k: round(v, 6) for k, v in sorted(self.phases.items())},
            "artifacts": self.artifacts,
            **self.extra,
        }
        (self.out / f"manifest-{self.command}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --- commands ---------------------------------------------------------------

def cmd_gen_data(run: Run, args):
    with run.phase("generate"):
        buf = io.StringIO()
        save_stream(gen_task_stream(stream_spec(run.cfg)), buf)
    run.emit("dataset.csv", buf.getvalue(), primary=True)


def cmd_trace(run: Run, args):
    cfg = run.cfg
    stream = load_stream(cfg)
    task = pick_task(cfg, stream)
    spec = model_spec(cfg, stream.dim, stream.n_classes)
    config = train_config(cfg)
    opts = method_options(cfg, args.jobs)
    records = []
    for m in cfg["trace"]["methods"]:
        with run.phase("trace"):
            records += influence_scores(m, spec, config, task.trn, task.val, opts)
    buf = io.StringIO()
    write_influence_csv(records, buf)
    run.emit("influence.csv", buf.getvalue(), primary=True)


def _sample_pool(task, size, seed):
    rng = np.random.default_rng(seed)
    n = min(size, len(task.trn))
    return task.trn.subset(np.sort(rng.choice(len(task.trn), size=n, replace=False)))


def cmd_select(run: Run, args):
    cfg = run.cfg
    stream = load_stream(cfg)
    task = pick_task(cfg, stream)
    spec = model_spec(cfg, stream.dim, stream.n_classes)
    config = train_config(cfg)
    sel = cfg["select"]
    seed = cfg["train"]["seed"]
    pool = _sample_pool(task, sel["pool_size"], derive_seed(seed, task.task_id, 1))
    k = min(sel["k"], len(pool))
    init = spec.init(np.random.default_rng(seed))
    records = None
    if "hesit" in sel["strategies"]:
        with run.phase("trace"):
            hc = HesitConfig(cfg["trace"]["variant"], trace_epochs=cfg["trace"]["trace_epochs"],
                             traced_ids=list(pool.ids))
            records = hesit_trace(spec, config, task.trn, task.val, hc, init)
    with run.phase("train"):
        params = train(spec, config, task.trn, task.val, init=init).final_params
    rows = []
    with run.phase("select"):
        for s in sel["strategies"]:
            req = SelectionRequest(pool, k, derive_seed(seed, task.task_id, 2), spec, params, records, sel["mode"])
            rows.append((task.task_id, s, select(s, req)))
    buf = io.StringIO()
    write_selection_csv(rows, buf)
    run.emit("selection.csv", buf.getvalue(), primary=True)


CORRELATION_COLUMNS = ["method", "oracle", "n", "spearman", "pearson", "sign_agreement"]


def cmd_oracle(run: Run, args):
    cfg = run.cfg
    against = args.against or cfg["oracle"]["against"]
    if against and not Path(against).is_file():
        raise ConfigError(f"oracle.against: file not found: {against}")
    stream = load_stream(cfg)
    task = pick_task(cfg, stream)
    spec = model_spec(cfg, stream.dim, stream.n_classes)
    config = train_config(cfg)
    opts = method_options(cfg, args.jobs)
    oracle = {}
    for m in cfg["oracle"]["methods"]:
        with run.phase("oracle"):
            oracle[m] = influence_scores(m, spec, config, task.trn, task.val, opts)
    buf = io.StringIO()
    write_influence_csv([r for recs in oracle.values() for r in recs], buf)
    run.emit("oracle.csv", buf.getvalue(), primary=not against)
    if not against:
        return
    try:
        prior = read_influence_csv(against)
    except ValueError as e:
        raise DatasetFormatError(f"{against}: {e}") from None
    rows = []
    for method in sorted({r.method for r in prior}):
        est = {r.example_id: r.raw for r in prior if r.method == method}
        for name, recs in oracle.items():
            s = correlation_summary(est, {r.example_id: r.raw for r in recs})
            rows.append([method, name, s["n"], repr(s["spearman"]), repr(s["pearson"]),
                         repr(s["sign_agreement"])])
    run.emit("correlation.csv", _csv_text(CORRELATION_COLUMNS, rows), primary=True)


def _arm(job):
    stream, ccfg, spec, repeat = job
    return run_curriculum(stream, ccfg, spec, repeat)


def _curriculum_runs(run: Run, strategies, jobs):
    cfg = run.cfg
    stream = load_stream(cfg)
    spec = model_spec(cfg, stream.dim, stream.n_classes)
    arms = [(stream, curriculum_config(cfg, s), spec, r)
            for s in strategies for r in range(cfg["curriculum"]["repeats"])]
    with run.phase("curriculum"):
        if jobs > 1 and len(arms) > 1:
            with ProcessPoolExecutor(jobs) as pool:
                reports = list(pool.map(_arm, arms))
        else:
            reports = [_arm(a) for a in arms]
    run.phases["trace"] = sum(sum(r.trace_sec) for r in reports)
    curve, summary = run.out / "curve.csv", run.out / "summary.csv"
    write_reports(reports, curve, summary)
    for p in (curve, summary):
        run.artifacts[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    if run.to_stdout:
        sys.stdout.write(summary.read_text(encoding="utf-8"))
    return reports


def cmd_run_cl(run: Run, args):
    _curriculum_runs(run, [run.cfg["curriculum"]["strategy"]], args.jobs)


def cmd_compare(run: Run, args):
    _curriculum_runs(run, list(run.cfg["curriculum"]["strategies"]), args.jobs)


TIMING_COLUMNS = ["method", "T", "V", "seconds"]


def cmd_timing(run: Run, args):
    cfg = run.cfg
    tm = cfg["timing"]
    spec = model_spec(cfg, tm["dim"], tm["n_classes"])
    config = train_config(cfg)
    opts = method_options(cfg)
    rows = []
    omega = None
    for T, V in tm["sizes"]:
        trn, val = timing_task(T, V, tm["dim"], tm["n_classes"], cfg["stream"]["seed"])
        with run.phase("timing"):
            timed, base = time_methods(spec, config, trn, val, tm["methods"], opts, repeats=tm["repeats"])
        rows += timed
        omega = gradient_time(spec, trn, base.final_params)
    run.extra["timing"] = [{"method": r.method, "T": r.T, "V": r.V, "seconds": round(r.seconds, 6)}
                           for r in rows]
    run.extra["omega_seconds_per_gradient"] = omega
    text = _csv_text(TIMING_COLUMNS, [[r.method, r.T, r.V, f"{r.seconds:.6f}"] for r in rows])
    run.emit("timing.csv", text, primary=True)


def cmd_config(run: Run, args):
    run.emit("config.ini", render_defaults(), primary=True)


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the task stream and write dataset.csv"),
    "trace": (cmd_trace, "influence scores of data.task (trace.methods) -> influence.csv"),
    "select": (cmd_select, "exemplar selection on data.task (select.strategies) -> selection.csv"),
    "oracle": (cmd_oracle, "LOO / epsilon oracles -> oracle.csv, correlation.csv with --against"),
    "run-cl": (cmd_run_cl, "continual-learning run of curriculum.strategy -> curve.csv, summary.csv"),
    "compare": (cmd_compare, "curriculum.strategies x repeats -> joined curve.csv, summary.csv"),
    "timing": (cmd_timing, "wall time of each influence method per timing.sizes pool -> timing.csv"),
    "config": (cmd_config, "print the documented default config"),
}


def _parse_set(items):
    out = {}
    for item in items:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        sec, key = dotted.strip().split(".", 1)
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown key {dotted.strip()}")
        try:
            out[f"{sec}.{key}"] = SCHEMA[sec][key][0](raw)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value for {sec}.{key}: {e}") from None
    return out


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults: `hesit config`)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="override train.seed")
    common.add_argument("--stdout", action="store_true", help="write the main CSV to stdout")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (loo, compare)")
    common.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="hesit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hesit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_)
        if name == "oracle":
            sp.add_argument("--against", help="influence CSV to correlate with the oracle")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        overrides = _parse_set(args.set)
        if args.seed is not None:
            overrides["train.seed"] = args.seed
        cfg = validate(load_config(args.config, overrides))
        run = Run(args.command, cfg, args.out, args.stdout)
        COMMANDS[args.command][0](run, args)
        run.manifest()
    except ConfigError as e:
        print(f"hesit: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RUNTIME_ERRORS as e:
        print(f"hesit: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
