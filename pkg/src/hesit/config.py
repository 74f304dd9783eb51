"""INI experiment configuration with typed, documented defaults.

Every key is listed in ``SCHEMA`` as ``(type, default, help)``. Unknown
sections or keys are errors so typos never pass silently.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from pathlib import Path


class ConfigError(ValueError):
    pass


def _opt_int(s):
    return None if s.strip() in ("", "none") else int(s)


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _words(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _pairs(s):
    out = []
    for part in _words(s):
        t, v = part.split(":")
        out.append((int(t), int(v)))
    return tuple(out)


def _str(s):
    return s.strip()


SCHEMA = {
    "data": {
        "path": (_str, "", "dataset CSV written by gen-data; empty generates from [stream]"),
        "task": (int, 0, "task index used by trace / select / oracle"),
    },
    "stream": {
        "n_tasks": (int, 5, "number of tasks"),
        "dim": (int, 5, "feature dimension"),
        "n_classes": (int, 10, "shared label space size"),
        "task_sizes": (_ints, (300,), "examples per task (one value or one per task)"),
        "separation": (float, 4.0, "minimum distance between class means"),
        "shift_mode": (_str, "class_split", "class_split | mean_shift | rotation"),
        "noise_fraction": (_floats, (0.0,), "fraction of flipped training labels per task"),
        "split": (_floats, (0.6, 0.2, 0.2), "trn / val / tst ratios"),
        "seed": (int, 0, "master seed of the generator"),
    },
    "model": {
        "hidden": (_ints, (32,), "hidden widths; empty for logistic regression"),
        "activation": (_str, "relu", "identity | relu | tanh"),
        "l2_lambda": (float, 1e-3, "ridge coefficient of the batch loss"),
    },
    "train": {
        "seed": (int, 0, "training seed (init and batch shuffles)"),
        "batch_size": (int, 16, "minibatch size B"),
        "epochs": (int, 10, "epochs per task"),
        "lr": (float, 0.1, "base learning rate"),
        "warmup_steps": (int, 10, "linear warm-up length in steps"),
        "schedule": (_str, "linear_warmup_constant", "constant | linear_warmup_constant"),
        "shuffle": (_bool, True, "reshuffle every epoch"),
        "early_stopping": (_bool, True, "stop when validation loss stalls"),
        "patience": (int, 3, "epochs without improvement before stopping"),
    },
    "trace": {
        "methods": (_words, ("hesit",), "any of hesit, tracin, lissa, cg, loo, eps_fd"),
        "variant": (_str, "eq6", "eq6 | algo1_literal"),
        "trace_epochs": (_opt_int, 5, "traced epochs; empty traces the whole run"),
        "damping": (float, 0.01, "damping added to the Hessian by lissa / cg"),
        "lissa_depth": (_opt_int, None, "LISSA recursion depth; empty means T/10"),
        "lissa_repeat": (int, 10, "independent LISSA recursions"),
        "lissa_scale": (float, 10.0, "LISSA scale"),
        "lissa_batch": (int, 1, "examples per LISSA Hessian sample"),
        "cg_max_iter": (_opt_int, None, "CG iteration cap; empty means T"),
        "cg_tol": (float, 1e-10, "CG relative residual tolerance"),
        "tracin_every": (int, 1, "TracIn checkpoint spacing in steps"),
        "eps_step": (float, 1e-3, "perturbation of the epsilon oracle"),
    },
    "select": {
        "strategies": (_words, ("random", "uniform", "gss", "loss", "hesit"), "selection policies"),
        "k": (int, 50, "exemplars per task"),
        "pool_size": (int, 1000, "traced pool size per task"),
        "mode": (_str, "signed_desc", "signed_desc | magnitude_desc"),
    },
    "oracle": {
        "methods": (_words, ("loo",), "loo and/or eps_fd"),
        "against": (_str, "", "influence CSV to correlate against (or --against)"),
    },
    "curriculum": {
        "strategy": (_str, "hesit", "strategy used by run-cl"),
        "strategies": (_words, ("vanilla", "random", "hesit"), "strategies used by compare"),
        "k": (int, 50, "exemplars per task"),
        "pool_size": (int, 1000, "traced pool size per task"),
        "trace_epochs": (int, 5, "traced epochs per task"),
        "repeats": (int, 3, "repeats per strategy"),
        "order_seed": (_opt_int, None, "task-order permutation seed; empty keeps file order"),
        "mode": (_str, "signed_desc", "HESIT selection mode"),
        "variant": (_str, "eq6", "HESIT trace variant"),
    },
    "timing": {
        "sizes": (_pairs, ((100, 10), (1000, 100)), "T:V pool sizes"),
        "dim": (int, 10, "feature dimension of the timing task"),
        "n_classes": (int, 10, "classes of the timing task"),
        "methods": (_words, ("hesit", "lissa", "cg", "tracin"), "timed methods"),
        "repeats": (int, 3, "timing repeats per method; the fastest is reported"),
    },
}


def defaults():
    return {sec: {k: v[1] for k, v in keys.items()} for sec, keys in SCHEMA.items()}


def load_config(path=None, overrides=None):
    cfg = defaults()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        try:
            parser.read(p, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {sec}.{key}")
                conv = SCHEMA[sec][key][0]
                try:
                    cfg[sec][key] = conv(raw)
                except (ValueError, TypeError) as e:
                    raise ConfigError(f"bad value for {sec}.{key}: {e}") from None
    for dotted, value in (overrides or {}).items():
        sec, key = dotted.split(".")
        cfg[sec][key] = value
    return cfg


def config_digest(cfg):
    """Hash of the resolved values; comments and formatting do not count."""
    blob = json.dumps(cfg, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def render_defaults():
    """Default config as INI text with every key documented."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (_, default, doc) in keys.items():
            lines.append(f"; {doc}")
            lines.append(f"{key} = {_fmt(default)}")
        lines.append("")
    return "\n".join(lines)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(f"{x[0]}:{x[1]}" if isinstance(x, tuple) else str(x) for x in v)
    return str(v)
