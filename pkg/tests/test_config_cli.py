import csv
import json
import subprocess
import sys

import pytest

from hesit.cli import main
from hesit.config import ConfigError, config_digest, defaults, load_config, render_defaults

N8_INI = """
[stream]
n_tasks = 1
dim = 2
n_classes = 2
task_sizes = 16
separation = 2.0
shift_mode = mean_shift
split = 0.5, 0.5, 0.0
[model]
hidden =
activation = identity
l2_lambda = 0.1
[train]
batch_size = 8
epochs = 10
lr = 0.05
warmup_steps = 0
schedule = constant
early_stopping = false
[trace]
methods = hesit
trace_epochs =
"""

SMALL_CL = """
[stream]
n_tasks = 3
dim = 3
n_classes = 6
task_sizes = 60
[model]
hidden =
activation = identity
[train]
epochs = 2
[curriculum]
k = 4
pool_size = 20
trace_epochs = 1
"""


@pytest.fixture
def ini(tmp_path):
    def make(text, name="c.ini"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return make


def test_defaults_roundtrip(ini):
    cfg = load_config(ini(render_defaults()))
    assert cfg == defaults()
    assert config_digest(cfg) == config_digest(defaults())
    assert cfg["select"]["k"] == 50 and cfg["curriculum"]["pool_size"] == 1000
    assert cfg["curriculum"]["trace_epochs"] == 5 and cfg["train"]["epochs"] == 10


def test_digest_tracks_meaning_only(ini):
    a = load_config(ini("[train]\nlr = 0.1\n", "a.ini"))
    b = load_config(ini("; a comment\n[train]\nlr   =   0.10  ; same value\n", "b.ini"))
    c = load_config(ini("[train]\nlr = 0.2\n", "c.ini"))
    assert config_digest(a) == config_digest(b) != config_digest(c)


@pytest.mark.parametrize("text,match", [("[nope]\nx = 1\n", r"\[nope\]"), ("[train]\nlr2 = 1\n", "train.lr2"),
                                        ("[train]\nepochs = many\n", "train.epochs")])
def test_config_errors(ini, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(ini(text))
    with pytest.raises(ConfigError):
        load_config("/does/not/exist.ini")


def test_exit_code_config_errors(ini, tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["trace", "--out", out, "--set", "train.schedule=cosine"]) == 2
    assert "train.schedule" in capsys.readouterr().err
    assert main(["trace", "--out", out, "--set", "trace.methods=hesit,magic"]) == 2
    assert "trace.methods" in capsys.readouterr().err
    assert main(["trace", "--out", out, "--set", "model.depth=3"]) == 2
    assert main(["trace", "--out", out, "--config", ini("[data]\npath = /missing.csv\n")]) == 2
    assert "data.path" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 2


def test_exit_code_runtime_failure(ini, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,f0,f1,label,task_id,noise_flag,split\n")
    cfg = ini(N8_INI + f"\n[data]\npath = {bad}\n")
    assert main(["trace", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "empty dataset" in capsys.readouterr().err
    diverge = ini(N8_INI.replace("methods = hesit", "methods = lissa\nlissa_scale = 0.01\nlissa_depth = 50"), "d.ini")
    assert main(["trace", "--config", diverge, "--out", str(tmp_path / "o")]) == 3
    assert "DivergenceError" in capsys.readouterr().err


def test_trace_then_oracle_against(ini, tmp_path, capsys):
    cfg, out = ini(N8_INI), tmp_path / "o"
    assert main(["trace", "--config", cfg, "--out", str(out)]) == 0
    assert main(["oracle", "--config", cfg, "--out", str(out), "--against", str(out / "influence.csv"),
                 "--stdout"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert rows[0]["method"] == "hesit" and rows[0]["oracle"] == "loo"
    assert float(rows[0]["spearman"]) >= 0.9
    manifest = json.loads((out / "manifest-oracle.json").read_text())
    assert set(manifest) >= {"config_digest", "version", "backend", "phase_seconds", "artifacts"}
    assert "oracle.csv" in manifest["artifacts"]


def test_stdout_carries_only_data(ini, tmp_path, capsys):
    assert main(["gen-data", "--config", ini(N8_INI), "--out", str(tmp_path), "--stdout"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("id,f0,f1,label,task_id,noise_flag,split\n")
    assert not (tmp_path / "dataset.csv").exists()


def test_gen_data_idempotent_and_reloadable(ini, tmp_path):
    cfg = ini(SMALL_CL)
    for d in ("a", "b"):
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    a, b = (tmp_path / "a" / "dataset.csv").read_bytes(), (tmp_path / "b" / "dataset.csv").read_bytes()
    assert a == b
    reuse = ini(SMALL_CL + f"\n[data]\npath = {tmp_path / 'a' / 'dataset.csv'}\ntask = 1\n", "r.ini")
    assert main(["select", "--config", reuse, "--out", str(tmp_path / "s"), "--set", "select.k=3",
                 "--set", "select.pool_size=10"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "s" / "selection.csv")))
    assert {r["strategy"] for r in rows} == {"random", "uniform", "gss", "loss", "hesit"}
    assert {r["task_id"] for r in rows} == {"1"} and len(rows) == 15


def test_compare_grid_parallel(ini, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", ini(SMALL_CL), "--out", str(out), "--jobs", "2"]) == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 9
    assert sorted({(r["strategy"], r["repeat"]) for r in rows}) == \
        [(s, str(r)) for s in ("hesit", "random", "vanilla") for r in range(3)]
    serial = tmp_path / "serial"
    assert main(["compare", "--config", ini(SMALL_CL), "--out", str(serial)]) == 0
    assert (out / "curve.csv").read_bytes() == (serial / "curve.csv").read_bytes()


def test_run_cl_and_seed_override(ini, tmp_path):
    cfg = ini(SMALL_CL)
    assert main(["run-cl", "--config", cfg, "--out", str(tmp_path / "a"), "--set", "curriculum.repeats=1"]) == 0
    assert main(["run-cl", "--config", cfg, "--out", str(tmp_path / "b"), "--set", "curriculum.repeats=1",
                 "--seed", "9"]) == 0
    ma = json.loads((tmp_path / "a" / "manifest-run-cl.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest-run-cl.json").read_text())
    assert ma["config_digest"] != mb["config_digest"]
    assert (tmp_path / "a" / "curve.csv").exists()


def test_timing_rows(tmp_path):
    out = tmp_path / "t"
    assert main(["timing", "--out", str(out), "--set", "timing.sizes=60:10", "--set", "timing.repeats=1"]) == 0
    m = json.loads((out / "manifest-timing.json").read_text())
    assert [r["method"] for r in m["timing"]] == ["hesit", "lissa", "cg", "tracin"]
    assert m["omega_seconds_per_gradient"] > 0


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hesit.cli", "config", "--stdout", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "[curriculum]" in r.stdout
