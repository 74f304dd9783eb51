import csv

import numpy as np
import pytest

from hesit import curriculum
from hesit.curriculum import (CurriculumConfig, ReplayBuffer, evaluate_all_seen, forgetting_stats,
                              run_curriculum, run_repeats, task_order, write_reports)
from hesit.dataset import Dataset
from hesit.datagen import StreamSpec, gen_task_stream
from hesit.model import ModelSpec
from hesit.train import TrainConfig

TC = TrainConfig(batch_size=16, epochs=3, lr=0.1)


@pytest.fixture(scope="module")
def stream():
    return gen_task_stream(StreamSpec(3, 3, 6, (90,), 4.0, "class_split", (0.0,), (0.6, 0.2, 0.2), 0))


@pytest.fixture(scope="module")
def spec():
    return ModelSpec(3, 6, (), l2_lambda=1e-3)


def cc(strategy, k=5, **kw):
    return CurriculumConfig(strategy, k, 1000, 2, kw.pop("train", TC), **kw)


def test_forgetting_stats_examples():
    assert np.all(forgetting_stats(np.full((3, 3), 0.7))[1] == 0)
    A = np.array([[0.9, np.nan], [0.4, 0.8]])
    avg, F = forgetting_stats(A)
    assert F[0] == pytest.approx(0.5) and avg == pytest.approx(0.6)
    mono = np.array([[0.5, np.nan, np.nan], [0.6, 0.7, np.nan], [0.9, 0.8, 0.9]])
    assert np.all(forgetting_stats(mono)[1] == 0)
    with pytest.raises(ValueError):
        forgetting_stats(np.zeros((0, 0)))


def test_single_task_degenerates(spec):
    one = gen_task_stream(StreamSpec(1, 3, 6, (90,), 4.0, "class_split", (0.0,), (0.6, 0.2, 0.2), 1))
    rep = run_curriculum(one, cc("random", 4), spec)
    assert rep.A.shape == (1, 1)
    assert len(rep.selections[0][1]) == 4


def test_vanilla_forgets(stream, spec):
    rep = run_curriculum(stream, cc("vanilla", 0, train=TrainConfig(batch_size=16, epochs=10)), spec)
    assert rep.forgetting[0] > 0.3
    assert np.all(rep.forgetting >= 0)
    assert np.all((rep.A[np.tril_indices(3)] >= 0) & (rep.A[np.tril_indices(3)] <= 1))


def test_evaluate_all_seen(stream, spec):
    assert len(evaluate_all_seen(spec, np.zeros(spec.n_params), stream, 0)) == 0
    rep = run_curriculum(stream, cc("random"), spec)
    np.testing.assert_array_equal(evaluate_all_seen(spec, rep.final_params, stream, 3), rep.A[2])


def test_perfect_model_scores_one():
    spec = ModelSpec(1, 2)
    tiny = gen_task_stream(StreamSpec(2, 1, 2, (20,), 30.0, "mean_shift", (0.0,), (0.5, 0.25, 0.25), 0))
    X = np.concatenate([t.tst.X for t in tiny.tasks])
    y = np.concatenate([t.tst.y for t in tiny.tasks])
    lo, hi = (0, 1) if X[y == 0].mean() < X[y == 1].mean() else (1, 0)
    assert X[y == lo].max() < X[y == hi].min()
    mid = (X[y == lo].max() + X[y == hi].min()) / 2
    # logit gap 20 (x - mid) in favour of the upper class
    w = np.array([-10.0, 10.0]) if hi == 1 else np.array([10.0, -10.0])
    p = np.concatenate([w, -w * mid])
    assert np.all(evaluate_all_seen(spec, p, tiny, 2) == 1.0)


@pytest.mark.parametrize("strategy", ["random", "uniform", "reservoir", "gss", "loss", "hesit"])
def test_buffer_growth_and_zero_k_equivalence(stream, spec, strategy):
    rep = run_curriculum(stream, cc(strategy, 5), spec)
    assert [len(ids) for _, ids in rep.selections] == [5, 5, 5]
    vanilla = run_curriculum(stream, cc("vanilla", 0), spec)
    zero = run_curriculum(stream, cc(strategy, 0), spec)
    assert np.array_equal(zero.final_params, vanilla.final_params)
    assert np.array_equal(zero.A, vanilla.A, equal_nan=True)


def test_reproducible(stream, spec):
    a, b = run_curriculum(stream, cc("hesit"), spec), run_curriculum(stream, cc("hesit"), spec)
    assert np.array_equal(a.A, b.A, equal_nan=True) and a.selections == b.selections
    assert sum(a.trace_sec) > 0


def test_replay_exemplars_are_trained_on(stream, spec, monkeypatch):
    seen = []
    real_train = curriculum.train

    def spy(spec_, cfg, data, *args, **kw):
        seen.append(set(data.ids.tolist()))
        return real_train(spec_, cfg, data, *args, **kw)

    monkeypatch.setattr(curriculum, "train", spy)
    rep = run_curriculum(stream, cc("random", 5), spec)
    buffer = set()
    for t, (_, ids) in enumerate(rep.selections):
        assert buffer <= seen[t]
        buffer |= set(ids)


def test_task_order_and_repeats(stream, spec):
    assert task_order(3, None) == [0, 1, 2]
    assert sorted(task_order(3, 5)) == [0, 1, 2]
    reps = run_repeats(stream, cc("random", repeats=2, order_seed=5), spec)
    assert [r.repeat for r in reps] == [0, 1]
    assert reps[0].order == task_order(3, 5)
    assert not np.array_equal(reps[0].final_params, reps[1].final_params)


def test_config_validation():
    with pytest.raises(ValueError):
        CurriculumConfig("ewc")
    with pytest.raises(ValueError):
        CurriculumConfig("random", k=10, pool_size=5)
    assert CurriculumConfig("vanilla", k=50).effective_k == 0


def test_replay_buffer():
    buf = ReplayBuffer()
    assert buf.examples() is None
    buf.add(0, Dataset([1, 2], np.zeros((2, 2)), [0, 1]))
    buf.add(1, Dataset.empty(2))
    assert len(buf) == 2 and buf.ids() == [1, 2]
    assert buf.per_task[1] == (1, [])


def test_report_csvs(stream, spec, tmp_path):
    reps = [run_curriculum(stream, cc(s), spec) for s in ("random", "vanilla")]
    write_reports(reps, tmp_path / "curve.csv", tmp_path / "summary.csv")
    curve = list(csv.reader(open(tmp_path / "curve.csv")))
    assert curve[0] == ["strategy", "repeat", "after_task", "eval_task", "accuracy"]
    assert len(curve) == 1 + 2 * 6
    assert curve[1][:4] == ["random", "0", "1", "1"]
    summary = list(csv.reader(open(tmp_path / "summary.csv")))
    assert summary[0] == ["strategy", "repeat", "final_avg_acc", "mean_forgetting", "total_sec", "trace_sec"]
    assert [r[0] for r in summary[1:]] == ["random", "vanilla"]
