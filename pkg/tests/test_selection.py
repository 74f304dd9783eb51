import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hesit.dataset import Dataset
from hesit.datagen import blobs
from hesit.influence import HesitConfig, hesit_trace, make_records
from hesit.model import ModelSpec
from hesit.selection import (STRATEGIES, SelectionRequest, gss_from_gradients, scores_top_k, select,
                             select_gss, select_hesit, select_loss_based, select_random,
                             select_reservoir, select_uniform_by_label, write_selection_csv)
from hesit.train import TrainConfig, train


def pool(n=10, labels=None):
    labels = np.arange(n) % 2 if labels is None else labels
    return Dataset(np.arange(100, 100 + n), np.zeros((n, 2)), labels)


def test_random_exhaustive_and_deterministic():
    p = pool()
    assert sorted(select_random(SelectionRequest(p, 10, 1))) == list(p.ids)
    assert select_random(SelectionRequest(p, 4, 7)) == select_random(SelectionRequest(p, 4, 7))


def test_random_frequencies():
    p = pool(10)
    counts = np.zeros(10)
    trials = 10000
    for seed in range(trials):
        counts[np.array(select_random(SelectionRequest(p, 3, seed))) - 100] += 1
    q = 0.3
    assert np.all(np.abs(counts / trials - q) <= 3 * np.sqrt(q * (1 - q) / trials))


def test_k_bounds():
    with pytest.raises(ValueError):
        SelectionRequest(pool(3), 4)
    with pytest.raises(ValueError):
        SelectionRequest(pool(3), -1)


def test_uniform_round_robin():
    p = pool(10)
    chosen = select_uniform_by_label(SelectionRequest(p, 2, 0))
    assert sorted(p.y[p.index_of(i)] for i in chosen) == [0, 1]
    p5 = pool(10, np.arange(10) % 5)
    chosen = select_uniform_by_label(SelectionRequest(p5, 3, 0))
    assert [int(p5.y[p5.index_of(i)]) for i in chosen] == [0, 1, 2]
    lonely = pool(6, np.array([0, 0, 0, 0, 0, 1]))
    for seed in range(5):
        assert 105 in select_uniform_by_label(SelectionRequest(lonely, 4, seed))


def test_reservoir():
    assert select_reservoir(range(5), 5, 0) == [0, 1, 2, 3, 4]
    assert select_reservoir(range(20), 5, 3) == select_reservoir(range(20), 5, 3)
    K, trials = 5, 10000
    counts = np.zeros(2 * K)
    for seed in range(trials):
        counts[select_reservoir(range(2 * K), K, seed)] += 1
    assert np.all(np.abs(counts / trials - 0.5) <= 3 * np.sqrt(0.25 / trials))
    # examples are accepted as stream items too
    assert select_reservoir(iter(pool(3)), 3, 0) == [100, 101, 102]


def _angles(deg):
    r = np.deg2rad(deg)
    return np.stack([np.cos(r), np.sin(r)], axis=1)


def test_gss_fixtures():
    assert gss_from_gradients([4, 2], np.ones((2, 3)), 2) == [2, 4]
    assert gss_from_gradients([3, 1, 2], np.eye(3), 2) == [1, 2]
    assert sorted(gss_from_gradients([0, 1, 2], _angles([0, 5, 90]), 2)) == [0, 2]
    G = np.array([[1.0, 0.0], [0.0, 0.0], [0.9, 0.1]])
    # zero gradient counts as similarity 0, so it beats the near-duplicate
    assert gss_from_gradients([0, 1, 2], G, 2) == [0, 1]
    assert gss_from_gradients([0, 1], G[:2], 0) == []


def test_gss_needs_params():
    with pytest.raises(ValueError):
        select_gss(SelectionRequest(pool(3), 1))


def _fitted_pool(noise=0.0, seed=0):
    trn, val, _ = blobs(100, 2, 2, 4.0, seed, noise)
    spec = ModelSpec(2, 2, l2_lambda=0.01)
    params = train(spec, TrainConfig(batch_size=10, epochs=20, seed=seed), trn).final_params
    return spec, params, trn, val


def test_loss_based():
    spec, params, trn, _ = _fitted_pool()
    losses = spec.example_losses(params, trn.X, trn.y)
    assert select_loss_based(SelectionRequest(trn, 1, 0, spec, params)) == [int(trn.ids[np.argmin(losses)])]
    flat = Dataset([5, 3, 9], np.zeros((3, 2)), [0, 0, 0])
    assert select_loss_based(SelectionRequest(flat, 2, 0, spec, np.zeros(spec.n_params))) == [3, 5]
    bad = Dataset.concat([trn.subset([0]), Dataset([999], trn.X[:1], 1 - trn.y[:1])])
    full = Dataset.concat([trn.subset(range(1, 20)), bad])
    ranked = select_loss_based(SelectionRequest(full, len(full), 0, spec, params))
    assert ranked[-1] == 999


def test_hesit_modes_and_ties():
    p = Dataset([1, 2, 3], np.zeros((3, 2)), [0, 0, 0])
    recs = make_records([1, 2, 3], [3.0, -5.0, 1.0], "hesit")
    assert select_hesit(SelectionRequest(p, 1, records=recs)) == [1]
    assert select_hesit(SelectionRequest(p, 1, records=recs, mode="magnitude_desc")) == [2]
    same = make_records([1, 2, 3], [1.0, 1.0, 1.0], "hesit")
    assert select_hesit(SelectionRequest(p, 2, records=same)) == [1, 2]
    with pytest.raises(ValueError):
        select_hesit(SelectionRequest(p, 1, records=recs[:2]))
    with pytest.raises(ValueError):
        scores_top_k([1], [1.0], 1, "abs")


def test_hesit_avoids_flipped_labels():
    hesit_noise, random_noise = [], []
    for seed in range(20):
        trn, val, _ = blobs(100, 2, 2, 4.0, seed, 0.1)
        spec = ModelSpec(2, 2, l2_lambda=0.01)
        recs = hesit_trace(spec, TrainConfig(batch_size=10, epochs=5, seed=seed), trn, val)
        req = SelectionRequest(trn, 10, seed, records=recs)
        hesit_noise.append(trn.select_ids(select_hesit(req)).noise.sum())
        random_noise.append(trn.select_ids(select_random(req)).noise.sum())
    assert np.mean(hesit_noise) < np.mean(random_noise)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_every_strategy_returns_k_distinct(strategy):
    spec, params, trn, val = _fitted_pool()
    recs = hesit_trace(spec, TrainConfig(batch_size=10, epochs=2), trn, val, HesitConfig())
    req = SelectionRequest(trn, 7, 3, spec, params, recs)
    out = select(strategy, req)
    assert out == select(strategy, req)
    if strategy == "vanilla":
        assert out == []
    else:
        assert len(out) == len(set(out)) == 7 and set(out) <= set(trn.ids.tolist())
    with pytest.raises(ValueError):
        select("herding", req)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(1e-3, 1e3), st.integers(0, 40))
@settings(max_examples=50, deadline=None)
def test_hesit_scale_invariance(raw, c, k):
    ids = np.arange(len(raw))
    k = min(k, len(raw))
    for mode in ("signed_desc", "magnitude_desc"):
        scaled = [c * r for r in raw]
        # skip draws where scaling collapses distinct values into a tie
        if len(set(scaled)) == len(set(raw)):
            assert scores_top_k(ids, raw, k, mode) == scores_top_k(ids, scaled, k, mode)


def test_selection_csv():
    buf = io.StringIO()
    write_selection_csv([(2, "hesit", [7, 3])], buf)
    assert buf.getvalue() == "task_id,strategy,example_id,rank\n2,hesit,7,1\n2,hesit,3,2\n"
