import json

import numpy as np
import pytest

from stepwise.cohort import FeatureStats
from stepwise.interpret import (
    ablate_feature,
    expected_response,
    hidden_deltas,
    hidden_states,
    write_ablation,
    write_profile_csv,
)
from stepwise.model import ModelConfig, TrainedModel, embed, lstm_cell
from stepwise.model.lstm import init_params


@pytest.fixture
def model():
    cfg = ModelConfig(feature_dim=5, embed_dim=4, hidden_units=6, layers=2)
    rng = np.random.default_rng(7)
    params = init_params(cfg, rng)
    for k in params:
        params[k] = params[k] + rng.normal(0, 0.4, params[k].shape)
    return TrainedModel(params, cfg, FeatureStats(np.zeros(5), np.ones(5)), 4)


@pytest.fixture
def Xn():
    return np.random.default_rng(8).normal(size=(9, 4, 5))


def brute_hidden(model, x, layer):
    """Loop over steps with the single-vector cell."""
    p = model.params
    seq = [embed(p, x[t]) for t in range(len(x))]
    H = model.config.hidden_units
    for l in range(layer + 1):
        h, c = np.zeros(H), np.zeros(H)
        out = []
        for v in seq:
            h, c = lstm_cell(v, h, c, p[f"V{l}"], p[f"W{l}"], p[f"b{l}"])
            out.append(h)
        seq = out
    return np.array(seq)


def test_first_delta_is_first_state(model, Xn):
    h = hidden_states(model, Xn)
    d = hidden_deltas(model, Xn)
    np.testing.assert_array_equal(d[:, 0], h[:, 0])
    assert (np.abs(d) <= 2).all()
    np.testing.assert_allclose(d.sum(axis=1), h[:, -1], atol=1e-12)


def test_single_sequence_profile(model, Xn):
    prof = expected_response(model, Xn[:1])
    np.testing.assert_array_equal(prof.values, np.abs(hidden_deltas(model, Xn[0])))
    assert prof.n_sequences == 1
    assert prof.layer == 1


def test_duplicated_dataset_same_profile(model, Xn):
    a = expected_response(model, Xn).values
    b = expected_response(model, np.concatenate([Xn, Xn])).values
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


@pytest.mark.parametrize("layer", [0, 1])
def test_profile_matches_brute_force(model, Xn, layer):
    prof = expected_response(model, Xn, layer).values
    deltas = []
    for x in Xn:
        h = brute_hidden(model, x, layer)
        deltas.append(np.abs(np.diff(h, axis=0, prepend=np.zeros((1, h.shape[1])))))
    np.testing.assert_allclose(prof, np.mean(deltas, axis=0), rtol=0, atol=1e-12)
    assert (prof >= 0).all() and (prof <= 2).all()


def test_zero_feature_ablation_is_noop(model, Xn):
    Xn = Xn.copy()
    Xn[..., 2] = 0.0
    res = ablate_feature(model, Xn, 2)
    assert (res.diff == 0).all()
    assert res.aggregate == 0.0


def test_ablation_ranking_and_purity(model, Xn):
    before = {k: v.copy() for k, v in model.params.items()}
    x_before = Xn.copy()
    res = ablate_feature(model, Xn, 0)
    assert sorted(res.ranking) == list(range(4))
    scores = res.step_scores
    assert all(scores[a] >= scores[b] for a, b in zip(res.ranking, res.ranking[1:]))
    assert len(res.top_steps(2)) == 2
    np.testing.assert_array_equal(Xn, x_before)
    for k in before:
        np.testing.assert_array_equal(before[k], model.params[k])


def test_bad_layer_and_feature(model, Xn):
    with pytest.raises(ValueError):
        expected_response(model, Xn, layer=2)
    with pytest.raises(ValueError):
        ablate_feature(model, Xn, 5)


def test_writers(tmp_path, model, Xn):
    write_profile_csv(expected_response(model, Xn).values, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "step," + ",".join(f"unit_{u}" for u in range(6))
    assert len(lines) == 5
    paths = write_ablation(ablate_feature(model, Xn, 1), tmp_path, "abl")
    info = json.loads(paths["ranking"].read_text())
    assert info["feature_index"] == 1 and sorted(info["ranking"]) == [0, 1, 2, 3]
