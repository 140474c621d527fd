import math

import numpy as np
import pytest

from neuromodlab import ctgraph, features
from neuromodlab.features import AutoencoderParams, FeatureError, LatentScaler


def numeric_gradients(params, data, eps=1e-6):
    gw = [np.zeros_like(w) for w in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    for arrays, grads in ((params.weights, gw), (params.biases, gb)):
        for arr, g in zip(arrays, grads):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                up = features.loss(params, data)
                arr[idx] = old - eps
                down = features.loss(params, data)
                arr[idx] = old
                g[idx] = (up - down) / (2 * eps)
    return gw, gb


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)


def test_gradient_check_toy_network():
    rng = np.random.default_rng(0)
    params = features.init_params((6, 5, 3, 5, 6), rng)
    data = rng.uniform(0, 1, (4, 6))
    gw, gb = features.gradients(params, data)
    nw, nb = numeric_gradients(params, data)
    worst = max(max(rel_err(a, n).max() for a, n in zip(gw, nw)),
                max(rel_err(a, n).max() for a, n in zip(gb, nb)))
    assert worst < 1e-4


def test_training_step_equals_gradient_step():
    rng = np.random.default_rng(1)
    params = features.init_params((6, 4, 2, 4, 6), rng)
    data = rng.uniform(0, 1, (3, 6))
    gw, gb = features.gradients(params, data)
    trained, history = features.train_autoencoder(data, 0.01, 1, params=params)
    for w, g, t in zip(params.weights, gw, trained.weights):
        assert np.allclose(t, w - 0.01 * g, atol=1e-15)
    for b, g, t in zip(params.biases, gb, trained.biases):
        assert np.allclose(t, b - 0.01 * g, atol=1e-15)
    assert history[0] == pytest.approx(features.mse(params, data), abs=1e-15)
    assert len(history) == 2


def test_loss_and_mse_relation():
    rng = np.random.default_rng(2)
    params = features.init_params((6, 4, 2, 4, 6), rng)
    data = rng.uniform(0, 1, (5, 6))
    assert features.loss(params, data) == pytest.approx(6 * features.mse(params, data), rel=1e-12)


def test_training_reduces_error():
    cfg = ctgraph.CtGraphConfig()
    data = features.collect_observations(cfg)
    params, history = features.train_autoencoder(data, epochs=300, rng=3)
    assert history[-1] < history[0]
    assert params.layer_sizes == features.LAYER_SIZES


def test_training_is_deterministic():
    data = features.collect_observations(ctgraph.CtGraphConfig())
    a, ha = features.train_autoencoder(data, epochs=50, rng=4)
    b, hb = features.train_autoencoder(data, epochs=50, rng=4)
    assert ha == hb
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))


def test_empty_dataset_rejected():
    with pytest.raises(FeatureError):
        features.train_autoencoder(np.zeros((0, 144)), epochs=1)


def test_wrong_input_width_rejected():
    params = features.init_params(rng=0)
    with pytest.raises(FeatureError):
        features.encode(params, np.zeros(10))


def test_encode_shapes():
    params = features.init_params(rng=0)
    assert features.encode(params, np.zeros(144)).shape == (16,)
    assert features.encode(params, np.zeros((3, 144))).shape == (3, 16)


def direct_transform(v):
    """Piecewise definition evaluated one scalar at a time."""
    v = min(max(v, features.EPS), 1 - features.EPS)
    s = math.log(v / (1 - v))
    if s > 1:
        return 1.0
    if s < 0:
        return 0.0
    return s


def test_transform_grid_matches_direct_evaluation():
    grid = np.linspace(0, 1, 1002)[1:-1]
    got = features.inverse_sigmoid_clamp(grid)
    want = np.array([direct_transform(v) for v in grid])
    assert np.max(np.abs(got - want)) <= 1e-12
    assert got.min() >= 0.0 and got.max() <= 1.0


@pytest.mark.parametrize("v,expected", [(0.0, 0.0), (0.5, 0.0), (1.0, 1.0),
                                        (1 / (1 + math.e ** -0.5), 0.5),
                                        (1 / (1 + math.e ** -1), 1.0), (0.3, 0.0), (0.9, 1.0)])
def test_transform_known_points(v, expected):
    assert features.inverse_sigmoid_clamp(v) == pytest.approx(expected, abs=1e-12)


def test_scaler_min_max_and_degenerate():
    lat = np.array([[0.0, 1.0, 2.0], [2.0, 1.0, 4.0], [1.0, 1.0, 3.0]])
    sc = features.fit_scaler(lat)
    scaled = sc.scale(lat)
    assert np.allclose(scaled[:, 0], [0, 1, 0.5])
    assert np.all(scaled[:, 1] == 0.5)
    assert np.allclose(scaled[:, 2], [0, 1, 0.5])
    assert np.all(sc.scale([-10.0, 1.0, 100.0]) == [0.0, 0.5, 1.0])


def test_scaler_validation():
    with pytest.raises(FeatureError):
        LatentScaler([1.0], [0.0])
    with pytest.raises(FeatureError):
        features.fit_scaler(np.zeros((1, 3)))


def test_extractor_round_trip(tmp_path):
    fe = features.build_features(ctgraph.CtGraphConfig(), epochs=20, rng=5)
    path = tmp_path / "ae.json"
    fe.save(path)
    back = features.FeatureExtractor.load(path)
    obs = ctgraph.observation_table(ctgraph.CtGraphConfig())
    assert np.array_equal(fe(obs), back(obs))
    assert all(np.array_equal(a, b) for a, b in zip(fe.params.weights, back.params.weights))


def test_params_reject_bad_schema():
    doc = features.init_params((4, 2, 4), rng=0).to_dict()
    doc["schema"] = "nope"
    with pytest.raises(FeatureError):
        AutoencoderParams.from_dict(doc)


def test_feature_table_matches_call():
    cfg = ctgraph.CtGraphConfig()
    fe = features.build_features(cfg, epochs=20, rng=6)
    tbl = fe.table(cfg)
    assert tbl.shape == (6, 16)
    assert np.array_equal(tbl, fe(ctgraph.observation_table(cfg)))
    assert tbl.min() >= 0 and tbl.max() <= 1
    with pytest.raises(ValueError):
        tbl[0, 0] = 2.0
