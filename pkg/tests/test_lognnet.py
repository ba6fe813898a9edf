import numpy as np
import pytest

from rbvsense.chaos import ChaosParams, Topology
from rbvsense.lognnet import (
    LogNNetClassifier,
    LogNNetModel,
    TrainParams,
    first_argmax,
    forward,
    load_float_model,
    loss_and_grads,
    save_float_model,
    sigmoid,
    train_lognnet,
)
from rbvsense.preprocessing import ScalerParams

from conftest import random_lognnet


def numeric_grad(f, w, step=1e-4):
    g = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        orig = w[idx]
        w[idx] = orig + step
        up = f()
        w[idx] = orig - step
        down = f()
        w[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_central_differences(seed):
    rng = np.random.default_rng(seed)
    P, M, N = 4, 3, 1
    w1 = rng.normal(size=(P + 1, M + 1))
    w2 = rng.normal(size=(M + 1, N + 1))
    sh = np.hstack([np.ones((6, 1)), rng.uniform(-0.5, 0.5, (6, P))])
    targets = np.eye(N + 1)[rng.integers(0, N + 1, 6)]
    _, g1, g2 = loss_and_grads(w1, w2, sh, targets)
    n1 = numeric_grad(lambda: loss_and_grads(w1, w2, sh, targets)[0], w1)
    n2 = numeric_grad(lambda: loss_and_grads(w1, w2, sh, targets)[0], w2)
    np.testing.assert_allclose(g1[:, 1:], n1[:, 1:], rtol=1e-3, atol=1e-7)
    np.testing.assert_allclose(g2, n2, rtol=1e-3, atol=1e-7)


def test_sigmoid_extremes():
    assert sigmoid(np.array([-1000.0, 0.0, 1000.0])).tolist() == [0.0, 0.5, 1.0]


def test_first_argmax_keeps_earliest():
    assert first_argmax([0.3, 0.7, 0.7]) == 1
    assert first_argmax([0.5, 0.5]) == 0


def test_hidden_bias_column_is_zeroed():
    m = random_lognnet(np.random.default_rng(0), Topology(4, 3, 2, 1))
    assert (m.w1[:, 0] == 0).all()


def test_forward_outcome_fields():
    m = random_lognnet(np.random.default_rng(1))
    out = forward(m, np.random.default_rng(2).random(51))
    assert len(out.activations) == 2
    assert out.confidence == max(out.activations)
    assert out.margin == pytest.approx(abs(out.activations[0] - out.activations[1]))


def test_separable_training_accuracy(separable):
    clf = LogNNetClassifier().fit(separable.X, separable.y)
    assert np.mean(clf.predict(separable.X) == separable.y) >= 0.95


def test_retraining_is_byte_identical(separable):
    t = Topology(4, 10, 5, 1)
    a = train_lognnet(separable.X, separable.y, t, ChaosParams(), TrainParams(epochs=5, seed=3))
    b = train_lognnet(separable.X, separable.y, t, ChaosParams(), TrainParams(epochs=5, seed=3))
    assert a.to_json() == b.to_json()
    c = train_lognnet(separable.X, separable.y, t, ChaosParams(), TrainParams(epochs=5, seed=4))
    assert c.to_json() != a.to_json()


def test_float_model_json_round_trip(tmp_path):
    m = random_lognnet(np.random.default_rng(5), Topology(6, 4, 3, 1))
    scaler = ScalerParams("minmax", (0.0,) * 6, (1.0,) * 6)
    save_float_model(tmp_path / "m.json", m, scaler)
    m2, s2 = load_float_model(tmp_path / "m.json")
    assert m2 == m and s2 == scaler


def test_model_shape_validation():
    m = random_lognnet(np.random.default_rng(6), Topology(3, 2, 2, 1))
    with pytest.raises(ValueError):
        LogNNetModel(m.topology, m.chaos, m.coeffs, np.zeros((2, 2)), m.w2)
    with pytest.raises(ValueError):
        LogNNetModel(m.topology, m.chaos, m.coeffs, m.w1 * np.nan, m.w2)


def test_classifier_estimator_contract(cruciform):
    clf = LogNNetClassifier(reservoir_width=8, hidden_width=4, epochs=3)
    assert clf.get_params()["reservoir_width"] == 8
    clf.set_params(hidden_width=6)
    clf.fit(cruciform.X, cruciform.y)
    proba = clf.predict_proba(cruciform.X[:5])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(clf.predict(cruciform.X)) <= {0, 1}
    with pytest.raises(ValueError):
        clf.fit(cruciform.X, np.full(len(cruciform.y), 2))


def test_sigmoid_at_one():
    assert sigmoid(1.0) == pytest.approx(0.7310585786, abs=1e-9)


def test_all_zero_weights_pick_class_zero():
    m = random_lognnet(np.random.default_rng(7), Topology(5, 4, 3, 1), weight=0.0)
    out = forward(m, np.ones(5))
    assert out.activations == (0.5, 0.5) and out.predicted_class == 0
