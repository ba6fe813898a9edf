import math

import numpy as np
import pytest

from rbvsense.data import stratified_folds
from rbvsense.exceptions import ModelFormatError, ModelVersionError
from rbvsense.hgb import (
    HGBClassifier,
    HgbParams,
    dumps_hgb,
    fit_bins,
    load_hgb,
    loads_hgb,
    logistic_loss,
    predict_hgb,
    save_hgb,
    train_hgb,
)
from rbvsense.model_selection import cross_val_accuracy


def brute_force_first_split(X, y, l2, msl):
    """Exhaustive exact-gain search over every midpoint of every feature."""
    base = math.log(y.sum() / (len(y) - y.sum()))
    p = 1 / (1 + math.exp(-base))
    g = p - y
    h = np.full(len(y), p * (1 - p))
    G, H = g.sum(), h.sum()
    best = (-math.inf, None, None)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            t = (a + b) / 2
            left = X[:, f] <= t
            if left.sum() < msl or (~left).sum() < msl:
                continue
            gl, hl = g[left].sum(), h[left].sum()
            gain = 0.5 * (gl**2 / (hl + l2) + (G - gl)**2 / (H - hl + l2) - G**2 / (H + l2))
            if gain > best[0] + 1e-12:
                best = (gain, f, t)
    return best


def test_first_split_matches_brute_force():
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(50):
        n = int(rng.integers(8, 65))
        X = np.round(rng.normal(size=(n, 3)), 2)
        y = (X[:, 0] + rng.normal(size=n) > 0).astype(int)
        if y.sum() in (0, n):
            y[0] = 1 - y[0]
        params = HgbParams(trees=1, max_leaves=2, min_samples_leaf=2, l2=1.0)
        model = train_hgb(X, y, params)
        gain, f, t = brute_force_first_split(X, y, 1.0, 2)
        tree = model.trees[0]
        if f is None or gain <= 0:
            assert tree.n_leaves == 1
            continue
        assert tree.feature[0] == f
        assert tree.threshold[0] == pytest.approx(t)
        checked += 1
    assert checked >= 40


def test_loss_is_non_increasing(cruciform):
    losses = []
    train_hgb(cruciform.X, cruciform.y, HgbParams(trees=100),
              callback=lambda r, raw: losses.append(logistic_loss(raw, cruciform.y)))
    assert len(losses) == 100
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_base_score_and_zero_trees():
    X = np.arange(60, dtype=float)[:, None]
    y = (np.arange(60) >= 20).astype(int)
    m = train_hgb(X, y, HgbParams(trees=0))
    assert m.base_score == pytest.approx(math.log(40 / 20))
    np.testing.assert_allclose(m.predict_proba1(X), 40 / 60)


def test_bins_use_midpoints_when_few_values():
    mapper = fit_bins(np.array([[1.0], [2.0], [2.0], [4.0]]))
    assert mapper.thresholds == ((1.5, 3.0),)
    assert mapper.transform(np.array([[1.5], [1.6], [9.0]])).ravel().tolist() == [0, 1, 2]


def test_bins_capped():
    X = np.random.default_rng(0).normal(size=(2000, 1))
    mapper = fit_bins(X, max_bins=16)
    assert len(mapper.thresholds[0]) <= 15 and mapper.n_bins <= 16


def test_separable_cv(separable):
    folds = stratified_folds(separable, 5, seed=0)
    cv = cross_val_accuracy(HGBClassifier, separable.X, separable.y, folds)
    assert cv.mean_accuracy == 1.0


def test_training_errors():
    with pytest.raises(ValueError, match="both classes"):
        train_hgb(np.zeros((50, 1)), np.zeros(50))
    with pytest.raises(ValueError, match="min_samples_leaf"):
        train_hgb(np.zeros((10, 1)), np.arange(10) % 2)


def test_leaf_limits(cruciform):
    m = train_hgb(cruciform.X, cruciform.y, HgbParams(trees=3, max_leaves=5, max_depth=2))
    for t in m.trees:
        assert t.n_leaves <= 4 and t.depth() <= 2


def test_predict_hgb_single_row(cruciform):
    m = train_hgb(cruciform.X, cruciform.y, HgbParams(trees=10))
    p = predict_hgb(m, cruciform.X[0])
    assert p.predicted_class in (0, 1) and 0.5 <= p.confidence <= 1.0


def test_text_round_trip(tmp_path, cruciform):
    m = train_hgb(cruciform.X, cruciform.y, HgbParams(trees=5))
    save_hgb(m, tmp_path / "m.hgb")
    m2 = load_hgb(tmp_path / "m.hgb")
    assert dumps_hgb(m2) == (tmp_path / "m.hgb").read_text()
    np.testing.assert_array_equal(m2.predict_proba1(cruciform.X), m.predict_proba1(cruciform.X))


def test_text_errors(cruciform):
    text = dumps_hgb(train_hgb(cruciform.X, cruciform.y, HgbParams(trees=2)))
    with pytest.raises(ModelFormatError, match="magic"):
        loads_hgb("NOPE" + text[4:])
    with pytest.raises(ModelVersionError):
        loads_hgb("HGB2" + text[4:])
    lines = text.split("\n")
    with pytest.raises(ModelFormatError):
        loads_hgb("\n".join(lines[:-4]) + "\n")


def test_estimator_contract(cruciform):
    clf = HGBClassifier(trees=10)
    assert clf.get_params()["trees"] == 10
    clf.fit(cruciform.X, cruciform.y)
    proba = clf.predict_proba(cruciform.X[:4])
    assert proba.shape == (4, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.score(cruciform.X, cruciform.y) > 0.95
