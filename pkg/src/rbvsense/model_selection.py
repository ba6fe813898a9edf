"""Fold-wise accuracy estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FoldAssignment


@dataclass(frozen=True)
class CVResult:
    mean_accuracy: float
    fold_accuracies: tuple


def accuracy(y_true, y_pred):
    y_true = np.asarray(y_true)
    if len(y_true) == 0:
        raise ValueError("accuracy of an empty fold is undefined")
    return float(np.mean(y_true == np.asarray(y_pred)))


def cross_val_accuracy(make_estimator, X, y, folds: FoldAssignment) -> CVResult:
    """Train ``make_estimator()`` on each fold's complement and score it on the fold.

    ``make_estimator`` returns a fresh unfitted object with ``fit``/``predict``.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    if len(folds) != len(y) or X.shape[0] != len(y):
        raise ValueError(f"fold assignment covers {len(folds)} records, dataset has {len(y)}")
    scores = []
    for train, test in folds:
        est = make_estimator()
        est.fit(X[train], y[train])
        scores.append(accuracy(y[test], est.predict(X[test])))
    return CVResult(float(np.mean(scores)), tuple(scores))
