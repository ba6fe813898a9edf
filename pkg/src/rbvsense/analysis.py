"""Correlation analysis, single-feature threshold rules and feature subset search."""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .data import Dataset, FoldAssignment
from .model_selection import cross_val_accuracy

DIAGNOSIS = "diagnosis"
SCOPES = ("all", "positive", "negative")
LARGE_SWEEP = 5000


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Pearson coefficients; ``undefined`` flags entries involving a constant column."""

    labels: tuple
    r: np.ndarray
    undefined: np.ndarray

    def get(self, a, b):
        i, j = self.labels.index(a), self.labels.index(b)
        if self.undefined[i, j]:
            raise ValueError(f"correlation of {a!r} and {b!r} is undefined (constant column)")
        return float(self.r[i, j])


def pearson(X):
    """Pearson matrix of the columns of ``X`` plus a mask of undefined entries."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("correlation needs at least 2 records")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc
    norm = np.sqrt(np.sum(Xc * Xc, axis=0))
    constant = norm == 0
    undefined = constant[:, None] | constant[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = cov / np.outer(norm, norm)
    r = np.clip((r + r.T) / 2.0, -1.0, 1.0)
    r[undefined] = np.nan
    idx = np.flatnonzero(~constant)
    r[idx, idx] = 1.0
    return r, undefined


def pearson_matrix(dataset: Dataset, scope="all") -> CorrelationMatrix:
    """Feature-feature (and feature-diagnosis, when labeled) correlations.

    ``scope`` restricts the records to one class: ``positive`` (label 1) or
    ``negative`` (label 0). Within one class the diagnosis column is
    constant, so its entries come back flagged as undefined.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    X = dataset.X
    labels = dataset.feature_names
    if dataset.y is not None:
        X = np.column_stack([X, dataset.y.astype(float)])
        labels = labels + (DIAGNOSIS,)
        if scope != "all":
            X = X[dataset.y == (1 if scope == "positive" else 0)]
    elif scope != "all":
        raise ValueError("per-class scope needs a labeled dataset")
    if X.shape[0] < 2:
        raise ValueError(f"scope {scope!r} holds {X.shape[0]} records; need at least 2")
    r, undefined = pearson(X)
    return CorrelationMatrix(labels, r, undefined)


@dataclass(frozen=True)
class ThresholdRule:
    threshold: float
    direction: str     # "above": predict 1 when x > threshold; "below": when x <= threshold
    accuracy: float

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        above = x > self.threshold
        return (above if self.direction == "above" else ~above).astype(np.int64)


def threshold_rule(x, y) -> ThresholdRule:
    """Best in-sample single cut over the midpoints of adjacent distinct values.

    Both polarities are scanned; ties go to the lower threshold, then to
    ``above``. If neither beats the all-one-class rule, that degenerate rule
    (threshold at +/-inf) is returned instead.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(np.int64)
    distinct, inverse = np.unique(x, return_inverse=True)
    if len(distinct) < 2:
        raise ValueError("threshold rule needs a non-constant feature")
    n, n_pos = len(y), int(y.sum())
    pos_per_value = np.bincount(inverse, weights=y, minlength=len(distinct))
    cnt_per_value = np.bincount(inverse, minlength=len(distinct))
    pos_below = np.cumsum(pos_per_value)[:-1]
    cnt_below = np.cumsum(cnt_per_value)[:-1]
    correct_above = (cnt_below - pos_below) + (n_pos - pos_below)
    scores = np.column_stack([correct_above, n - correct_above])
    k, d = divmod(int(np.argmax(scores)), 2)
    best = float(scores[k, d]) / n
    prior = max(n_pos, n - n_pos) / n
    if best < prior:
        if n_pos >= n - n_pos:
            return ThresholdRule(-math.inf, "above", prior)
        return ThresholdRule(math.inf, "above", prior)
    thr = float((distinct[k] + distinct[k + 1]) / 2.0)
    return ThresholdRule(thr, ("above", "below")[d], best)


def threshold_classify(dataset: Dataset, feature: int) -> ThresholdRule:
    if dataset.y is None:
        raise ValueError("threshold classification needs labels")
    return threshold_rule(dataset.X[:, feature], dataset.y)


# -- subset search ----------------------------------------------------------------

@dataclass(frozen=True)
class SubsetResult:
    features: tuple
    mean_accuracy: float
    fold_accuracies: tuple


def tuple_seed(features, base_seed=0):
    """Seed derived from the feature tuple only, so worker count and order do not matter."""
    return int(np.random.SeedSequence([base_seed, len(features), *features]).generate_state(1)[0])


def default_trainer(seed):
    from .hgb import HGBClassifier
    return HGBClassifier(random_state=seed)


def _evaluate(features, X, y, folds, trainer, base_seed):
    seed = tuple_seed(features, base_seed)
    cv = cross_val_accuracy(lambda: trainer(seed), X[:, list(features)], y, folds)
    return SubsetResult(tuple(features), cv.mean_accuracy, cv.fold_accuracies)


def rank(results, top_k=None):
    ordered = sorted(results, key=lambda r: (-r.mean_accuracy, r.features))
    return ordered if top_k is None else ordered[:top_k]


def subset_search(dataset: Dataset, size: int, folds: FoldAssignment, trainer=default_trainer,
                  top_k=20, n_jobs=1, features=None, seed=0, allow_large=False,
                  order_seed=None, progress=None):
    """Cross-validate every increasing feature tuple of ``size`` and rank them.

    Parameters
    ----------
    trainer : callable
        ``trainer(seed)`` returns an unfitted estimator; ``seed`` is derived
        from the tuple so rankings do not depend on ``n_jobs`` or order.
    features : sequence of int, optional
        Candidate feature indices (default: all).
    allow_large : bool
        Sweeps above ``LARGE_SWEEP`` tuples are refused unless set.
    order_seed : int, optional
        Shuffle the evaluation order (the ranking must not change).
    progress : callable, optional
        ``progress(done, total)`` after each evaluated tuple.
    """
    if size not in (1, 2, 3):
        raise ValueError("subset size must be 1, 2 or 3")
    if top_k is not None and top_k < 1:
        raise ValueError("top_k must be >= 1")
    if dataset.y is None:
        raise ValueError("subset search needs labels")
    candidates = list(range(dataset.n_features)) if features is None else sorted(set(features))
    tuples = list(itertools.combinations(candidates, size))
    if len(tuples) > LARGE_SWEEP and not allow_large:
        raise ValueError(
            f"{len(tuples)} tuples exceeds {LARGE_SWEEP}; pass allow_large to run the full sweep")
    if order_seed is not None:
        perm = np.random.default_rng(order_seed).permutation(len(tuples))
        tuples = [tuples[i] for i in perm]
    X, y = dataset.X, dataset.y
    results = []
    if n_jobs == 1:
        for t in tuples:
            results.append(_evaluate(t, X, y, folds, trainer, seed))
            if progress:
                progress(len(results), len(tuples))
    else:
        jobs = (delayed(_evaluate)(t, X, y, folds, trainer, seed) for t in tuples)
        for res in Parallel(n_jobs=n_jobs, return_as="generator")(jobs):
            results.append(res)
            if progress:
                progress(len(results), len(tuples))
    return rank(results, top_k)


@dataclass(frozen=True)
class PairGraph:
    partners: dict     # feature -> Counter of partner features

    def degree(self, feature):
        return sum(self.partners.get(feature, Counter()).values())

    def hubs(self):
        """Features ordered by degree (descending), ties by feature id."""
        return sorted(self.partners, key=lambda f: (-self.degree(f), f))


def top_pairs_graph(results, n) -> PairGraph:
    partners = {}
    for res in list(results)[:n]:
        if len(res.features) != 2:
            raise ValueError(f"expected feature pairs, got {res.features}")
        a, b = res.features
        partners.setdefault(a, Counter())[b] += 1
        partners.setdefault(b, Counter())[a] += 1
    return PairGraph(partners)


# -- reports ----------------------------------------------------------------------

def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_correlation_csv(cm: CorrelationMatrix, path):
    """Square matrix CSV; undefined entries are left empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(cm.labels))
        for i, name in enumerate(cm.labels):
            w.writerow([name] + [_fmt(None if cm.undefined[i, j] else cm.r[i, j])
                                 for j in range(len(cm.labels))])


def write_threshold_csv(dataset: Dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "threshold", "direction", "accuracy"])
        for f, name in enumerate(dataset.feature_names):
            try:
                rule = threshold_classify(dataset, f)
            except ValueError:
                w.writerow([name, "", "", ""])
                continue
            w.writerow([name, _fmt(rule.threshold), rule.direction, f"{rule.accuracy:.6f}"])


def write_subset_csv(results, feature_names, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["features", "mean_accuracy", "fold_accuracies"])
        for r in results:
            w.writerow(["+".join(feature_names[i] for i in r.features), f"{r.mean_accuracy:.6f}",
                        " ".join(f"{a:.6f}" for a in r.fold_accuracies)])
