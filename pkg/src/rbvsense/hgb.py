"""Histogram-based gradient boosting for binary labels.

Features are binned once; each boosting round grows one regression tree
leaf-wise on the logistic-loss gradients and hessians, with split gains
read from per-bin gradient/hessian histograms. The larger child's
histogram is obtained by subtracting the smaller child's from the parent.
The growing loop is compiled with numba; everything else is numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_binary_labels, as_matrix, check_arity
from .exceptions import ModelFormatError, ModelVersionError

MAGIC = "HGB1"


# -- binning ------------------------------------------------------------------

@dataclass(frozen=True)
class BinMapper:
    """Per-feature ascending thresholds; bin of ``x`` = number of thresholds ``< x``."""

    thresholds: tuple
    max_bins: int = 255

    @property
    def n_features(self):
        return len(self.thresholds)

    @property
    def n_bins(self):
        return 1 + max((len(t) for t in self.thresholds), default=0)

    def transform(self, X):
        X = as_matrix(X)
        check_arity(X.shape[1], self.n_features, "bin mapper")
        dtype = np.uint8 if self.n_bins <= 256 else np.uint16
        out = np.empty(X.shape, dtype=dtype)
        for f, thr in enumerate(self.thresholds):
            out[:, f] = np.searchsorted(np.asarray(thr, dtype=float), X[:, f], side="left")
        return out


def _feature_thresholds(col, max_bins):
    distinct = np.unique(col)
    if len(distinct) <= 1:
        return ()
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    if len(distinct) <= max_bins:
        return tuple(float(m) for m in mids)
    qs = np.quantile(col, np.arange(1, max_bins) / max_bins, method="linear")
    # snap each quantile onto the gap between the distinct values around it
    pos = np.clip(np.searchsorted(distinct, qs, side="left"), 1, len(distinct) - 1)
    return tuple(float(m) for m in np.unique(mids[pos - 1]))


def fit_bins(X, max_bins=255) -> BinMapper:
    if max_bins < 2:
        raise ValueError("max_bins must be >= 2")
    X = as_matrix(X)
    if X.shape[0] == 0:
        raise ValueError("cannot bin an empty dataset")
    return BinMapper(tuple(_feature_thresholds(X[:, f], max_bins) for f in range(X.shape[1])),
                     max_bins)


# -- trees ----------------------------------------------------------------------

@njit(cache=True)
def _leaf_values(Xb, feature, bin_threshold, left, right, value):
    out = np.empty(Xb.shape[0])
    for r in range(Xb.shape[0]):
        node = 0
        while feature[node] >= 0:
            node = left[node] if Xb[r, feature[node]] <= bin_threshold[node] else right[node]
        out[r] = value[node]
    return out


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf.

    A row goes left when its bin is ``<= bin_threshold`` (equivalently its
    raw value is ``<= threshold``).
    """

    feature: np.ndarray
    bin_threshold: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))

    def depth(self, node=0):
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def leaf_values(self, Xb):
        return _leaf_values(Xb, self.feature, self.bin_threshold, self.left, self.right, self.value)

    def __eq__(self, other):
        return isinstance(other, Tree) and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("feature", "bin_threshold", "threshold", "left", "right", "value"))


@dataclass(frozen=True)
class HgbParams:
    trees: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_samples_leaf: int = 20
    l2: float = 1.0
    max_bins: int = 255
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.trees < 0:
            raise ValueError("trees must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.max_bins < 2 or self.max_bins > 65536:
            raise ValueError("max_bins must be in [2, 65536]")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


@dataclass(frozen=True, eq=False)
class HgbModel:
    bin_mapper: BinMapper
    trees: tuple
    learning_rate: float
    base_score: float
    params: HgbParams = field(default_factory=HgbParams)

    @property
    def n_features(self):
        return self.bin_mapper.n_features

    def raw_score(self, X):
        Xb = self.bin_mapper.transform(X)
        total = np.zeros(Xb.shape[0])
        for tree in self.trees:
            total += tree.leaf_values(Xb)
        return self.base_score + self.learning_rate * total

    def predict_proba1(self, X):
        return _sigmoid(self.raw_score(X))

    def __eq__(self, other):
        return isinstance(other, HgbModel) and dumps_hgb(self) == dumps_hgb(other)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def logistic_loss(raw, y):
    """Mean logistic loss of raw log-odds ``raw`` against 0/1 labels."""
    raw = np.asarray(raw, dtype=float)
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


@njit(cache=True)
def _build_hist(hist, node, Xb, order, start, end, g, h):
    hist[node] = 0.0
    F = Xb.shape[1]
    for k in range(start, end):
        r = order[k]
        gr, hr = g[r], h[r]
        for f in range(F):
            b = Xb[r, f]
            hist[node, 0, f, b] += gr
            hist[node, 1, f, b] += hr
            hist[node, 2, f, b] += 1.0


@njit(cache=True)
def _find_split(hist, node, l2, min_samples_leaf):
    """Best ``(gain, feature, bin)`` for ``node``; ties keep the lowest feature, then bin."""
    F, B = hist.shape[2], hist.shape[3]
    G = 0.0
    H = 0.0
    C = 0.0
    for b in range(B):
        G += hist[node, 0, 0, b]
        H += hist[node, 1, 0, b]
        C += hist[node, 2, 0, b]
    parent = G * G / (H + l2)
    best, best_f, best_b = 0.0, -1, -1
    for f in range(F):
        gl = 0.0
        hl = 0.0
        cl = 0.0
        for b in range(B - 1):
            gl += hist[node, 0, f, b]
            hl += hist[node, 1, f, b]
            cl += hist[node, 2, f, b]
            if cl < min_samples_leaf or C - cl < min_samples_leaf:
                continue
            gr = G - gl
            gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (H - hl + l2) - parent)
            if gain > best:
                best, best_f, best_b = gain, f, b
    return best, best_f, best_b


@njit(cache=True)
def _grow(Xb, g, h, hist, max_leaves, min_samples_leaf, l2, max_depth):
    """Grow one tree best-first.

    Returns node arrays ``(feature, bin, left, right, value)`` (leaf: feature
    -1) and the per-row leaf value. Candidate leaves are expanded in order
    of gain; equal gains go to the leaf that became a candidate first.
    """
    n = Xb.shape[0]
    max_nodes = hist.shape[0]
    feature = np.full(max_nodes, -1, np.int64)
    split_bin = np.zeros(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)
    depth = np.zeros(max_nodes, np.int64)
    lo = np.zeros(max_nodes, np.int64)
    hi = np.zeros(max_nodes, np.int64)
    cand_gain = np.full(max_nodes, -1.0)
    cand_f = np.zeros(max_nodes, np.int64)
    cand_b = np.zeros(max_nodes, np.int64)
    cand_seq = np.zeros(max_nodes, np.int64)
    order = np.arange(n)
    scratch = np.empty(n, np.int64)

    lo[0], hi[0] = 0, n
    _build_hist(hist, 0, Xb, order, 0, n, g, h)
    n_nodes, n_leaves, seq = 1, 1, 0

    if n >= 2 * min_samples_leaf and max_depth != 0:
        gain, f, b = _find_split(hist, 0, l2, min_samples_leaf)
        if f >= 0:
            cand_gain[0], cand_f[0], cand_b[0] = gain, f, b
            seq = 1

    while n_leaves < max_leaves:
        pick = -1
        for i in range(n_nodes):
            if cand_gain[i] > 0 and (pick < 0 or cand_gain[i] > cand_gain[pick]
                                     or (cand_gain[i] == cand_gain[pick] and cand_seq[i] < cand_seq[pick])):
                pick = i
        if pick < 0:
            break
        f, b = cand_f[pick], cand_b[pick]
        cand_gain[pick] = -1.0
        # stable partition of the node's rows
        a, z = lo[pick], hi[pick]
        nl = 0
        nr = 0
        for k in range(a, z):
            r = order[k]
            if Xb[r, f] <= b:
                order[a + nl] = r
                nl += 1
            else:
                scratch[nr] = r
                nr += 1
        for k in range(nr):
            order[a + nl + k] = scratch[k]
        li, ri = n_nodes, n_nodes + 1
        n_nodes += 2
        feature[pick], split_bin[pick], left[pick], right[pick] = f, b, li, ri
        lo[li], hi[li], lo[ri], hi[ri] = a, a + nl, a + nl, z
        depth[li] = depth[ri] = depth[pick] + 1
        small, big = (li, ri) if nl <= nr else (ri, li)
        _build_hist(hist, small, Xb, order, lo[small], hi[small], g, h)
        hist[big] = hist[pick] - hist[small]
        n_leaves += 1
        for child in (li, ri):
            cnt = hi[child] - lo[child]
            if cnt >= 2 * min_samples_leaf and (max_depth < 0 or depth[child] < max_depth):
                gain, cf, cb = _find_split(hist, child, l2, min_samples_leaf)
                if cf >= 0:
                    cand_gain[child], cand_f[child], cand_b[child], cand_seq[child] = gain, cf, cb, seq
                    seq += 1

    # leaf values from exact row sums (histogram subtraction drifts in the last bits)
    row_value = np.zeros(n)
    for i in range(n_nodes):
        if feature[i] < 0:
            G = 0.0
            H = 0.0
            for k in range(lo[i], hi[i]):
                G += g[order[k]]
                H += h[order[k]]
            value[i] = -G / (H + l2)
            for k in range(lo[i], hi[i]):
                row_value[order[k]] = value[i]
    return feature[:n_nodes], split_bin[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes], row_value


def _tree_from_arrays(feature, split_bin, left, right, value, mapper):
    """Renumber nodes into preorder and attach raw-value thresholds."""
    order = []
    stack = [0]
    while stack:
        i = stack.pop()
        order.append(i)
        if feature[i] >= 0:
            stack.append(right[i])
            stack.append(left[i])
    order = np.array(order, dtype=np.int64)
    remap = np.empty(len(order), dtype=np.int64)
    remap[order] = np.arange(len(order))
    feat = feature[order]
    is_split = feat >= 0
    thr = np.array([mapper.thresholds[f][b] if f >= 0 else 0.0
                    for f, b in zip(feat.tolist(), split_bin[order].tolist())], dtype=float)
    return Tree(
        feat,
        np.where(is_split, split_bin[order], 0),
        thr,
        np.where(is_split, remap[np.maximum(left[order], 0)], -1),
        np.where(is_split, remap[np.maximum(right[order], 0)], -1),
        np.where(is_split, 0.0, value[order]),
    )


def train_hgb(X, y, params: HgbParams | None = None, callback=None) -> HgbModel:
    """Stagewise logistic-loss boosting.

    ``callback(round, raw_scores)`` is called after every round; useful for
    tracing the training loss.
    """
    params = params or HgbParams()
    X = as_matrix(X)
    y = as_binary_labels(y)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training needs both classes")
    if len(y) < 2 * params.min_samples_leaf:
        raise ValueError(
            f"need at least 2*min_samples_leaf={2 * params.min_samples_leaf} records, got {len(y)}")
    mapper = fit_bins(X, params.max_bins)
    Xb = mapper.transform(X)
    base = math.log(n_pos / n_neg)
    raw = np.full(len(y), base)
    leaves_cap = max(1, min(params.max_leaves, len(y) // params.min_samples_leaf))
    hist = np.empty((2 * leaves_cap - 1, 3, Xb.shape[1], mapper.n_bins))
    max_depth = -1 if params.max_depth is None else params.max_depth
    trees = []
    for r in range(params.trees):
        p = _sigmoid(raw)
        g = p - y
        h = p * (1.0 - p)
        feature, split_bin, left, right, value, row_value = _grow(
            Xb, g, h, hist, params.max_leaves, params.min_samples_leaf, params.l2, max_depth)
        trees.append(_tree_from_arrays(feature, split_bin, left, right, value, mapper))
        raw += params.learning_rate * row_value
        if callback is not None:
            callback(r, raw)
    return HgbModel(mapper, tuple(trees), params.learning_rate, base, params)


@dataclass(frozen=True)
class HgbPrediction:
    predicted_class: int
    probability: float

    @property
    def confidence(self):
        return self.probability if self.predicted_class == 1 else 1.0 - self.probability


def predict_hgb(model: HgbModel, values) -> HgbPrediction:
    values = np.asarray(values, dtype=float)
    check_arity(values.shape[-1], model.n_features, "HGB input")
    p = float(model.predict_proba1(values[None, :])[0])
    return HgbPrediction(int(p >= 0.5), p)


class HGBClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper around :func:`train_hgb`; parameters mirror :class:`HgbParams`."""

    def __init__(self, trees=100, learning_rate=0.1, max_leaves=31, min_samples_leaf=20,
                 l2=1.0, max_bins=255, max_depth=None, random_state=0):
        self.trees = trees
        self.learning_rate = learning_rate
        self.max_leaves = max_leaves
        self.min_samples_leaf = min_samples_leaf
        self.l2 = l2
        self.max_bins = max_bins
        self.max_depth = max_depth
        self.random_state = random_state

    def _params(self):
        return HgbParams(self.trees, self.learning_rate, self.max_leaves, self.min_samples_leaf,
                         self.l2, self.max_bins, self.max_depth, int(self.random_state or 0))

    def fit(self, X, y):
        X = as_matrix(X)
        self.model_ = train_hgb(X, y, self._params())
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p1 = self.model_.predict_proba1(X)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        check_is_fitted(self, "model_")
        return (self.model_.predict_proba1(X) >= 0.5).astype(np.int64)

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.raw_score(X)


# -- serialization --------------------------------------------------------------

def _params_line(p: HgbParams):
    depth = "none" if p.max_depth is None else str(p.max_depth)
    return (f"params trees={p.trees} learning_rate={p.learning_rate!r} max_leaves={p.max_leaves} "
            f"min_samples_leaf={p.min_samples_leaf} l2={p.l2!r} max_bins={p.max_bins} "
            f"max_depth={depth} seed={p.seed}")


def dumps_hgb(model: HgbModel) -> str:
    lines = [MAGIC, _params_line(model.params), f"base_score {model.base_score!r}",
             f"features {model.n_features}"]
    for f, thr in enumerate(model.bin_mapper.thresholds):
        lines.append(" ".join([f"bins {f} {len(thr)}"] + [repr(float(t)) for t in thr]))
    for k, tree in enumerate(model.trees):
        lines.append(f"tree {k} {len(tree.feature)}")
        for i in range(len(tree.feature)):
            if tree.feature[i] < 0:
                lines.append(f"leaf {float(tree.value[i])!r}")
            else:
                lines.append(f"split {int(tree.feature[i])} {int(tree.bin_threshold[i])} "
                             f"{float(tree.threshold[i])!r}")
    return "\n".join(lines) + "\n"


def save_hgb(model: HgbModel, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_hgb(model))


def _parse_params(text, lineno):
    fields = {}
    for tok in text.split(" ")[1:]:
        key, sep, val = tok.partition("=")
        if not sep:
            raise ModelFormatError(f"bad params token {tok!r}", lineno)
        fields[key] = val
    try:
        return HgbParams(
            trees=int(fields["trees"]), learning_rate=float(fields["learning_rate"]),
            max_leaves=int(fields["max_leaves"]), min_samples_leaf=int(fields["min_samples_leaf"]),
            l2=float(fields["l2"]), max_bins=int(fields["max_bins"]),
            max_depth=None if fields["max_depth"] == "none" else int(fields["max_depth"]),
            seed=int(fields["seed"]))
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad params line: {exc}", lineno) from None


def loads_hgb(text: str) -> HgbModel:
    first = text.split("\n", 1)[0]
    if first != MAGIC:
        if first.startswith("HGB"):
            raise ModelVersionError(f"unsupported version {first!r}, expected {MAGIC}", 1)
        raise ModelFormatError(f"bad magic {first[:16]!r}, expected {MAGIC}", 1)
    if not text.endswith("\n"):
        raise ModelFormatError("missing final newline", text.count("\n") + 1)
    lines = text[:-1].split("\n")

    def line(i, key):
        if i > len(lines):
            raise ModelFormatError(f"expected {key!r} line, found end of file", i)
        parts = lines[i - 1].split(" ")
        if parts[0] != key:
            raise ModelFormatError(f"expected {key!r} line, found {lines[i - 1][:20]!r}", i)
        return parts

    params = _parse_params(" ".join(line(2, "params")), 2)
    try:
        base = float(line(3, "base_score")[1])
        n_features = int(line(4, "features")[1])
    except (IndexError, ValueError):
        raise ModelFormatError("bad header value", 3) from None
    thresholds = []
    i = 5
    for f in range(n_features):
        parts = line(i, "bins")
        try:
            count = int(parts[2])
            thr = tuple(float(t) for t in parts[3:])
        except (IndexError, ValueError):
            raise ModelFormatError("bad bins line", i) from None
        if int(parts[1]) != f or len(thr) != count:
            raise ModelFormatError(f"bins {f}: expected {count} thresholds, found {len(thr)}", i)
        thresholds.append(thr)
        i += 1
    mapper = BinMapper(tuple(thresholds), params.max_bins)

    trees = []
    for k in range(params.trees):
        parts = line(i, "tree")
        try:
            n_nodes = int(parts[2])
        except (IndexError, ValueError):
            raise ModelFormatError("bad tree header", i) from None
        start = i + 1
        if start + n_nodes - 1 > len(lines):
            raise ModelFormatError(
                f"tree {k}: expected {n_nodes} nodes, found {len(lines) - start + 1}", len(lines) + 1)
        nodes = []
        pos = [0]

        def parse(depth=0):
            idx = len(nodes)
            ln = start + pos[0]
            if pos[0] >= n_nodes:
                raise ModelFormatError(f"tree {k}: node list ends early", ln)
            toks = lines[ln - 1].split(" ")
            pos[0] += 1
            try:
                if toks[0] == "leaf":
                    nodes.append([-1, 0, 0.0, -1, -1, float(toks[1])])
                elif toks[0] == "split":
                    f, b, t = int(toks[1]), int(toks[2]), float(toks[3])
                    if not (0 <= f < n_features and 0 <= b < len(thresholds[f])):
                        raise ModelFormatError(f"split references feature {f} bin {b}", ln)
                    nodes.append([f, b, t, -1, -1, 0.0])
                    nodes[idx][3] = parse(depth + 1)
                    nodes[idx][4] = parse(depth + 1)
                else:
                    raise ModelFormatError(f"unknown node kind {toks[0]!r}", ln)
            except (IndexError, ValueError):
                raise ModelFormatError("bad node line", ln) from None
            return idx

        parse()
        if pos[0] != n_nodes:
            raise ModelFormatError(f"tree {k}: {n_nodes - pos[0]} unused node lines", start + pos[0])
        cols = list(zip(*nodes))
        trees.append(Tree(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                          np.array(cols[2], dtype=float), np.array(cols[3], dtype=np.int64),
                          np.array(cols[4], dtype=np.int64), np.array(cols[5], dtype=float)))
        i = start + n_nodes
    if i <= len(lines):
        raise ModelFormatError("unexpected trailing content", i)
    return HgbModel(mapper, tuple(trees), params.learning_rate, base, params)


def load_hgb(path) -> HgbModel:
    with open(path, encoding="utf-8", newline="") as fh:
        return loads_hgb(fh.read())
