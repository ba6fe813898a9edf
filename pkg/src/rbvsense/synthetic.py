"""Synthetic two-class data built from planted feature-pair attractors.

Negative records (label 0) sit on a clean manifold in each informative
pair: a line or a cross. Positive records (label 1) sit on the shifted
copy of that manifold, or in a shifted scatter box. Remaining features are
label-independent standard normal noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BLOOD_FEATURES, Dataset

SHAPES = ("line", "cross", "quadrants")
POSITIVE_MODES = ("shifted", "cloud")


@dataclass(frozen=True)
class PairAttractor:
    """One informative feature pair.

    ``shape`` is the class-0 manifold: ``line`` (y = slope * x), ``cross``
    (the two coordinate axes) or ``quadrants`` (class 0 in quadrants II/IV,
    class 1 in I/III, an XOR planting). ``positive`` chooses whether class 1
    repeats the manifold shifted by ``shift`` or scatters uniformly in a box
    of half-width ``extent`` centred on ``shift``.
    """

    first: int
    second: int
    shape: str = "line"
    positive: str = "shifted"
    shift: tuple = (0.0, 10.0)
    slope: float = 1.0
    extent: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.positive not in POSITIVE_MODES:
            raise ValueError(f"unknown positive mode {self.positive!r}")
        if self.first == self.second:
            raise ValueError("a pair needs two distinct features")


@dataclass(frozen=True)
class AttractorSpec:
    n_features: int
    pairs: tuple
    noise: float = 0.05
    feature_names: tuple | None = None

    def __post_init__(self):
        used = [i for p in self.pairs for i in (p.first, p.second)]
        if len(set(used)) != len(used):
            raise ValueError("pairs must not share features")
        if any(i < 0 or i >= self.n_features for i in used):
            raise ValueError("pair feature index out of range")
        if self.feature_names is not None and len(self.feature_names) != self.n_features:
            raise ValueError("feature_names length must equal n_features")

    @property
    def n_nuisance(self):
        return self.n_features - 2 * len(self.pairs)

    def names(self):
        if self.feature_names is not None:
            return tuple(self.feature_names)
        return tuple(f"f{i}" for i in range(self.n_features))


def _manifold(pair, n, rng):
    t = rng.uniform(-pair.extent, pair.extent, n)
    if pair.shape == "line":
        return t, pair.slope * t
    if pair.shape == "cross":
        horizontal = rng.random(n) < 0.5
        return np.where(horizontal, t, 0.0), np.where(horizontal, 0.0, t)
    raise AssertionError(pair.shape)


def _pair_points(pair, label, n, rng):
    if pair.shape == "quadrants":
        x = rng.uniform(-pair.extent, pair.extent, n)
        y = np.abs(rng.uniform(-pair.extent, pair.extent, n))
        # class 1: sign(x) == sign(y); class 0: opposite signs
        y = np.where(x >= 0, y, -y) if label == 1 else np.where(x >= 0, -y, y)
        return x, y
    if label == 0:
        return _manifold(pair, n, rng)
    dx, dy = pair.shift
    if pair.positive == "shifted":
        x, y = _manifold(pair, n, rng)
    else:
        x = rng.uniform(-pair.extent, pair.extent, n)
        y = rng.uniform(-pair.extent, pair.extent, n)
    return x + dx, y + dy


def generate_synthetic(spec: AttractorSpec, n_per_class: int, seed: int = 0) -> Dataset:
    """Draw ``n_per_class`` records of each label; deterministic in ``(spec, n, seed)``."""
    if n_per_class <= 0:
        raise ValueError("n_per_class must be positive")
    if spec.noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for label in (0, 1):
        X = rng.standard_normal((n_per_class, spec.n_features))
        for pair in spec.pairs:
            x, y = _pair_points(pair, label, n_per_class, rng)
            X[:, pair.first] = x + spec.noise * rng.standard_normal(n_per_class)
            X[:, pair.second] = y + spec.noise * rng.standard_normal(n_per_class)
        blocks.append(X)
        labels.append(np.full(n_per_class, label))
    X = np.vstack(blocks)
    y = np.concatenate(labels)
    order = rng.permutation(len(y))
    return Dataset(spec.names(), X[order], y[order], "synthetic")


def _blood_spec():
    idx = {name: i for i, name in enumerate(BLOOD_FEATURES)}
    pairs = (
        PairAttractor(idx["MCHC"], idx["MCH"], "cross", "cloud", shift=(1.2, -1.2)),
        PairAttractor(idx["LDL"], idx["CK-MB"], "line", "cloud", shift=(1.5, 0.5)),
        PairAttractor(idx["Cholesterol"], idx["Triglyceride"], "line", "shifted",
                      shift=(0.0, 0.8), slope=0.5),
    )
    return AttractorSpec(len(BLOOD_FEATURES), pairs, noise=0.1, feature_names=BLOOD_FEATURES)


PRESETS = {
    # zero noise, class 1 on y = x + 10
    "separable": AttractorSpec(4, (PairAttractor(0, 1, "line", "shifted", shift=(0.0, 10.0)),), noise=0.0),
    "cruciform": AttractorSpec(6, (PairAttractor(0, 1, "cross", "cloud", shift=(1.2, -1.2)),), noise=0.05),
    "xor": AttractorSpec(10, (PairAttractor(0, 1, "quadrants"),), noise=0.0),
    "blood": _blood_spec(),
}
