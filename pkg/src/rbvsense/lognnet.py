"""Float-precision LogNNet: reservoir, sigmoid hidden layer, sigmoid outputs."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_binary_labels, as_matrix, check_arity
from .chaos import (
    ChaosParams,
    ReservoirCoeffs,
    Topology,
    fit_reservoir_coeffs,
    input_array,
    reservoir_transform,
)
from .preprocessing import ScalerParams, apply_scaler_array, fit_scaler_array


def sigmoid(x):
    """Logistic function, overflow-safe for large ``|x|``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class LogNNetModel:
    topology: Topology
    chaos: ChaosParams
    coeffs: ReservoirCoeffs
    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        t = self.topology
        w1 = np.array(self.w1, dtype=float)
        w2 = np.array(self.w2, dtype=float)
        if w1.shape != (t.P + 1, t.M + 1):
            raise ValueError(f"w1 shape {w1.shape} != {(t.P + 1, t.M + 1)}")
        if w2.shape != (t.M + 1, t.N + 1):
            raise ValueError(f"w2 shape {w2.shape} != {(t.M + 1, t.N + 1)}")
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise ValueError("weights must be finite")
        if len(self.coeffs.min_s) != t.P:
            raise ValueError("reservoir coefficients do not match topology")
        # the hidden bias neuron is constant, so column 0 is never read
        w1[:, 0] = 0.0
        w1.setflags(write=False)
        w2.setflags(write=False)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    def __eq__(self, other):
        if not isinstance(other, LogNNetModel):
            return NotImplemented
        return (self.topology == other.topology and self.chaos == other.chaos
                and self.coeffs == other.coeffs
                and np.array_equal(self.w1, other.w1) and np.array_equal(self.w2, other.w2))

    def to_json(self):
        t, c = self.topology, self.chaos
        return json.dumps({
            "format": "lognnet-float-1",
            "topology": [t.S, t.P, t.M, t.N],
            "chaos": [c.K, c.D, c.L, c.C],
            "min_s": list(self.coeffs.min_s),
            "max_s": list(self.coeffs.max_s),
            "mean10": list(self.coeffs.mean10),
            "w1": self.w1.tolist(),
            "w2": self.w2.tolist(),
        }) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(Topology(*d["topology"]), ChaosParams(*d["chaos"]),
                   ReservoirCoeffs(tuple(d["min_s"]), tuple(d["max_s"]), tuple(d["mean10"])),
                   np.array(d["w1"]), np.array(d["w2"]))


@dataclass(frozen=True)
class PredictionOutcome:
    predicted_class: int
    activations: tuple

    @property
    def confidence(self):
        return float(self.activations[self.predicted_class])

    @property
    def margin(self):
        a = sorted(self.activations, reverse=True)
        return float(a[0] - a[1]) if len(a) > 1 else float(a[0])


def first_argmax(values):
    """Index of the maximum, keeping the earliest on ties (strict ``>`` scan)."""
    best = 0
    for j in range(1, len(values)):
        if values[j] > values[best]:
            best = j
    return best


def _layers(model, sh):
    hidden = sigmoid(sh @ model.w1[:, 1:])
    sh2 = np.hstack([np.ones((sh.shape[0], 1)), hidden])
    out = sigmoid(sh2 @ model.w2)
    return sh2, out


def forward_array(model: LogNNetModel, X):
    """Output activations ``(n, N+1)`` for feature rows ``X``."""
    t = model.topology
    sh = reservoir_transform(input_array(X, t), model.chaos, model.coeffs, t)
    return _layers(model, np.atleast_2d(sh))[1]


def forward(model: LogNNetModel, values) -> PredictionOutcome:
    values = np.asarray(values, dtype=float)
    check_arity(values.shape[-1], model.topology.S, "LogNNet input")
    act = forward_array(model, values[None, :])[0]
    return PredictionOutcome(first_argmax(act), tuple(float(a) for a in act))


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 30
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")


def loss_and_grads(w1, w2, sh, targets):
    """Mean (over rows) summed per-output binary cross-entropy and its gradients.

    ``sh`` is the reservoir layer with bias column, ``targets`` one-hot.
    Column 0 of the returned ``w1`` gradient is always zero.
    """
    n = sh.shape[0]
    hidden = sigmoid(sh @ w1[:, 1:])
    sh2 = np.hstack([np.ones((n, 1)), hidden])
    out = sigmoid(sh2 @ w2)
    eps = 1e-12
    loss = -np.sum(targets * np.log(out + eps) + (1 - targets) * np.log(1 - out + eps)) / n
    d_out = (out - targets) / n
    g2 = sh2.T @ d_out
    d_hidden = (d_out @ w2[1:, :].T) * hidden * (1.0 - hidden)
    g1 = np.zeros_like(w1)
    g1[:, 1:] = sh.T @ d_hidden
    return float(loss), g1, g2


def train_on_layer(sh, y, topology: Topology, params: TrainParams):
    """Mini-batch gradient descent of ``w1``/``w2`` over a fixed reservoir layer."""
    rng = np.random.default_rng(params.seed)
    w1 = rng.uniform(-0.5, 0.5, (topology.P + 1, topology.M + 1))
    w1[:, 0] = 0.0
    w2 = rng.uniform(-0.5, 0.5, (topology.M + 1, topology.N + 1))
    targets = np.eye(topology.N + 1)[y]
    n = sh.shape[0]
    for _ in range(params.epochs):
        order = rng.permutation(n)
        for start in range(0, n, params.batch_size):
            batch = order[start:start + params.batch_size]
            _, g1, g2 = loss_and_grads(w1, w2, sh[batch], targets[batch])
            w1 -= params.learning_rate * g1
            w2 -= params.learning_rate * g2
    return w1, w2


def train_lognnet(X, y, topology: Topology | None = None, chaos: ChaosParams | None = None,
                  params: TrainParams | None = None) -> LogNNetModel:
    """Fit reservoir coefficients on ``X`` then train the two sigmoid layers.

    ``X`` must already be in the model's input units (scaled if a scaler is
    used); the reservoir stays fixed throughout.
    """
    X = as_matrix(X)
    y = as_binary_labels(y)
    if len(np.unique(y)) < 2:
        raise ValueError("training needs both classes")
    topology = topology or Topology(X.shape[1], 50, 20, 1)
    chaos = chaos or ChaosParams()
    params = params or TrainParams()
    check_arity(X.shape[1], topology.S, "training features")
    coeffs = fit_reservoir_coeffs(X, chaos, topology)
    sh = reservoir_transform(input_array(X, topology), chaos, coeffs, topology)
    w1, w2 = train_on_layer(sh, y, topology, params)
    return LogNNetModel(topology, chaos, coeffs, w1, w2)


class LogNNetClassifier(ClassifierMixin, BaseEstimator):
    """LogNNet binary classifier.

    Parameters
    ----------
    reservoir_width, hidden_width : int
        ``P`` and ``M``; the input width ``S`` comes from the training data.
    chaos : ChaosParams, optional
        Generator parameters; defaults to ``K=93, D=68, L=9276, C=73``.
    scaler : {"minmax", "robust", None}, default="minmax"
        Input normalisation fitted on the training rows. The reservoir sums
        are stored as 16-bit fixed point on the device, so raw clinical units
        should not reach it unscaled.
    epochs, learning_rate, batch_size, random_state
        Output-layer training settings.
    """

    def __init__(self, reservoir_width=50, hidden_width=20, chaos=None, scaler="minmax",
                 epochs=30, learning_rate=0.1, batch_size=32, random_state=0):
        self.reservoir_width = reservoir_width
        self.hidden_width = hidden_width
        self.chaos = chaos
        self.scaler = scaler
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = as_matrix(X)
        y = as_binary_labels(y)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.scaler_params_ = fit_scaler_array(X, self.scaler) if self.scaler else None
        topology = Topology(X.shape[1], self.reservoir_width, self.hidden_width, 1)
        params = TrainParams(self.epochs, self.learning_rate, self.batch_size,
                             int(self.random_state or 0))
        self.model_ = train_lognnet(self._scale(X), y, topology, self.chaos, params)
        return self

    def _scale(self, X):
        if self.scaler_params_ is None:
            return X
        return apply_scaler_array(self.scaler_params_, X)

    def activations(self, X):
        check_is_fitted(self, "model_")
        return forward_array(self.model_, self._scale(as_matrix(X)))

    def predict_proba(self, X):
        act = self.activations(X)
        return act / act.sum(axis=1, keepdims=True)

    def predict(self, X):
        act = self.activations(X)
        return np.array([first_argmax(row) for row in act])


def save_float_model(path, model: LogNNetModel, scaler: ScalerParams | None = None):
    d = json.loads(model.to_json())
    d["scaler"] = None if scaler is None else json.loads(scaler.to_json())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(d) + "\n")


def load_float_model(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format") != "lognnet-float-1":
        raise ValueError(f"{path}: not a float LogNNet model")
    scaler = None if d.get("scaler") is None else ScalerParams.from_json(json.dumps(d["scaler"]))
    return LogNNetModel.from_dict(d), scaler
