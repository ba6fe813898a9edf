"""Congruent chaotic generator and the reservoir layer it feeds.

The reservoir matrix is never stored on the device: every inference
restarts the generator at ``C`` and streams ``(S+1) * P`` weights, each
``x / L``, row by row. The host side caches the same stream since it is a
pure function of the generator parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_arity


@dataclass(frozen=True)
class ChaosParams:
    K: int = 93
    D: int = 68
    L: int = 9276
    C: int = 73

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be positive")
        if abs(self.C) >= self.L:
            raise ValueError("|C| must be smaller than L")


@dataclass(frozen=True)
class Topology:
    """Layer sizes ``S:P:M:N+1``.

    The input array has ``S + 1`` slots; feature values fill slots
    ``0..S-1`` and slot ``S`` stays 0. ``N + 1`` output neurons.
    """

    S: int = 51
    P: int = 50
    M: int = 20
    N: int = 1

    def __post_init__(self):
        if min(self.S, self.P, self.M, self.N) < 1:
            raise ValueError("all topology sizes must be >= 1")

    @classmethod
    def parse(cls, text):
        """Parse ``"51,50,20,2"`` (the last entry counts output neurons)."""
        parts = [int(p) for p in str(text).replace(":", ",").split(",")]
        if len(parts) != 4:
            raise ValueError(f"topology needs 4 sizes, got {text!r}")
        s, p, m, outputs = parts
        return cls(s, p, m, outputs - 1)

    @property
    def n_inputs(self):
        return self.S + 1

    def __str__(self):
        return f"{self.S}:{self.P}:{self.M}:{self.N + 1}"


def _trunc_mod(a, m):
    # C's % : the remainder takes the sign of the dividend
    r = abs(a) % m
    return -r if a < 0 else r


def generator_stream(params: ChaosParams, count: int):
    """First ``count`` values ``x_1 = C, x_{n+1} = (D - K x_n) % L``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    K, D, L = params.K, params.D, params.L
    x = params.C
    out = [x]
    for _ in range(count - 1):
        x = _trunc_mod(D - K * x, L)
        out.append(x)
    return out


@lru_cache(maxsize=32)
def _reservoir_ints(params: ChaosParams, n_inputs: int, width: int):
    # Each weight is produced by stepping the generator before use, so the
    # stream's first value C never multiplies an input.
    stream = generator_stream(params, n_inputs * width + 1)[1:]
    a = np.array(stream, dtype=np.int64).reshape(width, n_inputs)
    a.setflags(write=False)
    return a


def reservoir_integers(params: ChaosParams, topology: Topology):
    """Integer generator states laid out ``(P, S+1)`` in consumption order."""
    return _reservoir_ints(params, topology.n_inputs, topology.P)


def reservoir_matrix(params: ChaosParams, topology: Topology):
    """Real reservoir weights ``x / L`` with shape ``(P, S+1)``."""
    return reservoir_integers(params, topology) / float(params.L)


@dataclass(frozen=True)
class ReservoirCoeffs:
    min_s: tuple
    max_s: tuple
    mean10: tuple

    def __post_init__(self):
        if not (len(self.min_s) == len(self.max_s) == len(self.mean10)):
            raise ValueError("coefficient arrays must share one length")
        if any(hi < lo for lo, hi in zip(self.min_s, self.max_s)):
            raise ValueError("max_s must be >= min_s")

    @classmethod
    def identity(cls, width):
        return cls((0.0,) * width, (1.0,) * width, (0.0,) * width)

    def arrays(self):
        return (np.asarray(self.min_s, dtype=float), np.asarray(self.max_s, dtype=float),
                np.asarray(self.mean10, dtype=float))


def input_array(X, topology: Topology):
    """Pad feature rows to the ``S + 1`` input slots (last slot 0)."""
    X = as_matrix(X)
    check_arity(X.shape[1], topology.S, "reservoir input features")
    return np.hstack([X, np.zeros((X.shape[0], 1))])


def raw_sums(Y, params: ChaosParams, topology: Topology):
    """Unnormalised reservoir sums for padded input rows ``Y`` -> ``(n, P)``."""
    Y = np.asarray(Y, dtype=float)
    check_arity(Y.shape[-1], topology.n_inputs, "reservoir input array")
    return Y @ reservoir_matrix(params, topology).T


def _normalise(raw, coeffs: ReservoirCoeffs):
    lo, hi, mean10 = coeffs.arrays()
    span = hi - lo
    degenerate = span == 0
    scaled = (raw - lo) / np.where(degenerate, 1.0, span)
    scaled = np.where(degenerate, 0.0, scaled)
    return scaled - 0.5 - mean10


def reservoir_transform(y, params: ChaosParams, coeffs: ReservoirCoeffs, topology: Topology):
    """Normalised reservoir layer for padded input(s) ``y``.

    Returns ``P + 1`` values per row with the bias neuron (1.0) in column 0.
    A neuron whose fitted range is zero outputs ``-0.5 - mean10``.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = y[None, :] if single else y
    check_arity(len(coeffs.min_s), topology.P, "reservoir coefficients")
    sh = _normalise(raw_sums(Y, params, topology), coeffs)
    out = np.hstack([np.ones((sh.shape[0], 1)), sh])
    return out[0] if single else out


def fit_reservoir_coeffs(X, params: ChaosParams, topology: Topology) -> ReservoirCoeffs:
    """Fit min/max/mean normalisation of the reservoir sums on training rows ``X``.

    ``X`` holds feature rows (``S`` columns); padding is applied here.
    """
    X = as_matrix(X)
    if X.shape[0] == 0:
        raise ValueError("cannot fit reservoir coefficients on an empty dataset")
    raw = raw_sums(input_array(X, topology), params, topology)
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    span = hi - lo
    scaled = np.where(span == 0, 0.0, (raw - lo) / np.where(span == 0, 1.0, span)) - 0.5
    mean10 = scaled.mean(axis=0)
    return ReservoirCoeffs(tuple(map(float, lo)), tuple(map(float, hi)), tuple(map(float, mean10)))


class ChaoticReservoir(TransformerMixin, BaseEstimator):
    """Transformer mapping ``S`` features to the ``P + 1`` normalised reservoir layer."""

    def __init__(self, width=50, chaos=None):
        self.width = width
        self.chaos = chaos

    def fit(self, X, y=None):
        X = as_matrix(X)
        self.n_features_in_ = X.shape[1]
        self.topology_ = Topology(X.shape[1], self.width, 1, 1)
        self.chaos_ = self.chaos if self.chaos is not None else ChaosParams()
        self.coeffs_ = fit_reservoir_coeffs(X, self.chaos_, self.topology_)
        return self

    def transform(self, X):
        check_is_fitted(self, "coeffs_")
        Y = input_array(X, self.topology_)
        return reservoir_transform(Y, self.chaos_, self.coeffs_, self.topology_)
