"""Fixed-point LogNNet for the microcontroller target.

Coefficients are stored as int16 (``value * scale_factor``, mean terms
``value * scale_factor * 10``) and divided back at every use. The emulator
replays the device loop with float32 accumulators, so its outputs match
what a 32-bit float target computes rather than the float64 host path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._validation import check_arity
from .chaos import ChaosParams, Topology, reservoir_integers
from .exceptions import ModelFormatError, ModelVersionError, QuantizationOverflowError
from .lognnet import LogNNetModel, PredictionOutcome

INT16_MIN, INT16_MAX = -32768, 32767
MAGIC = "LOGNNET1"

f32 = np.float32


def scale_round(value, factor) -> int:
    """``value * factor`` rounded half away from zero, in exact rational arithmetic."""
    exact = Fraction(float(value)) * factor
    q = math.floor(abs(exact) + Fraction(1, 2))
    return -q if exact < 0 else q


def _scale_array(name, values, factor):
    a = np.asarray(values, dtype=float)
    out = np.empty(a.shape, dtype=np.int64)
    for idx in np.ndindex(a.shape):
        q = scale_round(a[idx], factor)
        if not INT16_MIN <= q <= INT16_MAX:
            raise QuantizationOverflowError(name, idx, q)
        out[idx] = q
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class QuantizedModel:
    topology: Topology
    chaos: ChaosParams
    scale_factor: int
    q_min_s: np.ndarray
    q_max_s: np.ndarray
    q_mean10: np.ndarray
    q_w1: np.ndarray
    q_w2: np.ndarray

    def __post_init__(self):
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be positive")
        t = self.topology
        shapes = {
            "minS": (self.q_min_s, (t.P,)),
            "maxS": (self.q_max_s, (t.P,)),
            "meanS": (self.q_mean10, (t.P,)),
            "W1": (self.q_w1, (t.P + 1, t.M + 1)),
            "W2": (self.q_w2, (t.M + 1, t.N + 1)),
        }
        for name, (arr, shape) in shapes.items():
            a = np.asarray(arr)
            if a.shape != shape:
                raise ValueError(f"{name} shape {a.shape} != {shape}")
            if a.size and (a.min() < INT16_MIN or a.max() > INT16_MAX):
                bad = np.argwhere((a < INT16_MIN) | (a > INT16_MAX))[0]
                raise QuantizationOverflowError(name, tuple(bad), int(a[tuple(bad)]))
            a = np.array(a, dtype=np.int64)
            a.setflags(write=False)
            attr = {"minS": "q_min_s", "maxS": "q_max_s", "meanS": "q_mean10",
                    "W1": "q_w1", "W2": "q_w2"}[name]
            object.__setattr__(self, attr, a)

    def __eq__(self, other):
        if not isinstance(other, QuantizedModel):
            return NotImplemented
        return (self.topology == other.topology and self.chaos == other.chaos
                and self.scale_factor == other.scale_factor
                and all(np.array_equal(a, b) for a, b in zip(self._tensors(), other._tensors())))

    def _tensors(self):
        return (self.q_min_s, self.q_max_s, self.q_mean10, self.q_w1, self.q_w2)

    def dequantized(self):
        """Host-side float64 view: ``(min_s, max_s, mean10, w1, w2)``."""
        s = float(self.scale_factor)
        return (self.q_min_s / s, self.q_max_s / s, self.q_mean10 / (10 * s),
                self.q_w1 / s, self.q_w2 / s)


def quantize(model: LogNNetModel, scale_factor: int = 1000) -> QuantizedModel:
    """Scale and round every stored coefficient; mean terms use ``10 * scale_factor``."""
    if scale_factor <= 0:
        raise ValueError("scale_factor must be positive")
    c = model.coeffs
    return QuantizedModel(
        model.topology, model.chaos, scale_factor,
        _scale_array("minS", c.min_s, scale_factor),
        _scale_array("maxS", c.max_s, scale_factor),
        _scale_array("meanS", c.mean10, 10 * scale_factor),
        _scale_array("W1", model.w1, scale_factor),
        _scale_array("W2", model.w2, scale_factor),
    )


def _fun_activ(x):
    # 1 / (1 + exp(-1*x)) with every operand float
    with np.errstate(over="ignore"):
        return f32(1) / (f32(1) + np.exp(-x))


def emulate_edge_inference(q: QuantizedModel, values) -> PredictionOutcome:
    """Run the device inference loop on one feature vector.

    ``values`` holds the ``S`` features; they are narrowed to float32 as the
    device's string-to-float conversion would, and the final input slot is 0.
    Loops over inputs run in order so every float32 rounding happens where
    the device performs it.
    """
    t = q.topology
    values = np.asarray(values, dtype=float)
    check_arity(values.shape[-1], t.S, "edge input")
    Y = np.zeros(t.S + 1, dtype=f32)
    Y[: t.S] = values.astype(f32)

    sf = f32(q.scale_factor)
    L = f32(q.chaos.L)
    W = reservoir_integers(q.chaos, t).astype(f32) / L   # (P, S+1), float32 quotients

    # Reservoir: Sh[j] += (float)W/L * Y[i], i ascending
    acc = np.zeros(t.P, dtype=f32)
    for i in range(t.S + 1):
        acc = acc + W[:, i] * Y[i]
    lo = q.q_min_s.astype(f32) / sf
    span = (q.q_max_s - q.q_min_s).astype(f32) / sf
    mean = q.q_mean10.astype(f32) / f32(10 * q.scale_factor)
    degenerate = q.q_max_s == q.q_min_s
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = (acc - lo) / span
    # the literal 0.5 is a double: the tail of the expression runs in double
    tail = np.where(degenerate, 0.0, scaled.astype(np.float64)) - 0.5 - mean.astype(np.float64)
    sh = np.empty(t.P + 1, dtype=f32)
    sh[0] = f32(1)
    sh[1:] = tail.astype(f32)

    # Hidden layer
    w1 = q.q_w1.astype(f32) / sf
    acc = np.zeros(t.M, dtype=f32)
    for i in range(t.P + 1):
        acc = acc + sh[i] * w1[i, 1:]
    sh2 = np.empty(t.M + 1, dtype=f32)
    sh2[0] = f32(1)
    sh2[1:] = _fun_activ(acc)

    # Output layer
    w2 = q.q_w2.astype(f32) / sf
    acc = np.zeros(t.N + 1, dtype=f32)
    for i in range(t.M + 1):
        acc = acc + sh2[i] * w2[i]
    sout = _fun_activ(acc)

    digit = 0
    for j in range(t.N + 1):
        if sout[j] > sout[digit]:
            digit = j
    return PredictionOutcome(digit, tuple(float(v) for v in sout))


# -- model file ---------------------------------------------------------------

_SECTIONS = ("minS", "maxS", "meanS", "W1", "W2")


def _rows(name, q):
    arr = {"minS": q.q_min_s, "maxS": q.q_max_s, "meanS": q.q_mean10,
           "W1": q.q_w1, "W2": q.q_w2}[name]
    return np.atleast_2d(arr)


def dumps_model(q: QuantizedModel) -> str:
    t, c = q.topology, q.chaos
    lines = [MAGIC, f"topology {t.S} {t.P} {t.M} {t.N}", f"chaos {c.K} {c.D} {c.L} {c.C}",
             f"scale {q.scale_factor}"]
    for name in _SECTIONS:
        rows = _rows(name, q)
        lines.append(f"{name} {rows.shape[0]} {rows.shape[1]}")
        lines.extend(" ".join(str(int(v)) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def export_model(q: QuantizedModel, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(q))


def _ints(text, lineno, count=None, what="values"):
    try:
        vals = [int(tok) for tok in text.split(" ")]
    except ValueError:
        raise ModelFormatError(f"non-integer token in {what}: {text!r}", lineno) from None
    if count is not None and len(vals) != count:
        raise ModelFormatError(f"{what}: expected {count} values, found {len(vals)}", lineno)
    return vals


def loads_model(text: str) -> QuantizedModel:
    """Parse the text form written by :func:`dumps_model`; errors carry line numbers."""
    first = text.split("\n", 1)[0]
    if first != MAGIC:
        if first.startswith("LOGNNET"):
            raise ModelVersionError(f"unsupported version {first!r}, expected {MAGIC}", 1)
        raise ModelFormatError(f"bad magic {first[:16]!r}, expected {MAGIC}", 1)
    if not text.endswith("\n"):
        raise ModelFormatError("missing final newline", text.count("\n") + 1)
    lines = text[:-1].split("\n")

    def keyed(lineno, key, count):
        if lineno > len(lines):
            raise ModelFormatError(f"expected {key!r} line, found end of file", lineno)
        line = lines[lineno - 1]
        head, _, rest = line.partition(" ")
        if head != key:
            raise ModelFormatError(f"expected {key!r} line, found {line[:20]!r}", lineno)
        return _ints(rest, lineno, count, key)

    S, P, M, N = keyed(2, "topology", 4)
    K, D, L, C = keyed(3, "chaos", 4)
    (scale,) = keyed(4, "scale", 1)
    try:
        topology = Topology(S, P, M, N)
        chaos = ChaosParams(K, D, L, C)
    except ValueError as exc:
        raise ModelFormatError(str(exc), 2) from None
    expected = {"minS": (1, P), "maxS": (1, P), "meanS": (1, P),
                "W1": (P + 1, M + 1), "W2": (M + 1, N + 1)}

    tensors = {}
    lineno = 5
    for name in _SECTIONS:
        rows, cols = keyed(lineno, name, 2)
        if (rows, cols) != expected[name]:
            raise ModelFormatError(
                f"{name} declared {rows}x{cols}, topology requires "
                f"{expected[name][0]}x{expected[name][1]}", lineno)
        data = []
        for r in range(rows):
            ln = lineno + 1 + r
            if ln > len(lines) or lines[ln - 1].split(" ")[0] in _SECTIONS:
                raise ModelFormatError(
                    f"{name}: expected {rows} rows, found {r}", ln)
            row = _ints(lines[ln - 1], ln, cols, f"{name} row {r}")
            for j, v in enumerate(row):
                if not INT16_MIN <= v <= INT16_MAX:
                    raise ModelFormatError(f"{name}[{r}][{j}] = {v} outside int16 range", ln)
            data.append(row)
        tensors[name] = np.array(data, dtype=np.int64)
        lineno += 1 + rows
    if lineno <= len(lines):
        raise ModelFormatError("unexpected trailing content", lineno)
    try:
        return QuantizedModel(topology, chaos, scale, tensors["minS"][0], tensors["maxS"][0],
                              tensors["meanS"][0], tensors["W1"], tensors["W2"])
    except ValueError as exc:
        raise ModelFormatError(str(exc), 4) from None


def import_model(path) -> QuantizedModel:
    with open(path, encoding="utf-8", newline="") as fh:
        return loads_model(fh.read())


# -- RAM accounting -----------------------------------------------------------

@dataclass(frozen=True)
class RamBudget:
    input_buffer: int
    global_arrays: int
    serial: int
    library_w1: int
    library_w2: int
    library_coeffs: int
    stack_reserve: int

    @property
    def library(self):
        return self.library_w1 + self.library_w2 + self.library_coeffs

    @property
    def total(self):
        return self.input_buffer + self.global_arrays + self.serial + self.library + self.stack_reserve

    def rows(self):
        return [
            ("input array Y", self.input_buffer),
            ("global variables", self.global_arrays),
            ("serial library", self.serial),
            ("model library", self.library),
            ("  W1", self.library_w1),
            ("  W2", self.library_w2),
            ("  minS/maxS/meanS", self.library_coeffs),
            ("local stack reserve", self.stack_reserve),
            ("total", self.total),
        ]

    def format_table(self):
        width = max(len(r[0]) for r in self.rows())
        return "\n".join(f"{name:<{width}}  {value:>6} bytes" for name, value in self.rows()) + "\n"


def ram_budget(topology: Topology, float_bytes=4, int_bytes=2, serial=310, misc_globals=6,
               stack_reserve=1012) -> RamBudget:
    """Static RAM estimate of the device program for ``topology``.

    Serial-library size, scalar globals and the stack reserve are fixed
    overheads measured on the reference board, passed through unchanged.
    """
    if float_bytes <= 0 or int_bytes <= 0:
        raise ValueError("type sizes must be positive")
    t = topology
    return RamBudget(
        input_buffer=(t.S + 1) * float_bytes,
        global_arrays=(t.P + 1) * float_bytes + (t.M + 1) * float_bytes + misc_globals,
        serial=serial,
        library_w1=(t.P + 1) * (t.M + 1) * int_bytes,
        library_w2=(t.M + 1) * (t.N + 1) * int_bytes,
        library_coeffs=3 * t.P * int_bytes,
        stack_reserve=stack_reserve,
    )
