"""``T``-delimited serial frames: ``v1Tv2T...vnTFNT``.

Every token, the ``FN`` terminator included, ends with ``T`` because the
receiver reads strictly up to the next ``T``. Numeric tokens that do not
parse become 0.0, like the device's string-to-float conversion, but the
frame records which positions were malformed.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from decimal import Decimal

DELIMITER = b"T"
TERMINATOR = "FN"
SIGNIFICANT_DIGITS = 7

_NUMERIC_PREFIX = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


def format_value(v) -> str:
    """Plain decimal with up to 7 significant digits, no exponent, no trailing zeros."""
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"cannot encode non-finite value {v!r}")
    if v == 0:
        return "0"
    text = format(Decimal(f"{v:.{SIGNIFICANT_DIGITS}g}"), "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


def encode_frame(values) -> bytes:
    return "".join(format_value(v) + "T" for v in values).encode("ascii") + b"FNT"


@dataclass(frozen=True)
class WireFrame:
    values: tuple
    malformed: tuple = field(default=())   # indices of tokens that fell back to 0.0

    @property
    def ok(self):
        return not self.malformed


def parse_token(token: str):
    """Return ``(value, clean)``; leading numeric prefix wins, else 0.0."""
    text = token.strip()
    m = _NUMERIC_PREFIX.match(text)
    if m is None:
        return 0.0, False
    value = float(m.group(0))
    clean = m.end() == len(text) and math.isfinite(value)
    return (value if math.isfinite(value) else 0.0), clean


class FrameParser:
    """Incremental decoder; feed arbitrary chunks, collect completed frames.

    One parser per connection. Partial tokens are carried across calls, so
    the frame sequence does not depend on how the byte stream is split.
    """

    def __init__(self):
        self._partial = bytearray()
        self._values = []
        self._bad = []

    @property
    def pending_tokens(self):
        return len(self._values)

    def feed(self, data: bytes):
        frames = []
        self._partial.extend(data)
        while True:
            cut = self._partial.find(DELIMITER)
            if cut < 0:
                break
            token = self._partial[:cut].decode("ascii", errors="replace")
            del self._partial[: cut + 1]
            if token.strip() == TERMINATOR:
                frames.append(WireFrame(tuple(self._values), tuple(self._bad)))
                self._values, self._bad = [], []
                continue
            value, clean = parse_token(token)
            if not clean:
                self._bad.append(len(self._values))
            self._values.append(value)
        return frames


def decode_frames(data: bytes):
    """Decode a whole buffer; incomplete trailing data is ignored."""
    return FrameParser().feed(data)
