"""Cloud HGB service and the edge router that falls back to the on-device model.

Cloud protocol, LF-terminated ASCII lines::

    -> PREDICT v1 n=<count>
    -> <count comma-separated decimals>
    <- DIAG <0|1> CONF <p> MODEL cloud-hgb
    <- ERR <CODE> <detail>

A connection may carry any number of requests; an ``ERR`` reply leaves it
usable.
"""

from __future__ import annotations

import logging
import os
import socket
import socketserver
import threading
import time
from dataclasses import dataclass

import numpy as np

from ._validation import check_arity
from .hgb import HgbModel, predict_hgb
from .preprocessing import ScalerParams, apply_scaler_array
from .quantize import QuantizedModel, emulate_edge_inference

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "v1"
CLOUD_TAG = "cloud-hgb"
EDGE_TAG = "edge-lognnet"
ADDRESS_ENV = "SENSOR_CLOUD_ADDR"
DEFAULT_ADDRESS = "127.0.0.1:8750"
MAX_LINE = 1 << 20


def parse_address(text):
    host, sep, port = str(text).rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def default_address():
    return parse_address(os.environ.get(ADDRESS_ENV, DEFAULT_ADDRESS))


def format_request(values):
    values = list(values)
    return (f"PREDICT {PROTOCOL_VERSION} n={len(values)}\n"
            + ",".join(repr(float(v)) for v in values) + "\n").encode("ascii")


def format_diag(diagnosis, confidence, tag=CLOUD_TAG):
    return f"DIAG {int(diagnosis)} CONF {confidence:.6f} MODEL {tag}\n"


class ProtocolError(Exception):
    def __init__(self, code, detail):
        super().__init__(f"{code} {detail}")
        self.code = code
        self.detail = detail


def handle_request(model: HgbModel, header: str, read_line):
    """Answer one request whose first line is ``header``; returns the reply line.

    ``read_line()`` supplies the values line for ``PREDICT`` requests. A
    malformed ``PREDICT`` header still consumes its values line so the
    connection stays in step.
    """
    parts = header.split(" ")
    if parts[0] != "PREDICT":
        return "ERR PROTO unknown-verb\n"
    values_line = read_line()
    if values_line is None:
        return None
    try:
        if len(parts) != 3 or not parts[2].startswith("n="):
            raise ProtocolError("PROTO", "bad-header")
        if parts[1] != PROTOCOL_VERSION:
            raise ProtocolError("VERSION", "unsupported")
        try:
            n = int(parts[2][2:])
        except ValueError:
            raise ProtocolError("PROTO", "bad-count") from None
        cells = values_line.split(",") if values_line else []
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise ProtocolError("PARSE", "bad-value") from None
        if not all(np.isfinite(values)):
            raise ProtocolError("PARSE", "non-finite")
        if len(values) != n:
            raise ProtocolError("ARITY", f"expected={n} got={len(values)}")
        if n != model.n_features:
            raise ProtocolError("ARITY", f"expected={model.n_features} got={n}")
    except ProtocolError as exc:
        return f"ERR {exc.code} {exc.detail}\n"
    pred = predict_hgb(model, values)
    return format_diag(pred.predicted_class, pred.confidence)


class _Handler(socketserver.StreamRequestHandler):
    timeout = 30.0

    def _line(self):
        raw = self.rfile.readline(MAX_LINE + 1)
        if not raw or (len(raw) > MAX_LINE and not raw.endswith(b"\n")):
            return None
        return raw.decode("ascii", errors="replace").rstrip("\r\n")

    def handle(self):
        model = self.server.model
        try:
            while True:
                header = self._line()
                if header is None:
                    return
                reply = handle_request(model, header, self._line)
                if reply is None:
                    return
                self.wfile.write(reply.encode("ascii"))
                self.wfile.flush()
        except (OSError, socket.timeout) as exc:
            log.debug("connection %s closed: %s", self.client_address, exc)


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class CloudService:
    """Threaded TCP service answering HGB predictions; one thread per connection."""

    def __init__(self, model: HgbModel, address=("127.0.0.1", 0)):
        if isinstance(address, str):
            address = parse_address(address)
        self._server = _Server(address, _Handler)
        self._server.model = model
        self._thread = None

    @property
    def address(self):
        host, port = self._server.server_address[:2]
        return host, port

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever()

    def close(self):
        if self._thread is not None:
            self._server.shutdown()
            self._thread.join()
        self._server.server_close()

    def __enter__(self):
        return self.start() if self._thread is None else self

    def __exit__(self, *exc):
        self.close()


def serve_cloud(model: HgbModel, address=("127.0.0.1", 0)) -> CloudService:
    """Bind and start the service in a background thread."""
    return CloudService(model, address).start()


# -- edge side ------------------------------------------------------------------

@dataclass(frozen=True)
class RoutePolicy:
    address: tuple | None = None
    connect_timeout_ms: float = 500
    response_timeout_ms: float = 1000
    retries: int = 1

    def __post_init__(self):
        if self.connect_timeout_ms <= 0 or self.response_timeout_ms <= 0:
            raise ValueError("timeouts must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @property
    def attempt_budget_s(self):
        return (self.connect_timeout_ms + self.response_timeout_ms) / 1000.0


@dataclass(frozen=True)
class ServiceResponse:
    diagnosis: int
    confidence: float
    model: str
    detail: str = ""

    def line(self):
        return format_diag(self.diagnosis, self.confidence, self.model)


class CloudUnavailable(Exception):
    pass


def parse_diag(line: str) -> ServiceResponse:
    parts = line.rstrip("\n").split(" ")
    if parts[0] == "ERR":
        raise CloudUnavailable(f"service error: {line.strip()}")
    if len(parts) != 6 or parts[0] != "DIAG" or parts[2] != "CONF" or parts[4] != "MODEL":
        raise CloudUnavailable(f"unparseable reply {line[:60]!r}")
    try:
        diagnosis, conf = int(parts[1]), float(parts[3])
    except ValueError:
        raise CloudUnavailable(f"unparseable reply {line[:60]!r}") from None
    if diagnosis not in (0, 1) or not 0.0 <= conf <= 1.0:
        raise CloudUnavailable(f"out-of-range reply {line[:60]!r}")
    return ServiceResponse(diagnosis, conf, parts[5])


def request_cloud(values, policy: RoutePolicy) -> ServiceResponse:
    """One request/response exchange; any failure raises :class:`CloudUnavailable`."""
    address = policy.address or default_address()
    try:
        sock = socket.create_connection(address, timeout=policy.connect_timeout_ms / 1000.0)
    except OSError as exc:
        raise CloudUnavailable(f"connect failed: {exc}") from None
    deadline = time.monotonic() + policy.response_timeout_ms / 1000.0
    buf = b""
    try:
        with sock:
            sock.settimeout(policy.response_timeout_ms / 1000.0)
            sock.sendall(format_request(values))
            while b"\n" not in buf:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise CloudUnavailable("response timeout")
                sock.settimeout(remaining)
                chunk = sock.recv(4096)
                if not chunk:
                    raise CloudUnavailable("connection closed before reply")
                buf += chunk
                if len(buf) > MAX_LINE:
                    raise CloudUnavailable("oversized reply")
    except socket.timeout:
        raise CloudUnavailable("response timeout") from None
    except OSError as exc:
        raise CloudUnavailable(f"transport error: {exc}") from None
    line = buf.split(b"\n", 1)[0].decode("ascii", errors="replace")
    resp = parse_diag(line)
    if resp.model != CLOUD_TAG:
        raise CloudUnavailable(f"unexpected model tag {resp.model!r}")
    return resp


def local_predict(q: QuantizedModel, values, scaler: ScalerParams | None = None) -> ServiceResponse:
    x = np.asarray(values, dtype=float)
    if scaler is not None:
        x = apply_scaler_array(scaler, x[None, :])[0]
    out = emulate_edge_inference(q, x)
    return ServiceResponse(out.predicted_class, out.confidence, EDGE_TAG)


def edge_predict(q: QuantizedModel, values, policy: RoutePolicy | None = None,
                 scaler: ScalerParams | None = None) -> ServiceResponse:
    """Ask the cloud first; on any transport or protocol failure answer locally.

    ``values`` are raw features; ``scaler`` (if any) is applied only on the
    local path. The response's ``model`` tag says which path answered.
    """
    policy = policy or RoutePolicy()
    values = np.asarray(values, dtype=float)
    check_arity(values.shape[-1], q.topology.S, "edge input")
    reason = ""
    for attempt in range(policy.retries + 1):
        try:
            return request_cloud(values, policy)
        except CloudUnavailable as exc:
            reason = str(exc)
            log.info("cloud attempt %d failed: %s", attempt + 1, reason)
    local = local_predict(q, values, scaler)
    return ServiceResponse(local.diagnosis, local.confidence, local.model, reason)


class EdgeNode:
    """Edge device state: quantized model, optional input scaler, routing policy."""

    def __init__(self, model: QuantizedModel, scaler: ScalerParams | None = None,
                 policy: RoutePolicy | None = None, offline=False):
        self.model = model
        self.scaler = scaler
        self.policy = policy or RoutePolicy()
        self.offline = offline

    def predict(self, values) -> ServiceResponse:
        if self.offline:
            check_arity(len(values), self.model.topology.S, "edge input")
            return local_predict(self.model, values, self.scaler)
        return edge_predict(self.model, values, self.policy, self.scaler)
