import socket
import threading
import time

import numpy as np
import pytest

from rbvsense.chaos import Topology
from rbvsense.exceptions import ArityError
from rbvsense.hgb import HgbParams, train_hgb
from rbvsense.net import (
    CloudService,
    CloudUnavailable,
    EdgeNode,
    RoutePolicy,
    edge_predict,
    format_request,
    handle_request,
    parse_address,
    parse_diag,
    request_cloud,
)
from rbvsense.quantize import quantize
from rbvsense.synthetic import PRESETS, generate_synthetic

from conftest import random_lognnet

POLICY = dict(connect_timeout_ms=200, response_timeout_ms=300, retries=1)


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(PRESETS["cruciform"], 60, seed=0)


@pytest.fixture(scope="module")
def hgb(data):
    return train_hgb(data.X, data.y, HgbParams(trees=10, min_samples_leaf=5))


@pytest.fixture(scope="module")
def edge_model():
    return quantize(random_lognnet(np.random.default_rng(0), Topology(6, 8, 4, 1)))


class Stub:
    """One-behaviour TCP server: ``behaviour(conn)`` handles each connection."""

    def __init__(self, behaviour):
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(8)
        self.behaviour = behaviour
        self.connections = 0
        self.stop = threading.Event()
        self.thread = threading.Thread(target=self.loop, daemon=True)
        self.thread.start()

    @property
    def address(self):
        return self.sock.getsockname()

    def loop(self):
        self.sock.settimeout(0.05)
        while not self.stop.is_set():
            try:
                conn, _ = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            self.connections += 1
            threading.Thread(target=self.serve, args=(conn,), daemon=True).start()

    def serve(self, conn):
        with conn:
            try:
                self.behaviour(conn)
            except OSError:
                pass

    def close(self):
        self.stop.set()
        self.thread.join()
        self.sock.close()


def read_request(conn):
    buf = b""
    while buf.count(b"\n") < 2:
        chunk = conn.recv(4096)
        if not chunk:
            return buf
        buf += chunk
    return buf


def silent(conn):
    read_request(conn)
    time.sleep(2)


def disconnect(conn):
    read_request(conn)
    conn.sendall(b"DIAG 1 CO")


def err_reply(conn):
    read_request(conn)
    conn.sendall(b"ERR PARSE bad-value\n")


def garbage(conn):
    read_request(conn)
    conn.sendall(b"\x00\xffhello\n")


def free_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def timed_fallback(edge_model, x, address, budget_ms):
    policy = RoutePolicy(address, **POLICY)
    t0 = time.monotonic()
    resp = edge_predict(edge_model, x, policy)
    elapsed = (time.monotonic() - t0) * 1000
    assert resp.model == "edge-lognnet"
    assert resp.diagnosis in (0, 1) and 0 <= resp.confidence <= 1
    assert resp.detail
    assert elapsed <= budget_ms * (POLICY["retries"] + 1) + 100
    return resp


def test_live_service_answers(hgb, edge_model, data):
    with CloudService(hgb) as svc:
        resp = edge_predict(edge_model, data.X[0], RoutePolicy(svc.address, **POLICY))
    assert resp.model == "cloud-hgb"
    p = hgb.predict_proba1(data.X[:1])[0]
    assert resp.diagnosis == int(p >= 0.5)
    assert resp.confidence == pytest.approx(max(p, 1 - p), abs=1e-6)


def test_refused(edge_model, data):
    timed_fallback(edge_model, data.X[0], ("127.0.0.1", free_port()), POLICY["connect_timeout_ms"])


def test_unroutable(edge_model, data):
    timed_fallback(edge_model, data.X[0], ("10.255.255.1", 9), POLICY["connect_timeout_ms"])


@pytest.mark.parametrize("behaviour", [silent, disconnect, err_reply, garbage])
def test_stub_failures_fall_back(edge_model, data, behaviour):
    stub = Stub(behaviour)
    try:
        resp = timed_fallback(edge_model, data.X[0], stub.address, POLICY["response_timeout_ms"])
    finally:
        stub.close()
    assert stub.connections == POLICY["retries"] + 1
    assert resp.diagnosis == EdgeNode(edge_model, offline=True).predict(data.X[0]).diagnosis


def test_retry_count_respected(edge_model, data):
    stub = Stub(err_reply)
    try:
        edge_predict(edge_model, data.X[0], RoutePolicy(stub.address, 200, 300, retries=3))
    finally:
        stub.close()
    assert stub.connections == 4


def test_arity_is_checked_before_network(edge_model):
    with pytest.raises(ArityError):
        edge_predict(edge_model, [1.0, 2.0], RoutePolicy(("127.0.0.1", free_port()), **POLICY))


def test_scaler_applies_on_local_path_only(edge_model, data):
    from rbvsense.preprocessing import fit_scaler_array

    scaler = fit_scaler_array(data.X, "minmax")
    node = EdgeNode(edge_model, scaler, offline=True)
    plain = EdgeNode(edge_model, offline=True)
    from rbvsense.preprocessing import apply_scaler_array

    scaled = apply_scaler_array(scaler, data.X[:1])[0]
    assert node.predict(data.X[0]) == plain.predict(scaled)


def converse(address, payload):
    with socket.create_connection(address, timeout=2) as s:
        s.sendall(payload)
        s.shutdown(socket.SHUT_WR)
        out = b""
        while True:
            chunk = s.recv(4096)
            if not chunk:
                return out.decode().splitlines()
            out += chunk


def test_protocol_errors_keep_connection(hgb, data):
    good = format_request(data.X[0])
    payload = (b"HELLO\n" + good + b"PREDICT v2 n=6\n1,2,3,4,5,6\n" + b"PREDICT v1 n=x\n1\n"
               + b"PREDICT v1\n1\n" + b"PREDICT v1 n=2\n1,zz\n" + b"PREDICT v1 n=2\n1,nan\n"
               + b"PREDICT v1 n=3\n1,2\n" + b"PREDICT v1 n=2\n1,2\n" + good)
    with CloudService(hgb) as svc:
        lines = converse(svc.address, payload)
    assert lines[0] == "ERR PROTO unknown-verb"
    assert lines[1].startswith("DIAG ") and lines[1].endswith("MODEL cloud-hgb")
    assert lines[2:9] == [
        "ERR VERSION unsupported",
        "ERR PROTO bad-count",
        "ERR PROTO bad-header",
        "ERR PARSE bad-value",
        "ERR PARSE non-finite",
        "ERR ARITY expected=3 got=2",
        "ERR ARITY expected=6 got=2",
    ]
    assert lines[9] == lines[1]


def test_concurrent_clients(hgb, data):
    results = {}
    with CloudService(hgb) as svc:
        def client(i):
            results[i] = request_cloud(data.X[i], RoutePolicy(svc.address, 1000, 2000))
        threads = [threading.Thread(target=client, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    expect = (hgb.predict_proba1(data.X[:8]) >= 0.5).astype(int)
    assert [results[i].diagnosis for i in range(8)] == expect.tolist()


def test_handle_request_direct(hgb):
    lines = iter(["0,0,0,0,0,0"])
    reply = handle_request(hgb, "PREDICT v1 n=6", lambda: next(lines))
    assert reply.startswith("DIAG ") and reply.endswith("\n")
    assert handle_request(hgb, "PREDICT v1 n=6", lambda: None) is None


def test_parse_diag_and_address():
    r = parse_diag("DIAG 1 CONF 0.930000 MODEL cloud-hgb\n")
    assert (r.diagnosis, r.confidence, r.model) == (1, 0.93, "cloud-hgb")
    for bad in ("DIAG 2 CONF 0.5 MODEL x", "DIAG 1 CONF 1.5 MODEL x", "nonsense", "ERR PROTO x"):
        with pytest.raises(CloudUnavailable):
            parse_diag(bad)
    assert parse_address("example:80") == ("example", 80)
    assert parse_address(":80") == ("127.0.0.1", 80)
    with pytest.raises(ValueError):
        parse_address("nohost")


def test_default_address_env(monkeypatch):
    from rbvsense.net import default_address

    monkeypatch.setenv("SENSOR_CLOUD_ADDR", "10.0.0.2:9000")
    assert default_address() == ("10.0.0.2", 9000)
    monkeypatch.delenv("SENSOR_CLOUD_ADDR")
    assert default_address() == ("127.0.0.1", 8750)


def test_policy_validation():
    with pytest.raises(ValueError):
        RoutePolicy(None, 0, 100)
    with pytest.raises(ValueError):
        RoutePolicy(None, 100, 100, retries=-1)


def test_answers_do_not_depend_on_request_order(hgb, data):
    requests = [format_request(x) for x in data.X[:12]]
    order = np.random.default_rng(1).permutation(12)
    with CloudService(hgb) as svc:
        straight = converse(svc.address, b"".join(requests))
        shuffled = converse(svc.address, b"".join(requests[i] for i in order))
    assert [shuffled[list(order).index(i)] for i in range(12)] == straight
