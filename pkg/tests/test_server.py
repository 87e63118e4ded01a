import http.client
import json
import socket
import threading

import pytest

from conftest import TABLE5_QUERY
from telebridge.core import CLARIFY_MESSAGE, TelebridgeError
from telebridge.server import MAX_BODY, make_server


@pytest.fixture(scope="module")
def server(res, cfg):
    httpd = make_server("127.0.0.1", 0, res, cfg)
    t = threading.Thread(target=httpd.serve_forever, daemon=True)
    t.start()
    yield httpd.server_address[:2]
    httpd.shutdown()
    httpd.server_close()


def call(addr, method, path, body=None, raw=None):
    conn = http.client.HTTPConnection(*addr, timeout=30)
    data = raw if raw is not None else (json.dumps(body).encode() if body is not None else None)
    conn.request(method, path, body=data, headers={"Content-Type": "application/json"})
    resp = conn.getresponse()
    out = resp.status, resp.read().decode()
    conn.close()
    return out


def test_healthz(server):
    assert call(server, "GET", "/healthz") == (200, "ok")


def test_valid_query(server):
    status, body = call(server, "POST", "/v1/troubleshoot", {"query": TABLE5_QUERY})
    assert status == 200
    d = json.loads(body)
    assert d["outcome"] == "answered" and "trace" not in d
    assert "-85 dBm" in d["response"]["text"]


def test_trace_opt_in(server):
    status, body = call(server, "POST", "/v1/troubleshoot", {"query": TABLE5_QUERY, "include_trace": True})
    assert status == 200
    assert len(json.loads(body)["trace"]["stages"]) == 6


def test_clarification_is_200(server):
    status, body = call(server, "POST", "/v1/troubleshoot", {"query": "xq zzv blorp"})
    assert status == 200
    assert json.loads(body)["clarification"]["message"] == CLARIFY_MESSAGE


@pytest.mark.parametrize(
    "payload",
    [{"query": ""}, {"query": "   "}, {"query": 5}, {"text": "hi"}, [1, 2], {"query": "ok", "vertical_hint": 3}],
)
def test_bad_bodies_400(server, payload):
    status, body = call(server, "POST", "/v1/troubleshoot", payload)
    assert status == 400
    assert "error" in json.loads(body)


def test_invalid_json_400(server):
    assert call(server, "POST", "/v1/troubleshoot", raw=b"{not json")[0] == 400


def test_too_large_413(server):
    # headers only: the server must answer from Content-Length without reading the body
    with socket.create_connection(server, timeout=10) as sock:
        sock.sendall(f"POST /v1/troubleshoot HTTP/1.1\r\nHost: x\r\nContent-Length: {MAX_BODY + 1}\r\n\r\n".encode())
        reply = sock.makefile("rb").read().decode()
    assert reply.startswith("HTTP/1.1 413")
    assert "Connection: close" in reply


def test_unknown_route_404(server):
    assert call(server, "GET", "/nope")[0] == 404
    assert call(server, "POST", "/v2/troubleshoot", {"query": "x"})[0] == 404


def test_concurrent_requests(server):
    results = []

    def worker():
        results.append(call(server, "POST", "/v1/troubleshoot", {"query": TABLE5_QUERY}))

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=60)
    assert len(results) == 8
    texts = {json.loads(b)["response"]["text"] for s, b in results if s == 200}
    assert len(texts) == 1


def test_bind_failure(server, res):
    with pytest.raises(TelebridgeError):
        make_server(server[0], server[1], res)


def test_sigterm_graceful_shutdown(tmp_path):
    import signal
    import subprocess
    import sys
    import time

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    proc = subprocess.Popen([sys.executable, "-m", "telebridge.cli", "serve", "--port", str(port)], stderr=subprocess.PIPE)
    try:
        deadline = time.time() + 30
        while True:
            try:
                if call(("127.0.0.1", port), "GET", "/healthz")[0] == 200:
                    break
            except OSError:
                if time.time() > deadline:
                    raise
                time.sleep(0.1)
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=30) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
