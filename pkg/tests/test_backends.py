import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from telebridge.backends import (
    BackendError,
    FixtureGapError,
    HashingEmbedder,
    HTTPBackend,
    RetryableBackendError,
    ScriptedBackend,
    ScriptedFixture,
    complete,
    cosine,
    embed,
    tokenize,
)


def test_exact_fixture():
    assert complete(ScriptedBackend(ScriptedFixture({"ping": "pong"})), "ping") == "pong"


def test_fixture_gap():
    with pytest.raises(FixtureGapError):
        complete(ScriptedBackend(ScriptedFixture({"ping": "pong"})), "unseen")


def test_exact_beats_pattern_and_longest_pattern_wins():
    fx = ScriptedFixture({"re:.*": "any", "re:hello .*": "greeting", "hello world": "exact"})
    assert fx.lookup("hello world") == "exact"
    assert fx.lookup("hello there") == "greeting"
    assert fx.lookup("bye") == "any"


def test_pattern_must_match_whole_prompt():
    fx = ScriptedFixture({"re:abc": "x"})
    with pytest.raises(FixtureGapError):
        fx.lookup("abcd")


def test_error_entry_is_retryable():
    with pytest.raises(RetryableBackendError):
        complete(ScriptedBackend(ScriptedFixture({"p": {"error": "down"}})), "p")


def test_merged_fixture_overrides():
    a = ScriptedFixture({"p": "a", "re:q.*": "qa"})
    b = ScriptedFixture({"p": "b"})
    m = a.merged(b)
    assert m.lookup("p") == "b" and m.lookup("qq") == "qa"


def test_empty_prompt_and_length_limit():
    be = ScriptedBackend(ScriptedFixture({"re:.*": "x"}), max_prompt_length=5)
    with pytest.raises(ValueError):
        complete(be, "")
    with pytest.raises(ValueError):
        complete(be, "toolong")


class _Stub(BaseHTTPRequestHandler):
    status = 200
    body = {"choices": [{"message": {"role": "assistant", "content": "hi from the stub"}}]}
    seen: list = []

    def log_message(self, *a):
        pass

    def do_POST(self):
        n = int(self.headers["Content-Length"])
        _Stub.seen.append((self.path, self.headers.get("Authorization"), json.loads(self.rfile.read(n))))
        data = json.dumps(self.body).encode()
        self.send_response(self.status)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture
def stub():
    srv = HTTPServer(("127.0.0.1", 0), _Stub)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()
    _Stub.status = 200
    _Stub.seen.clear()


def test_http_backend_against_stub(stub):
    be = HTTPBackend(f"http://127.0.0.1:{stub.server_address[1]}", model="m", token="t")
    assert complete(be, "hello") == "hi from the stub"
    path, auth, body = _Stub.seen[-1]
    assert path == "/v1/chat/completions" and auth == "Bearer t"
    assert body["messages"] == [{"role": "user", "content": "hello"}] and body["temperature"] == 0.0


def test_http_backend_server_error_is_retryable(stub):
    _Stub.status = 503
    with pytest.raises(RetryableBackendError):
        HTTPBackend(f"http://127.0.0.1:{stub.server_address[1]}").complete("hello")


def test_http_backend_client_error(stub):
    _Stub.status = 400
    with pytest.raises(BackendError) as ei:
        HTTPBackend(f"http://127.0.0.1:{stub.server_address[1]}").complete("hello")
    assert not isinstance(ei.value, RetryableBackendError)


def test_http_backend_unreachable():
    with pytest.raises(RetryableBackendError):
        HTTPBackend("http://127.0.0.1:9", timeout_ms=500).complete("hello")


def _oracle_embed(text: str, dim: int) -> np.ndarray:
    # independent recomputation of the documented scheme: blake2b-64 little endian mod dim
    v = np.zeros(dim)
    for tok in tokenize(text) or tokenize(text, drop_stopwords=False) or [text.strip().lower()]:
        v[int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "little") % dim] += 1
    return v / np.sqrt((v * v).sum())


def test_hashing_embedding_of_a_dim8():
    got = embed(HashingEmbedder(8), "a")
    assert got.shape == (8,)
    np.testing.assert_allclose(got, _oracle_embed("a", 8), atol=1e-12)
    assert abs(np.linalg.norm(got) - 1) < 1e-9


VOCAB = "signal drop wearable icu latency upload device router sensor packet loss cell tower robot truck meter feed frame stream shaft".split()


@settings(max_examples=200)
@given(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=6), st.lists(st.sampled_from(VOCAB), min_size=1, max_size=6))
def test_cosine_below_one_unless_proportional(a, b):
    e = HashingEmbedder()
    c = cosine(embed(e, " ".join(a)), embed(e, " ".join(b)))
    ca, cb = {}, {}
    for w in a:
        ca[w] = ca.get(w, 0) + 1
    for w in b:
        cb[w] = cb.get(w, 0) + 1
    # equal directions iff the count vectors are proportional (equal multisets are the common case)
    proportional = set(ca) == set(cb) and len({ca[w] / cb[w] for w in ca}) == 1
    if proportional:
        assert c == pytest.approx(1.0, abs=1e-12)
    else:
        assert c < 1 - 1e-9


@given(st.text(min_size=1).filter(str.strip))
def test_embedding_unit_norm_and_deterministic(text):
    e = HashingEmbedder()
    v1, v2 = embed(e, text), embed(e, text)
    assert abs(np.linalg.norm(v1) - 1) < 1e-9
    assert np.array_equal(v1, v2)
