"""Completion, embedding and judge backends.

Two completion implementations ship: :class:`ScriptedBackend`, which replays
canned responses from a fixture and is what the tests use, and
:class:`HTTPBackend`, which talks to a chat-completions style endpoint.

HTTP wire contract (the only one)::

    POST {base_url}/v1/chat/completions
    {"model": str, "messages": [{"role": "user", "content": prompt}],
     "temperature": float, "max_tokens"?: int, "seed"?: int}

    200 -> {"choices": [{"message": {"role": "assistant", "content": str}}]}
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import TelebridgeError

logger = logging.getLogger(__name__)

ENV_BACKEND_URL = "TELEBRIDGE_BACKEND_URL"
ENV_BACKEND_TOKEN = "TELEBRIDGE_BACKEND_TOKEN"
ENV_BACKEND_MODEL = "TELEBRIDGE_BACKEND_MODEL"


class BackendError(TelebridgeError):
    pass


class RetryableBackendError(BackendError):
    """Transport-level failure; the caller may retry."""


class FixtureGapError(BackendError):
    """A scripted backend was probed with a prompt its fixture does not cover."""

    def __init__(self, probe: str):
        super().__init__(f"no fixture entry matches probe: {probe[:200]!r}")
        self.probe = probe


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    max_tokens: Optional[int] = None
    seed: Optional[int] = None


DETERMINISTIC = DecodingParams()


@runtime_checkable
class CompletionBackend(Protocol):
    name: str
    max_prompt_length: int

    def complete(self, prompt: str, params: DecodingParams = DETERMINISTIC) -> str: ...


@runtime_checkable
class EmbeddingBackend(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def complete(backend: CompletionBackend, prompt: str, params: DecodingParams = DETERMINISTIC) -> str:
    if not prompt:
        raise ValueError("prompt must be non-empty")
    if len(prompt) > backend.max_prompt_length:
        raise ValueError(f"prompt length {len(prompt)} exceeds {backend.name} limit {backend.max_prompt_length}")
    out = backend.complete(prompt, params)
    if not out:
        raise BackendError(f"{backend.name} returned an empty completion")
    return out


def embed(backend: EmbeddingBackend, text: str) -> np.ndarray:
    if not text or not text.strip():
        raise ValueError("text must be non-empty")
    vec = np.asarray(backend.embed(text), dtype=float)
    if vec.shape != (backend.dimension,) or not np.all(np.isfinite(vec)):
        raise BackendError(f"embedding backend returned shape {vec.shape}, expected ({backend.dimension},)")
    return vec


# --------------------------------------------------------------------------- scripted


PATTERN_PREFIX = "re:"


@dataclass(frozen=True)
class _Entry:
    matcher: str
    response: str | dict
    pattern: Optional[re.Pattern]


class ScriptedFixture:
    """Map of prompt matchers to canned responses.

    A key is either an exact prompt or, prefixed with ``re:``, a regular
    expression that must match the whole prompt. An exact key wins over any
    pattern; among several matching patterns the longest matcher wins, then
    file order. A response may be ``{"error": "..."}`` to simulate a
    transport failure.
    """

    def __init__(self, entries: dict[str, str | dict]):
        self._exact: dict[str, str | dict] = {}
        self._patterns: list[_Entry] = []
        for key, resp in entries.items():
            if not isinstance(resp, (str, dict)):
                raise ValueError(f"fixture response for {key!r} must be a string or error object")
            if key.startswith(PATTERN_PREFIX):
                self._patterns.append(_Entry(key, resp, re.compile(key[len(PATTERN_PREFIX):], re.DOTALL)))
            else:
                self._exact[key] = resp

    @classmethod
    def load(cls, path: str | Path) -> "ScriptedFixture":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def merged(self, other: "ScriptedFixture") -> "ScriptedFixture":
        entries = {e.matcher: e.response for e in self._patterns}
        entries.update(self._exact)
        entries.update({e.matcher: e.response for e in other._patterns})
        entries.update(other._exact)
        return ScriptedFixture(entries)

    def lookup(self, probe: str) -> str | dict:
        if probe in self._exact:
            return self._exact[probe]
        hits = [e for e in self._patterns if e.pattern.fullmatch(probe)]
        if not hits:
            raise FixtureGapError(probe)
        # max() keeps the first of equal-length matchers
        return max(hits, key=lambda e: len(e.matcher)).response


class ScriptedBackend:
    """Deterministic completion backend replaying a :class:`ScriptedFixture`."""

    def __init__(self, fixture: ScriptedFixture, name: str = "scripted", max_prompt_length: int = 100_000):
        self.fixture = fixture
        self.name = name
        self.max_prompt_length = max_prompt_length
        self._lock = threading.Lock()
        self.calls: list[str] = []

    def complete(self, prompt: str, params: DecodingParams = DETERMINISTIC) -> str:
        with self._lock:
            self.calls.append(prompt)
        resp = self.fixture.lookup(prompt)
        if isinstance(resp, dict):
            raise RetryableBackendError(resp.get("error", "scripted failure"))
        return resp


# --------------------------------------------------------------------------- http


class HTTPBackend:
    def __init__(
        self,
        base_url: str,
        model: str = "default",
        token: Optional[str] = None,
        timeout_ms: int = 30_000,
        name: str = "http",
        max_prompt_length: int = 32_000,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.token = token
        self.timeout_ms = timeout_ms
        self.name = name
        self.max_prompt_length = max_prompt_length

    @classmethod
    def from_env(cls, base_url: Optional[str] = None, timeout_ms: int = 30_000) -> "HTTPBackend":
        url = base_url or os.environ.get(ENV_BACKEND_URL)
        if not url:
            raise BackendError(f"no backend URL given and {ENV_BACKEND_URL} is unset")
        return cls(
            url,
            model=os.environ.get(ENV_BACKEND_MODEL, "default"),
            token=os.environ.get(ENV_BACKEND_TOKEN),
            timeout_ms=timeout_ms,
        )

    def request_body(self, prompt: str, params: DecodingParams) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
        }
        if params.max_tokens is not None:
            body["max_tokens"] = params.max_tokens
        if params.seed is not None:
            body["seed"] = params.seed
        return body

    def complete(self, prompt: str, params: DecodingParams = DETERMINISTIC) -> str:
        data = json.dumps(self.request_body(prompt, params)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        req = urllib.request.Request(f"{self.base_url}/v1/chat/completions", data=data, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_ms / 1000) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code >= 500 or exc.code == 429:
                raise RetryableBackendError(f"{self.name}: HTTP {exc.code}") from exc
            raise BackendError(f"{self.name}: HTTP {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise RetryableBackendError(f"{self.name}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BackendError(f"{self.name}: response is not JSON") from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"{self.name}: response lacks choices[0].message.content") from exc


# --------------------------------------------------------------------------- embeddings

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:['-][a-z0-9]+)*")

STOPWORDS = frozenset(
    """a an the and or but of to in on at for from by with is are was were be been it its this that
    these those as into than then so if my our your their his her i we you they he she me us them
    has have had do does did not no very just also there here s""".split()
)


def tokenize(text: str, drop_stopwords: bool = True) -> list[str]:
    toks = _TOKEN_RE.findall(text.lower())
    if drop_stopwords:
        toks = [t for t in toks if t not in STOPWORDS]
    return toks


def hash_bucket(token: str, dimension: int) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") % dimension


class HashingEmbedder:
    """Bag-of-words token hashing into ``dimension`` buckets, L2-normalized.

    Tokens are lowercase alphanumeric runs with stopwords removed; each token
    adds 1 to bucket ``blake2b(token) mod dimension``. If no token survives,
    stopwords are kept; if the text has no alphanumerics at all, the stripped
    text itself is the single token.
    """

    def __init__(self, dimension: int = 1024):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension

    def tokens(self, text: str) -> list[str]:
        toks = tokenize(text) or tokenize(text, drop_stopwords=False)
        return toks or [text.strip().lower()]

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension)
        for tok in self.tokens(text):
            vec[hash_bucket(tok, self.dimension)] += 1.0
        return vec / np.linalg.norm(vec)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
