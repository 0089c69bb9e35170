"""Text-generation and embedding backends.

Three roles share one interface: a scripted mock replayed from a fixture
file (all deterministic tests), a remote chat-completions HTTP client (real
teacher/student models), and a deterministic bag-of-words hashing embedder
that serves as the default `embed` so similarity logic runs offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import requests

EMBED_DIM = 256

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class BackendError(RuntimeError):
    """A backend failed to produce output (transport error, bad reply, exhausted script)."""


class HashingEmbedder:
    """Deterministic feature-hashing embedder over lowercase word tokens.

    Each token is hashed into one of `dim` signed buckets; collisions are
    acceptable for near-duplicate command detection. Texts with no tokens
    map to a fixed basis vector so the result is never the zero vector.
    """

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            digest = int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "big")
            sign = 1.0 if digest & 1 else -1.0
            vec[(digest >> 1) % self.dim] += sign
        if not vec.any():
            vec[0] = 1.0
        return vec


class GenerationBackend:
    """Interface for anything that can generate text and embed it.

    `max_in_flight` declares the concurrency limit callers must honor;
    rendering and orchestration code in this package is sequential, so the
    default of 1 is only a contract for external callers.
    """

    max_in_flight: int = 1

    def __init__(self, embedder: HashingEmbedder | None = None):
        self._embedder = embedder or HashingEmbedder()

    def generate(self, prompt: str) -> str:
        raise NotImplementedError

    def embed(self, text: str) -> np.ndarray:
        return self._embedder.embed(text)

    def set_checkpoint(self, ident: str) -> None:
        """Re-point the backend at a new model checkpoint; no-op by default."""


@dataclass
class FixtureEntry:
    response: str
    match: str | None = None
    delay_ms: float = 0.0


class MockBackend(GenerationBackend):
    """Scripted backend driven by an ordered response fixture.

    Each generate() consumes the first remaining entry whose `match`
    substring (if any) occurs in the prompt. With `loop=True` the script
    restarts once exhausted; otherwise running out raises BackendError.
    """

    def __init__(self, entries: list[FixtureEntry], loop: bool = False):
        super().__init__()
        self._entries = list(entries)
        self._pending = list(entries)
        self._loop = loop
        self.prompts: list[str] = []
        self.checkpoints: list[str] = []

    @classmethod
    def from_fixture(cls, path: str, loop: bool = False) -> "MockBackend":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                entries.append(
                    FixtureEntry(
                        response=doc["response"],
                        match=doc.get("match"),
                        delay_ms=float(doc.get("delay_ms", 0.0)),
                    )
                )
        return cls(entries, loop=loop)

    def _take(self, prompt: str) -> FixtureEntry | None:
        for i, entry in enumerate(self._pending):
            if entry.match is None or entry.match in prompt:
                del self._pending[i]
                return entry
        return None

    def generate(self, prompt: str) -> str:
        self.prompts.append(prompt)
        entry = self._take(prompt)
        if entry is None and self._loop and self._entries:
            # restart the script once when nothing left matches
            self._pending = list(self._entries)
            entry = self._take(prompt)
        if entry is None:
            raise BackendError("mock fixture exhausted (no remaining entry matches the prompt)")
        if entry.delay_ms > 0:
            time.sleep(entry.delay_ms / 1000.0)
        return entry.response

    def set_checkpoint(self, ident: str) -> None:
        self.checkpoints.append(ident)


@dataclass
class HTTPBackendConfig:
    base_url: str
    model: str
    api_key_env: str = "DEVICETALK_API_KEY"
    timeout_s: float = 60.0
    embeddings_model: str | None = None


class HTTPBackend(GenerationBackend):
    """Chat-completions-style JSON-over-HTTP client.

    Embeddings fall back to the local hashing embedder unless an embeddings
    model is configured on the remote side.
    """

    max_in_flight = 4

    def __init__(self, config: HTTPBackendConfig):
        super().__init__()
        self.config = config
        self._session = requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def generate(self, prompt: str) -> str:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            resp = self._session.post(url, json=body, headers=self._headers(), timeout=self.config.timeout_s)
            resp.raise_for_status()
            doc = resp.json()
            return doc["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError(f"generation request failed: {exc}") from exc

    def embed(self, text: str) -> np.ndarray:
        if self.config.embeddings_model is None:
            return super().embed(text)
        url = self.config.base_url.rstrip("/") + "/embeddings"
        body = {"model": self.config.embeddings_model, "input": text}
        try:
            resp = self._session.post(url, json=body, headers=self._headers(), timeout=self.config.timeout_s)
            resp.raise_for_status()
            return np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError(f"embedding request failed: {exc}") from exc

    def set_checkpoint(self, ident: str) -> None:
        self.config.model = ident


def backend_from_config(doc: Mapping) -> GenerationBackend:
    """Build a backend from its JSON config form.

    ``{"type": "mock", "fixture": path, "loop": false}`` or
    ``{"type": "http", "base_url": ..., "model": ..., "api_key_env": ...,
    "timeout_s": 60, "embeddings_model": null}``.
    """
    kind = doc.get("type")
    if kind == "mock":
        return MockBackend.from_fixture(doc["fixture"], loop=bool(doc.get("loop", False)))
    if kind == "http":
        return HTTPBackend(
            HTTPBackendConfig(
                base_url=doc["base_url"],
                model=doc["model"],
                api_key_env=doc.get("api_key_env", "DEVICETALK_API_KEY"),
                timeout_s=float(doc.get("timeout_s", 60.0)),
                embeddings_model=doc.get("embeddings_model"),
            )
        )
    raise ValueError(f"unknown backend type {kind!r}")


def load_backend(path: str) -> GenerationBackend:
    """Load a backend from a JSON config file; bare ``.jsonl`` paths are
    treated as mock fixtures for convenience."""
    if path.endswith(".jsonl"):
        return MockBackend.from_fixture(path)
    with open(path, encoding="utf-8") as fh:
        return backend_from_config(json.load(fh))
