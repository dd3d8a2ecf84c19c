"""Text generation, logit scoring and embedding backends.

Three capabilities, each a small protocol:

* ``ChatBackend.chat(ChatRequest) -> str``
* ``LogitBackend.score_logits(LogitRequest) -> LogitVector``
* ``Embedder.embed(text) -> EmbeddingVector``

Scripted implementations are pure functions of the request and drive every
test. ``HttpChat``/``HttpEmbedder`` speak a chat-completions style JSON wire
format. ``CachedChat``/``CachedLogits``/``CachedEmbedder`` put a persistent
response cache in front of any backend.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .errors import BackendError, TransportError, UnsupportedError

# Filled into slots for answers a backend did not score. Finite so softmax
# stays well defined; exp() of it underflows to exactly 0.
MISSING_LOGIT = -1.0e9


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    max_tokens: int = 512
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.system_prompt.strip() or not self.user_prompt.strip():
            raise ValueError("chat prompts must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass(frozen=True)
class LogitRequest:
    prompt: str
    answer_tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "answer_tokens", tuple(self.answer_tokens))
        if not self.answer_tokens:
            raise ValueError("answer_tokens must be non-empty")
        if len(set(self.answer_tokens)) != len(self.answer_tokens):
            raise ValueError("answer_tokens must be pairwise distinct")


@dataclass(frozen=True)
class LogitVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        for v in self.values:
            if not math.isfinite(v):
                raise ValueError("logits must be finite (use MISSING_LOGIT for gaps)")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("embedding must have positive dimension")
        if not any(self.values):
            raise ValueError("embedding must not be all-zero")

    @property
    def dimension(self) -> int:
        return len(self.values)


def digit_answers(m: int) -> tuple[str, ...]:
    """Answer tokens for "how many of m milestones": "0" .. "m"."""
    return tuple(str(i) for i in range(m + 1))


class ChatBackend(Protocol):
    def chat(self, req: ChatRequest) -> str: ...


class LogitBackend(Protocol):
    def score_logits(self, req: LogitRequest) -> LogitVector: ...


class Embedder(Protocol):
    model_id: str
    dimension: int

    def embed(self, text: str) -> EmbeddingVector: ...


def align_logits(answer_tokens: Sequence[str], scored: dict[str, float]) -> LogitVector:
    """Order backend scores by ``answer_tokens``; unscored answers get MISSING_LOGIT."""
    return LogitVector(tuple(scored.get(tok, MISSING_LOGIT) for tok in answer_tokens))


# --- scripted backends ---------------------------------------------------


def chat_key(system_prompt: str, user_prompt: str) -> str:
    """Fixture key for a chat prompt pair."""
    blob = json.dumps([system_prompt, user_prompt], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def logit_key(prompt: str, answer_tokens: Sequence[str]) -> str:
    blob = json.dumps([prompt, list(answer_tokens)], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ScriptedChat:
    """Canned completions keyed on ``chat_key`` of the prompts.

    Unknown prompts raise BackendError when ``strict``; otherwise they go to
    ``fallback`` (which must exist).
    """

    def __init__(self, table: dict[str, str] | None = None, *, strict: bool = True,
                 fallback: ChatBackend | None = None):
        self.table = dict(table or {})
        self.strict = strict
        self.fallback = fallback

    def add(self, system_prompt: str, user_prompt: str, response: str) -> None:
        self.table[chat_key(system_prompt, user_prompt)] = response

    def chat(self, req: ChatRequest) -> str:
        key = chat_key(req.system_prompt, req.user_prompt)
        if key in self.table:
            return self.table[key]
        if self.strict or self.fallback is None:
            raise BackendError(f"no scripted completion for prompt {key[:12]}")
        return self.fallback.chat(req)


class ScriptedLogits:
    """Canned logit tables keyed on (prompt, answer tokens).

    A table row may cover only some answers: ``{"0": 0.0, "2": 3.0}``; the
    gaps are filled like a top-k logprob backend would leave them.
    """

    def __init__(self, table: dict[str, dict[str, float]] | None = None, *, strict: bool = True,
                 fallback: LogitBackend | None = None):
        self.table = dict(table or {})
        self.strict = strict
        self.fallback = fallback

    def add(self, prompt: str, answer_tokens: Sequence[str], values: Sequence[float] | dict) -> None:
        if not isinstance(values, dict):
            values = dict(zip(answer_tokens, values))
        self.table[logit_key(prompt, answer_tokens)] = {k: float(v) for k, v in values.items()}

    def score_logits(self, req: LogitRequest) -> LogitVector:
        key = logit_key(req.prompt, req.answer_tokens)
        if key in self.table:
            return align_logits(req.answer_tokens, self.table[key])
        if self.strict or self.fallback is None:
            raise BackendError(f"no scripted logits for prompt {key[:12]}")
        return self.fallback.score_logits(req)


class FunctionLogits:
    """Logit backend computed by a pure function of the request."""

    def __init__(self, fn: Callable[[LogitRequest], Sequence[float]]):
        self.fn = fn

    def score_logits(self, req: LogitRequest) -> LogitVector:
        return LogitVector(tuple(self.fn(req)))


class HashingEmbedder:
    """Seeded signed feature hashing of word unigrams and character trigrams.

    Deterministic per (model_id, text) and L2-normalised. Texts sharing words
    or trigrams land close together, which is all the retrieval tests need.
    """

    def __init__(self, dimension: int = 64, seed: int = 0, ngram: int = 3):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self.ngram = ngram
        self.model_id = f"hash-ngram{ngram}-d{dimension}-s{seed}"

    def _features(self, text: str) -> list[str]:
        norm = " ".join(re.findall(r"\w+", text.lower()))
        padded = f" {norm} "
        grams = [padded[i:i + self.ngram] for i in range(max(1, len(padded) - self.ngram + 1))]
        return [f"w:{w}" for w in norm.split()] + [f"c:{g}" for g in grams]

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dimension)
        for feat in self._features(text):
            h = hashlib.blake2b(f"{self.seed}|{feat}".encode("utf-8"), digest_size=8).digest()
            n = int.from_bytes(h, "little")
            vec[n % self.dimension] += 1.0 if (n >> 63) & 1 else -1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # every feature cancelled out; fall back to a fixed basis direction
            vec[int.from_bytes(hashlib.blake2b(text.encode(), digest_size=4).digest(), "little")
                % self.dimension] = 1.0
            norm = 1.0
        return EmbeddingVector(tuple((vec / norm).tolist()), self.model_id)


def load_fixture(path: str | Path, *, strict: bool = True,
                 chat_fallback: ChatBackend | None = None,
                 logit_fallback: LogitBackend | None = None) -> tuple[ScriptedChat, ScriptedLogits]:
    """Load canned tables from a JSON fixture file.

    Layout::

        {"chat":   [{"system": ..., "user": ..., "response": ...}, ...],
         "logits": [{"prompt": ..., "answers": [...], "values": [...] | {...}}, ...]}
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    chat = ScriptedChat(strict=strict, fallback=chat_fallback)
    for row in doc.get("chat", []):
        chat.add(row["system"], row["user"], row["response"])
    logits = ScriptedLogits(strict=strict, fallback=logit_fallback)
    for row in doc.get("logits", []):
        logits.add(row["prompt"], row["answers"], row["values"])
    return chat, logits


# --- response cache ------------------------------------------------------


class ResponseCache:
    """Thread-safe JSON-backed map from canonical request key to response."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._data: dict[str, Any] = {}
        if self.path and self.path.exists():
            self._data = json.loads(self.path.read_text(encoding="utf-8"))

    @staticmethod
    def key(kind: str, backend: str, request: Any) -> str:
        blob = json.dumps([kind, backend, request], sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def get(self, key: str) -> Any | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, value: Any) -> None:
        with self._lock:
            self._data[key] = value

    def __len__(self) -> int:
        return len(self._data)

    def save(self) -> None:
        if self.path is None:
            return
        with self._lock:
            text = json.dumps(self._data, sort_keys=True, indent=0)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(self.path)


class CachedChat:
    def __init__(self, inner: ChatBackend, cache: ResponseCache, name: str = "chat"):
        self.inner, self.cache, self.name = inner, cache, name

    def chat(self, req: ChatRequest) -> str:
        key = ResponseCache.key("chat", self.name, asdict(req))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        out = self.inner.chat(req)
        self.cache.put(key, out)
        return out


class CachedLogits:
    def __init__(self, inner: LogitBackend, cache: ResponseCache, name: str = "logits"):
        self.inner, self.cache, self.name = inner, cache, name

    def score_logits(self, req: LogitRequest) -> LogitVector:
        key = ResponseCache.key("logits", self.name, [req.prompt, list(req.answer_tokens)])
        hit = self.cache.get(key)
        if hit is not None:
            return LogitVector(tuple(hit))
        out = self.inner.score_logits(req)
        self.cache.put(key, list(out.values))
        return out


class CachedEmbedder:
    def __init__(self, inner: Embedder, cache: ResponseCache):
        self.inner, self.cache = inner, cache
        self.model_id = inner.model_id
        self.dimension = inner.dimension

    def embed(self, text: str) -> EmbeddingVector:
        key = ResponseCache.key("embed", self.model_id, text)
        hit = self.cache.get(key)
        if hit is not None:
            return EmbeddingVector(tuple(hit), self.model_id)
        out = self.inner.embed(text)
        self.cache.put(key, list(out.values))
        return out


# --- HTTP adapters -------------------------------------------------------


def _post_json(url: str, key: str | None, payload: dict, timeout: float) -> dict:
    data = json.dumps(payload).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if key:
        headers["Authorization"] = f"Bearer {key}"
    req = urllib.request.Request(url, data=data, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            body = resp.read()
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode("utf-8", "replace")
        if exc.code in (408, 429) or exc.code >= 500:
            raise TransportError(f"HTTP {exc.code}: {detail}") from exc
        raise BackendError(f"HTTP {exc.code}: {detail}") from exc
    except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
        raise TransportError(str(exc)) from exc
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise BackendError(f"non-JSON response: {body[:200]!r}") from exc


class HttpChat:
    """Chat-completions style client; also scores answers via top logprobs.

    Configured from ``KGRAG_LLM_URL`` / ``KGRAG_LLM_KEY`` unless given
    explicitly. The URL is the full completions endpoint.
    """

    def __init__(self, url: str | None = None, key: str | None = None, model: str = "default",
                 timeout: float = 60.0, top_logprobs: int = 20):
        self.url = url or os.environ.get("KGRAG_LLM_URL")
        self.key = key if key is not None else os.environ.get("KGRAG_LLM_KEY")
        if not self.url:
            raise BackendError("KGRAG_LLM_URL is not set")
        self.model = model
        self.timeout = timeout
        self.top_logprobs = top_logprobs

    def chat(self, req: ChatRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        body = _post_json(self.url, self.key, payload, self.timeout)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response shape: {body!r}") from exc
        if not text or not str(text).strip():
            raise BackendError("backend returned an empty completion")
        return str(text)

    def score_logits(self, req: LogitRequest) -> LogitVector:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": True,
            "top_logprobs": self.top_logprobs,
        }
        body = _post_json(self.url, self.key, payload, self.timeout)
        try:
            content = body["choices"][0]["logprobs"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise UnsupportedError("backend did not return token logprobs") from exc
        if not content:
            raise UnsupportedError("backend returned no logprob entries")
        scored: dict[str, float] = {}
        for item in content[0].get("top_logprobs", []):
            tok = str(item["token"]).strip()
            if tok in req.answer_tokens and tok not in scored:
                scored[tok] = float(item["logprob"])
        return align_logits(req.answer_tokens, scored)


class HttpEmbedder:
    """Embeddings endpoint client (``KGRAG_EMBED_URL`` / ``KGRAG_EMBED_KEY``)."""

    def __init__(self, url: str | None = None, key: str | None = None, model: str = "default",
                 dimension: int | None = None, timeout: float = 60.0):
        self.url = url or os.environ.get("KGRAG_EMBED_URL")
        self.key = key if key is not None else os.environ.get("KGRAG_EMBED_KEY")
        if not self.url:
            raise BackendError("KGRAG_EMBED_URL is not set")
        self.model_id = model
        self.dimension = dimension or 0
        self.timeout = timeout

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        body = _post_json(self.url, self.key, {"model": self.model_id, "input": text}, self.timeout)
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response shape: {body!r}") from exc
        vec = EmbeddingVector(tuple(values), self.model_id)
        if self.dimension and vec.dimension != self.dimension:
            raise BackendError(f"expected dimension {self.dimension}, got {vec.dimension}")
        self.dimension = vec.dimension
        return vec
