import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from kgrag.errors import BackendError, TransportError, UnsupportedError
from kgrag.providers import (
    MISSING_LOGIT, CachedChat, CachedEmbedder, CachedLogits, ChatRequest, EmbeddingVector,
    FunctionLogits, HashingEmbedder, HttpChat, HttpEmbedder, LogitRequest, LogitVector,
    ResponseCache, ScriptedChat, ScriptedLogits, digit_answers, load_fixture,
)


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(" ", "hi")
    with pytest.raises(ValueError):
        LogitRequest("p", ("0", "0"))
    with pytest.raises(ValueError):
        LogitRequest("p", ())
    with pytest.raises(ValueError):
        LogitVector((float("nan"),))
    with pytest.raises(ValueError):
        EmbeddingVector((0.0, 0.0), "m")


def test_scripted_chat_strict_and_fallback():
    chat = ScriptedChat()
    chat.add("sys", "hello", "world")
    assert chat.chat(ChatRequest("sys", "hello")) == "world"
    with pytest.raises(BackendError):
        chat.chat(ChatRequest("sys", "other"))
    backup = ScriptedChat({}, strict=False, fallback=chat)
    assert backup.chat(ChatRequest("sys", "hello")) == "world"


def test_partial_logit_table_fills_missing_slots():
    lg = ScriptedLogits()
    lg.add("q", digit_answers(3), {"0": 0.5, "2": 3.0})
    v = lg.score_logits(LogitRequest("q", digit_answers(3)))
    assert v.values == (0.5, MISSING_LOGIT, 3.0, MISSING_LOGIT)


def test_logits_follow_answer_order_under_permutation():
    lg = ScriptedLogits()
    answers = ("0", "1", "2")
    lg.add("q", answers, [1.0, 2.0, 3.0])
    # a permuted request is a distinct key; served from a dict it stays token-aligned
    lg.add("q", ("2", "0", "1"), {"0": 1.0, "1": 2.0, "2": 3.0})
    assert lg.score_logits(LogitRequest("q", ("2", "0", "1"))).values == (3.0, 1.0, 2.0)


def test_fixture_file(tmp_path):
    path = tmp_path / "fx.json"
    path.write_text(json.dumps({
        "chat": [{"system": "s", "user": "u", "response": "r"}],
        "logits": [{"prompt": "p", "answers": ["0", "1"], "values": [0.0, 1.0]}],
    }))
    chat, logits = load_fixture(path)
    assert chat.chat(ChatRequest("s", "u")) == "r"
    assert logits.score_logits(LogitRequest("p", ("0", "1"))).values == (0.0, 1.0)


def test_hashing_embedder_properties():
    e = HashingEmbedder(dimension=64)
    a = e.embed("view privacy policy")
    assert a.dimension == 64 and a.model_id == "hash-ngram3-d64-s0"
    assert np.linalg.norm(a.values) == pytest.approx(1.0, abs=1e-12)
    assert e.embed("view privacy policy") == a
    near = np.dot(a.values, e.embed("open the privacy policy").values)
    far = np.dot(a.values, e.embed("bookshelf").values)
    assert near > far
    assert HashingEmbedder(64, seed=1).embed("view privacy policy") != a
    with pytest.raises(ValueError):
        e.embed("  ")


def test_caches_call_inner_once_and_persist(tmp_path):
    calls = []

    def fn(req):
        calls.append(req)
        return [0.0, 1.0]

    path = tmp_path / "cache.json"
    cache = ResponseCache(path)
    lg = CachedLogits(FunctionLogits(fn), cache)
    req = LogitRequest("p", ("0", "1"))
    assert lg.score_logits(req) == lg.score_logits(req)
    assert len(calls) == 1

    chat = ScriptedChat({}, strict=False, fallback=ScriptedChat())
    chat.fallback.add("s", "u", "r")
    cc = CachedChat(chat, cache)
    assert cc.chat(ChatRequest("s", "u")) == "r"
    ce = CachedEmbedder(HashingEmbedder(16), cache)
    v = ce.embed("hello")
    cache.save()

    reloaded = ResponseCache(path)
    # a fresh process answers from disk without the inner backends
    assert CachedLogits(FunctionLogits(lambda r: 1 / 0), reloaded).score_logits(req).values == (0.0, 1.0)
    assert CachedChat(ScriptedChat(), reloaded).chat(ChatRequest("s", "u")) == "r"
    assert CachedEmbedder(HashingEmbedder(16), reloaded).embed("hello") == v


class _Handler(BaseHTTPRequestHandler):
    seen: list = []
    mode = "ok"

    def log_message(self, *args):
        pass

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((self.path, dict(self.headers), body))
        if self.mode == "busy":
            return self._send(503, {"error": "overloaded"})
        if self.mode == "bad":
            return self._send(400, {"error": "bad request"})
        if self.path == "/embed":
            return self._send(200, {"data": [{"embedding": [0.6, 0.8]}]})
        if body.get("logprobs"):
            if self.mode == "nologprobs":
                return self._send(200, {"choices": [{"message": {"content": "1"}}]})
            top = [{"token": " 1", "logprob": -0.1}, {"token": "0", "logprob": -2.5},
                   {"token": "x", "logprob": -3.0}]
            return self._send(200, {"choices": [{"logprobs": {"content": [{"token": "1", "top_logprobs": top}]}}]})
        return self._send(200, {"choices": [{"message": {"content": "pong"}}]})

    def _send(self, code, doc):
        data = json.dumps(doc).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture
def server():
    _Handler.seen = []
    _Handler.mode = "ok"
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()


def test_http_chat_wire_format(server):
    chat = HttpChat(server + "/v1/chat", key="secret", model="m1")
    assert chat.chat(ChatRequest("be brief", "ping", max_tokens=7)) == "pong"
    path, headers, body = _Handler.seen[-1]
    assert path == "/v1/chat"
    assert headers["Authorization"] == "Bearer secret"
    assert body == {
        "model": "m1",
        "messages": [{"role": "system", "content": "be brief"}, {"role": "user", "content": "ping"}],
        "max_tokens": 7,
        "temperature": 0.0,
    }


def test_http_logits_align_top_logprobs(server):
    chat = HttpChat(server + "/v1/chat")
    v = chat.score_logits(LogitRequest("how many?", ("0", "1", "2")))
    assert v.values == (-2.5, -0.1, MISSING_LOGIT)
    assert _Handler.seen[-1][2]["logprobs"] is True


def test_http_error_mapping(server):
    chat = HttpChat(server + "/v1/chat")
    _Handler.mode = "busy"
    with pytest.raises(TransportError):
        chat.chat(ChatRequest("s", "u"))
    _Handler.mode = "bad"
    with pytest.raises(BackendError):
        chat.chat(ChatRequest("s", "u"))
    _Handler.mode = "nologprobs"
    with pytest.raises(UnsupportedError):
        chat.score_logits(LogitRequest("q", ("0", "1")))


def test_http_unreachable_is_transport_error():
    with pytest.raises(TransportError):
        HttpChat("http://127.0.0.1:9/none", timeout=2).chat(ChatRequest("s", "u"))


def test_http_embedder(server, monkeypatch):
    monkeypatch.setenv("KGRAG_EMBED_URL", server + "/embed")
    e = HttpEmbedder(model="emb")
    v = e.embed("hello")
    assert v.values == (0.6, 0.8) and v.model_id == "emb" and e.dimension == 2
    assert _Handler.seen[-1][2] == {"model": "emb", "input": "hello"}


def test_http_requires_url(monkeypatch):
    monkeypatch.delenv("KGRAG_LLM_URL", raising=False)
    with pytest.raises(BackendError):
        HttpChat()
