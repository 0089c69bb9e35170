import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from devicetalk.backends import (
    BackendError,
    FixtureEntry,
    HashingEmbedder,
    HTTPBackend,
    HTTPBackendConfig,
    MockBackend,
    backend_from_config,
    load_backend,
)
from devicetalk.wire import cosine_similarity


def test_hashing_embedder_deterministic_and_fixed_dim():
    emb = HashingEmbedder()
    a = emb.embed("make it brighter")
    b = emb.embed("make it brighter")
    assert a.shape == (256,)
    assert np.array_equal(a, b)
    assert cosine_similarity(a, b) == pytest.approx(1.0)


def test_hashing_embedder_case_and_punctuation_insensitive():
    emb = HashingEmbedder()
    assert np.array_equal(emb.embed("Turn it OFF!"), emb.embed("turn it off"))


def test_hashing_embedder_never_zero():
    emb = HashingEmbedder()
    assert emb.embed("").any()
    assert emb.embed("!!! ???").any()


def test_distinct_commands_not_identical():
    emb = HashingEmbedder()
    sim = cosine_similarity(emb.embed("turn off the lamp"), emb.embed("make the room feel like a sunset"))
    assert sim < 0.99


def test_mock_backend_in_order_and_matching():
    mock = MockBackend(
        [
            FixtureEntry(response="first"),
            FixtureEntry(response="thermostat reply", match="too hot"),
            FixtureEntry(response="third"),
        ]
    )
    assert mock.generate("anything") == "first"
    # head entry requires "too hot"; a non-matching prompt falls through to the next free entry
    assert mock.generate("unrelated") == "third"
    assert mock.generate("it's too hot in here") == "thermostat reply"
    with pytest.raises(BackendError):
        mock.generate("exhausted now")


def test_mock_backend_loop_and_fixture_file(tmp_path):
    fixture = tmp_path / "script.jsonl"
    fixture.write_text('{"response": "a"}\n\n{"match": "x", "response": "b", "delay_ms": 1}\n')
    mock = MockBackend.from_fixture(str(fixture), loop=True)
    assert mock.generate("x") == "a"
    assert mock.generate("x") == "b"
    assert mock.generate("x") == "a"  # looped
    assert mock.prompts == ["x", "x", "x"]


def test_mock_backend_records_checkpoints():
    mock = MockBackend([])
    mock.set_checkpoint("ckpt-1")
    assert mock.checkpoints == ["ckpt-1"]


def test_backend_from_config_mock(tmp_path):
    fixture = tmp_path / "f.jsonl"
    fixture.write_text('{"response": "hi"}\n')
    backend = backend_from_config({"type": "mock", "fixture": str(fixture)})
    assert backend.generate("x") == "hi"
    assert load_backend(str(fixture)).generate("y") == "hi"
    with pytest.raises(ValueError):
        backend_from_config({"type": "carrier-pigeon"})


class _ChatHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        if self.path.endswith("/chat/completions"):
            reply = {"choices": [{"message": {"content": f"echo: {body['messages'][0]['content']}"}}]}
        else:
            reply = {"data": [{"embedding": [1.0, 2.0, 3.0]}]}
        payload = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_http_backend_generate_and_embed(chat_server):
    backend = HTTPBackend(HTTPBackendConfig(base_url=chat_server, model="tiny", timeout_s=5))
    assert backend.generate("hello") == "echo: hello"
    # default embed is the local hashing embedder
    assert backend.embed("hello").shape == (256,)
    backend.config.embeddings_model = "embedder"
    assert backend.embed("hello").tolist() == [1.0, 2.0, 3.0]
    backend.set_checkpoint("new-ckpt")
    assert backend.config.model == "new-ckpt"


def test_http_backend_raises_backend_error():
    backend = HTTPBackend(HTTPBackendConfig(base_url="http://127.0.0.1:1", model="x", timeout_s=0.2))
    with pytest.raises(BackendError):
        backend.generate("hello")
