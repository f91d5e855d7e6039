import json

import pytest
import requests

import llm_backends
from config import ConfigError
from llm_backends import (
    BackendRefusal,
    ChatSession,
    ContextOverflow,
    GenerationParams,
    OpenAICompatBackend,
    TraceExhausted,
    TransportError,
    create_backend,
)
from mock_llm import MockBackend, TraceBackend, replies_from_transcript


class FakeResponse:
    def __init__(self, status_code=200, body=None, text=""):
        self.status_code = status_code
        self._body = body
        self.text = text or json.dumps(body)

    def json(self):
        return self._body

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.exceptions.HTTPError(f"{self.status_code} error")


def completion(content, finish_reason="stop", **message):
    return {"choices": [{"message": {"role": "assistant", "content": content, **message},
                         "finish_reason": finish_reason}]}


@pytest.fixture
def no_sleep(monkeypatch):
    monkeypatch.setattr(llm_backends.time, "sleep", lambda seconds: None)


def test_http_backend_sends_openai_payload(monkeypatch):
    sent = {}

    def fake_post(url, headers, json, timeout):
        sent.update(url=url, headers=headers, payload=json)
        return FakeResponse(body=completion("<point(banana)>"))

    monkeypatch.setattr(requests, "post", fake_post)
    backend = OpenAICompatBackend("http://localhost:9/v1/", "test-model", api_key="k")
    reply = backend.generate([{"role": "user", "content": "hi"}], GenerationParams(seed=3))

    assert reply == "<point(banana)>"
    assert sent["url"] == "http://localhost:9/v1/chat/completions"
    assert sent["headers"]["Authorization"] == "Bearer k"
    assert sent["payload"]["seed"] == 3
    assert sent["payload"]["temperature"] == 0.2
    assert "max_tokens" not in sent["payload"]


def test_http_backend_retries_then_raises_transport_error(monkeypatch, no_sleep):
    attempts = []

    def failing_post(*args, **kwargs):
        attempts.append(1)
        raise requests.exceptions.ConnectionError("refused")

    monkeypatch.setattr(requests, "post", failing_post)
    backend = OpenAICompatBackend("http://localhost:9/v1", "m", retries=3)
    with pytest.raises(TransportError):
        backend.complete("hello")
    assert len(attempts) == 3


def test_http_backend_recovers_after_a_failed_attempt(monkeypatch, no_sleep):
    responses = [FakeResponse(status_code=503, body={}), FakeResponse(body=completion("OK"))]
    monkeypatch.setattr(requests, "post", lambda *a, **k: responses.pop(0))
    assert OpenAICompatBackend("http://x/v1", "m").complete("hello") == "OK"


def test_refusal_is_classified(monkeypatch):
    monkeypatch.setattr(requests, "post", lambda *a, **k: FakeResponse(body=completion(None, refusal="no")))
    with pytest.raises(BackendRefusal):
        OpenAICompatBackend("http://x/v1", "m").complete("hello")


def test_context_length_error_is_classified(monkeypatch):
    body = {"error": {"code": "context_length_exceeded"}}
    monkeypatch.setattr(requests, "post", lambda *a, **k: FakeResponse(status_code=400, body=body))
    with pytest.raises(ContextOverflow):
        OpenAICompatBackend("http://x/v1", "m").complete("hello")


def test_complete_rejects_empty_prompt():
    with pytest.raises(ValueError):
        MockBackend().complete("  ")


def test_chat_session_appends_pairs_on_success():
    session = ChatSession(TraceBackend(["one", "two"]), "system text")
    assert session.chat("a") == "one"
    assert session.chat("b") == "two"
    assert [m["role"] for m in session.messages()] == ["system", "user", "assistant", "user", "assistant"]


def test_chat_session_history_unchanged_on_failure():
    session = ChatSession(TraceBackend([]), "system text")
    with pytest.raises(TraceExhausted):
        session.chat("a")
    assert len(session.history) == 1


def test_chat_session_context_budget():
    session = ChatSession(TraceBackend(["x"]), "s" * 40, context_tokens=10, chars_per_token=4)
    with pytest.raises(ContextOverflow):
        session.chat("more text")


def test_transcript_replays_through_trace_backend():
    session = ChatSession(TraceBackend(["<point(lemon)>", "OK\nthanks"]), "system")
    session.chat("first")
    session.chat("second")
    assert replies_from_transcript(session.transcript()) == ["<point(lemon)>", "OK\nthanks"]


def test_trace_backend_from_json_file(tmp_path):
    path = tmp_path / "trace.json"
    path.write_text(json.dumps(["<point(banana)>"]))
    backend = create_backend(f"mock:trace:{path}")
    assert backend.complete("anything") == "<point(banana)>"
    with pytest.raises(TraceExhausted):
        backend.complete("anything")


@pytest.mark.parametrize("spec, name", [
    ("mock", "mock:oracle"),
    ("mock:oracle", "mock:oracle"),
    ("mock:forgetful", "mock:forgetful:2"),
    ("mock:forgetful:5", "mock:forgetful:5"),
])
def test_mock_specs(spec, name):
    assert create_backend(spec).name == name


@pytest.mark.parametrize("spec", ["gemini", "mock:psychic", "mock:forgetful:x", "mock:trace:"])
def test_bad_specs_are_config_errors(spec):
    with pytest.raises(ConfigError):
        create_backend(spec)


def test_openai_backend_needs_a_key(monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    with pytest.raises(ConfigError):
        create_backend("openai")


def test_local_backend_uses_local_url(monkeypatch):
    monkeypatch.setenv("LOCAL_LLM_URL", "http://127.0.0.1:8080/v1")
    backend = create_backend("local:llama3")
    assert backend.base_url == "http://127.0.0.1:8080/v1"
    assert backend.model == "llama3"
    assert backend.uses_network


def test_params_reject_unknown_keys():
    with pytest.raises(ConfigError):
        GenerationParams.from_dict({"temprature": 0.1})
