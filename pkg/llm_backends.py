"""LLM backends behind one ``generate(messages, params)`` interface.

Live backends speak the OpenAI chat-completions wire format over ``requests``;
the local backend is the same client pointed at a self-hosted server. Mock and
trace backends live in ``mock_llm``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import requests

from config import (
    ConfigError,
    get_api_key,
    get_local_model,
    get_local_url,
    get_remote_model,
    get_remote_url,
)

logger = logging.getLogger(__name__)

DEFAULT_CONTEXT_TOKENS = 16000
DEFAULT_CHARS_PER_TOKEN = 4.0

_CONTEXT_MARKERS = ("context_length_exceeded", "maximum context length", "context window")


class BackendError(Exception):
    pass


class TransportError(BackendError):
    """Network failure or non-success HTTP status after all retries."""


class ContextOverflow(BackendError):
    pass


class BackendRefusal(BackendError):
    pass


class TraceExhausted(BackendError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.2
    top_p: float = 1.0
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    seed: int | None = None
    max_tokens: int | None = None

    def to_payload(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict | None) -> GenerationParams:
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown generation parameters: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Message:
    role: str
    content: str

    def as_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


class LLMBackend:
    """Base class; ``calls`` counts generate requests for auditing."""

    name = "backend"
    uses_network = False

    def __init__(self):
        self.calls = 0

    def generate(self, messages: list[dict], params: GenerationParams) -> str:
        raise NotImplementedError

    def complete(self, prompt: str, params: GenerationParams | None = None) -> str:
        """Stateless single-prompt request, as the worker uses it."""
        if not prompt or not prompt.strip():
            raise ValueError("prompt must not be empty")
        return self.generate([{"role": "user", "content": prompt}], params or GenerationParams())


class OpenAICompatBackend(LLMBackend):
    uses_network = True

    def __init__(self, base_url: str, model: str, api_key: str | None = None, timeout: float = 60.0,
                 retries: int = 3, backoff: float = 1.0, name: str | None = None):
        super().__init__()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.name = name or model

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def generate(self, messages: list[dict], params: GenerationParams) -> str:
        endpoint = f"{self.base_url}/chat/completions"
        payload = {"model": self.model, "messages": messages, **params.to_payload()}
        last_error = None

        for attempt in range(1, self.retries + 1):
            self.calls += 1
            try:
                response = requests.post(endpoint, headers=self._headers(), json=payload, timeout=self.timeout)
                if response.status_code == 400 and any(m in response.text for m in _CONTEXT_MARKERS):
                    raise ContextOverflow(f"{self.name}: prompt exceeds the model context")
                response.raise_for_status()
                return _extract_content(response.json(), self.name)
            except requests.exceptions.RequestException as e:
                last_error = e
                logger.warning(f"{self.name}: request {attempt}/{self.retries} failed: {e}")
            except ValueError as e:
                last_error = e
                logger.warning(f"{self.name}: unreadable response on attempt {attempt}: {e}")

            if attempt < self.retries:
                time.sleep(self.backoff * 2 ** (attempt - 1))

        logger.error(f"{self.name}: giving up after {self.retries} attempts")
        raise TransportError(f"{self.name}: {last_error}")


def _extract_content(body: dict, name: str) -> str:
    try:
        choice = body["choices"][0]
        message = choice["message"]
    except (KeyError, IndexError, TypeError) as e:
        raise ValueError(f"unexpected response shape: {body!r}") from e

    if choice.get("finish_reason") == "content_filter" or message.get("refusal"):
        raise BackendRefusal(f"{name} refused: {message.get('refusal') or 'content filtered'}")
    content = message.get("content")
    if content is None:
        raise BackendRefusal(f"{name} returned no content")
    return content


@dataclass
class ChatSession:
    """Multi-turn coordinator history: one system message then user/assistant pairs."""

    backend: LLMBackend
    system_prompt: str
    params: GenerationParams = field(default_factory=GenerationParams)
    context_tokens: int = DEFAULT_CONTEXT_TOKENS
    chars_per_token: float = DEFAULT_CHARS_PER_TOKEN
    history: list[Message] = field(default_factory=list)

    def __post_init__(self):
        if not self.history:
            self.history = [Message("system", self.system_prompt)]

    def messages(self) -> list[dict]:
        return [m.as_dict() for m in self.history]

    def estimated_tokens(self, extra: str = "") -> float:
        chars = sum(len(m.content) for m in self.history) + len(extra)
        return chars / self.chars_per_token + (self.params.max_tokens or 0)

    def chat(self, text: str) -> str:
        if self.estimated_tokens(text) > self.context_tokens:
            raise ContextOverflow(
                f"history of {len(self.history)} messages exceeds {self.context_tokens} tokens")

        reply = self.backend.generate(self.messages() + [{"role": "user", "content": text}], self.params)
        self.history.append(Message("user", text))
        self.history.append(Message("assistant", reply))
        return reply

    def transcript(self) -> str:
        return "\n\n".join(f"### {m.role}\n{m.content}" for m in self.history)


def create_backend(spec: str) -> LLMBackend:
    """Build a backend from its command-line name.

    ``mock``, ``mock:oracle``, ``mock:forgetful[:N]``, ``mock:trace:<path>``,
    ``openai[:model]`` and ``local[:model]``.
    """
    kind, _, rest = spec.partition(":")

    if kind == "mock":
        from mock_llm import MockBackend, TraceBackend

        behavior, _, arg = rest.partition(":")
        if behavior in ("", "oracle"):
            return MockBackend("oracle")
        if behavior == "forgetful":
            try:
                return MockBackend("forgetful", window=int(arg) if arg else 2)
            except ValueError as e:
                raise ConfigError(f"Forgetful window must be an integer: {spec}") from e
        if behavior == "trace":
            if not arg:
                raise ConfigError("mock:trace needs a file path")
            return TraceBackend.from_file(arg)
        raise ConfigError(f"Unknown mock behavior: {behavior}")

    if kind == "openai":
        api_key = get_api_key()
        if not api_key:
            raise ConfigError("LLM_API_KEY is not set")
        model = rest or get_remote_model()
        return OpenAICompatBackend(get_remote_url(), model, api_key=api_key, name=f"openai:{model}")

    if kind == "local":
        model = rest or get_local_model()
        return OpenAICompatBackend(get_local_url(), model, api_key=get_api_key(), name=f"local:{model}")

    raise ConfigError(f"Unknown backend: {spec}")
