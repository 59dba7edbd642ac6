"""Provider-agnostic chat-completion access with retries, an on-disk cache, and deterministic test backends."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import struct
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

from .errors import SumassessError

logger = logging.getLogger(__name__)

VALID_ROLES = ("system", "user", "assistant")
DEFAULT_MAX_TOKENS = 2048


class GatewayError(SumassessError):
    pass


class ProviderError(GatewayError):
    """The provider rejected the request, or kept failing after all retries."""


class TransientProviderError(ProviderError):
    """A failure worth retrying: network trouble, 429, or a 5xx response."""


class CacheMissError(GatewayError):
    def __init__(self, digest: str):
        super().__init__(f"no cached response for request digest {digest}")
        self.digest = digest


class FixtureMissError(GatewayError):
    def __init__(self, prompt: str):
        super().__init__(f"no scripted fixture matches the prompt:\n{prompt}")
        self.prompt = prompt


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        for message in self.messages:
            if message.role not in VALID_ROLES:
                raise ValueError(f"invalid message role {message.role!r}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")

    def prompt_text(self) -> str:
        return "\n".join(message.content for message in self.messages)


@dataclass(frozen=True)
class TokenUsage:
    prompt: int = 0
    completion: int = 0

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.prompt + other.prompt, self.completion + other.completion)


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    model_id: str
    token_usage: TokenUsage = TokenUsage()
    cached: bool = False


def make_request(
    model_id: str,
    prompt: str,
    *,
    temperature: float = 0.0,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    seed: int | None = None,
) -> CompletionRequest:
    """Single user-message request, the shape every pipeline step uses."""
    return CompletionRequest(
        model_id=model_id,
        messages=(Message("user", prompt),),
        temperature=temperature,
        max_tokens=max_tokens,
        seed=seed,
    )


def cache_key(request: CompletionRequest) -> str:
    """64-hex SHA-256 digest of the request.

    Fields are serialized as length-prefixed UTF-8 in a fixed order, so the
    digest is stable across processes and platforms. Message order is part of
    the digest.
    """
    digest = hashlib.sha256()

    def put(text: str) -> None:
        data = text.encode("utf-8")
        digest.update(struct.pack(">Q", len(data)))
        digest.update(data)

    put("sumassess-request-v1")
    put(request.model_id)
    put(str(len(request.messages)))
    for message in request.messages:
        put(message.role)
        put(message.content)
    put(repr(float(request.temperature)))
    put(str(request.max_tokens))
    put("" if request.seed is None else str(request.seed))
    return digest.hexdigest()


def request_to_dict(request: CompletionRequest) -> dict:
    return {
        "model_id": request.model_id,
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
        "seed": request.seed,
    }


def request_from_dict(entry: dict) -> CompletionRequest:
    return CompletionRequest(
        model_id=entry["model_id"],
        messages=tuple(Message(m["role"], m["content"]) for m in entry["messages"]),
        temperature=entry["temperature"],
        max_tokens=entry["max_tokens"],
        seed=entry.get("seed"),
    )


def _naive_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class Fixture:
    """A scripted response, matched by substring (default) or by the exact prompt."""

    match: str
    response: str
    exact: bool = False

    def matches(self, prompt: str) -> bool:
        return prompt == self.match if self.exact else self.match in prompt


class ScriptedBackend:
    """Deterministic backend answering from a fixture list; first match wins."""

    kind = "scripted"

    def __init__(self, fixtures: Sequence[Fixture]):
        self.fixtures = list(fixtures)

    def send(self, request: CompletionRequest) -> CompletionResponse:
        prompt = request.prompt_text()
        for fixture in self.fixtures:
            if fixture.matches(prompt):
                return CompletionResponse(
                    text=fixture.response,
                    model_id=request.model_id,
                    token_usage=TokenUsage(_naive_tokens(prompt), _naive_tokens(fixture.response)),
                )
        raise FixtureMissError(prompt)


def scripted_backend(fixtures: Iterable[Fixture | tuple[str, str]]) -> ScriptedBackend:
    """Build a scripted backend from Fixtures or plain (substring, response) pairs."""
    normalized = [f if isinstance(f, Fixture) else Fixture(match=f[0], response=f[1]) for f in fixtures]
    return ScriptedBackend(normalized)


class ReplayBackend:
    """Cache-only backend: every request must already be cached."""

    kind = "replay"

    def send(self, request: CompletionRequest) -> CompletionResponse:
        raise CacheMissError(cache_key(request))


class LiveBackend:
    """OpenAI-compatible chat-completions endpoint over HTTPS."""

    kind = "live"

    def __init__(
        self,
        endpoint: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def send(self, request: CompletionRequest) -> CompletionResponse:
        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise ProviderError(f"environment variable {self.api_key_env} is not set")
        body: dict = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        try:
            response = self._client.post(
                f"{self.endpoint}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
            )
        except httpx.TransportError as exc:
            raise TransientProviderError(f"network failure: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientProviderError(f"provider returned HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code != 200:
            raise ProviderError(f"provider returned HTTP {response.status_code}: {response.text[:200]}")
        try:
            payload = response.json()
            text = payload["choices"][0]["message"]["content"]
            usage = payload.get("usage", {})
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc
        return CompletionResponse(
            text=text or "",
            model_id=request.model_id,
            token_usage=TokenUsage(
                prompt=int(usage.get("prompt_tokens", 0)),
                completion=int(usage.get("completion_tokens", 0)),
            ),
        )


def write_cache_entry(cache_dir: str | Path, request: CompletionRequest, response: CompletionResponse) -> Path:
    """Atomically persist a response under its request digest (write-temp-then-rename)."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    digest = cache_key(request)
    payload = {
        "digest": digest,
        "request": request_to_dict(request),
        "response": {
            "text": response.text,
            "model_id": response.model_id,
            "token_usage": {"prompt": response.token_usage.prompt, "completion": response.token_usage.completion},
        },
    }
    target = cache_dir / f"{digest}.json"
    fd, temp_path = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, ensure_ascii=False)
        os.replace(temp_path, target)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise
    return target


def read_cache_entry(cache_dir: str | Path, digest: str) -> CompletionResponse | None:
    path = Path(cache_dir) / f"{digest}.json"
    if not path.exists():
        return None
    payload = json.loads(path.read_text(encoding="utf-8"))
    entry = payload["response"]
    return CompletionResponse(
        text=entry["text"],
        model_id=entry["model_id"],
        token_usage=TokenUsage(entry["token_usage"]["prompt"], entry["token_usage"]["completion"]),
        cached=True,
    )


def cache_digests(cache_dir: str | Path) -> list[str]:
    cache_dir = Path(cache_dir)
    if not cache_dir.is_dir():
        return []
    return sorted(path.stem for path in cache_dir.glob("*.json"))


def cache_stats(cache_dir: str | Path) -> tuple[int, int]:
    """(entry count, total bytes) for a cache directory."""
    cache_dir = Path(cache_dir)
    if not cache_dir.is_dir():
        return 0, 0
    files = list(cache_dir.glob("*.json"))
    return len(files), sum(path.stat().st_size for path in files)


def cache_purge(cache_dir: str | Path) -> int:
    removed = 0
    for path in Path(cache_dir).glob("*.json"):
        path.unlink()
        removed += 1
    return removed


class Gateway:
    """Front door for all completions: caching, retry policy, and request accounting.

    Live requests retry transient failures with exponential backoff (base 1s,
    doubling, plus/minus 20 percent jitter) and are cached on success. Replay
    reads the cache only. Scripted answers straight from its fixtures.
    """

    def __init__(
        self,
        backend,
        *,
        cache_dir: str | Path | None = None,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        jitter: float = 0.2,
        max_concurrency: int = 1,
        sleeper: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if backend.kind == "replay" and cache_dir is None:
            raise ValueError("a replay gateway needs a cache_dir")
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.backend = backend
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.jitter = jitter
        self._sleep = sleeper
        self._rng = rng or random.Random()
        self._semaphore = threading.Semaphore(max_concurrency)
        self._lock = threading.Lock()
        self.request_log: list[CompletionRequest] = []
        self._totals = TokenUsage()
        self._live_calls = 0

    @property
    def token_totals(self) -> TokenUsage:
        with self._lock:
            return self._totals

    @property
    def live_call_count(self) -> int:
        """Completions that actually reached the provider (cache hits excluded)."""
        with self._lock:
            return self._live_calls

    def _record(self, request: CompletionRequest, response: CompletionResponse) -> None:
        with self._lock:
            self._totals = self._totals + response.token_usage

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.request_log.append(request)
        if self.backend.kind == "scripted":
            response = self.backend.send(request)
            self._record(request, response)
            return response
        digest = cache_key(request)
        if self.cache_dir is not None:
            hit = read_cache_entry(self.cache_dir, digest)
            if hit is not None:
                return hit
        if self.backend.kind == "replay":
            raise CacheMissError(digest)
        response = self._send_with_retries(request)
        with self._lock:
            self._live_calls += 1
        if self.cache_dir is not None:
            write_cache_entry(self.cache_dir, request, response)
        self._record(request, response)
        return response

    def _send_with_retries(self, request: CompletionRequest) -> CompletionResponse:
        last_error: TransientProviderError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff_base * 2 ** (attempt - 1)
                delay *= 1.0 + self.jitter * (2.0 * self._rng.random() - 1.0)
                self._sleep(delay)
            try:
                with self._semaphore:
                    return self.backend.send(request)
            except TransientProviderError as exc:
                last_error = exc
                logger.warning("attempt %d/%d failed: %s", attempt + 1, self.max_retries + 1, exc)
        raise ProviderError(f"request failed after {self.max_retries + 1} attempts: {last_error}")
