"""Uniform access to chat-completion and embedding providers.

Every call is content-addressed: the canonical JSON of the request is
hashed and the response stored under ``cache/<provider>/<model>/<digest>``.
A warm cache therefore makes any pipeline run network-free and
byte-reproducible, which is how the evaluation suite replays recorded
runs. Transport retries, bounded concurrency, and rate limiting live
here; semantic retries (reissuing a prompt because the output was
unusable) belong to the callers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol, Sequence

import requests

from .errors import ProviderError, ValidationError

logger = logging.getLogger(__name__)

TRANSIENT_CLASSIFICATIONS = {"timeout", "rate-limit", "server"}


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call. ``attempt`` participates in the cache key
    so semantic retries are not served the previously cached response."""

    model_id: str
    messages: tuple[ChatMessage, ...]
    system: str | None = None
    max_tokens: int = 2048
    temperature: float = 0.0
    stop: tuple[str, ...] | None = None
    attempt: int = 0

    def __post_init__(self):
        if not self.messages:
            raise ValidationError("chat request needs at least one message")
        if self.max_tokens < 1:
            raise ValidationError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")

    def last_user_content(self) -> str:
        for message in reversed(self.messages):
            if message.role == "user":
                return message.content
        return self.messages[-1].content


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"  # stop | length | error
    usage: TokenUsage = TokenUsage()


class ChatProvider(Protocol):
    name: str

    def complete(self, request: ChatRequest) -> ChatResponse: ...


class EmbedProvider(Protocol):
    name: str
    model_id: str

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


def canonical_request_json(provider: str, request: ChatRequest) -> str:
    payload = {"provider": provider, "kind": "chat", **asdict(request)}
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def chat_cache_key(provider: str, request: ChatRequest) -> str:
    return hashlib.sha256(canonical_request_json(provider, request).encode("utf-8")).hexdigest()


def embed_cache_key(provider: str, model_id: str, text: str) -> str:
    payload = json.dumps(
        {"provider": provider, "kind": "embed", "model_id": model_id, "text": text},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class TokenBucket:
    """Simple shared rate limiter: ``rate_per_s`` refills, burst ``capacity``."""

    def __init__(self, rate_per_s: float, capacity: int | None = None):
        self.rate = float(rate_per_s)
        self.capacity = float(capacity if capacity is not None else max(1.0, rate_per_s))
        self._tokens = self.capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


@dataclass
class GatewayStats:
    cache_hits: int = 0
    cache_misses: int = 0
    network_calls: int = 0
    used_digests: list[str] = field(default_factory=list)


class ModelGateway:
    """Thread-safe facade over one chat and one embedding provider."""

    def __init__(
        self,
        chat_provider: ChatProvider | None = None,
        embed_provider: EmbedProvider | None = None,
        cache_dir: str | Path | None = None,
        *,
        max_in_flight: int = 4,
        transport_retries: int = 3,
        backoff_s: float = 0.25,
        rate_limit_per_s: float | None = None,
        offline: bool = False,
    ):
        self.chat_provider = chat_provider
        self.embed_provider = embed_provider
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.offline = offline
        self.transport_retries = transport_retries
        self.backoff_s = backoff_s
        self.stats = GatewayStats()
        self._memory_cache: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()
        self._in_flight = threading.Semaphore(max_in_flight)
        self._bucket = TokenBucket(rate_limit_per_s) if rate_limit_per_s else None

    # -- caching ---------------------------------------------------------

    def _cache_path(self, provider: str, model_id: str, digest: str) -> Path | None:
        if self.cache_dir is None:
            return None
        safe_model = model_id.replace("/", "_")
        return self.cache_dir / provider / safe_model / f"{digest}.json"

    def _cache_read(self, provider: str, model_id: str, digest: str) -> dict[str, Any] | None:
        with self._lock:
            if digest in self._memory_cache:
                return self._memory_cache[digest]
        path = self._cache_path(provider, model_id, digest)
        if path is not None and path.exists():
            entry = json.loads(path.read_text(encoding="utf-8"))
            with self._lock:
                self._memory_cache[digest] = entry
            return entry
        return None

    def _cache_write(self, provider: str, model_id: str, digest: str, entry: dict[str, Any]) -> None:
        with self._lock:
            self._memory_cache[digest] = entry
        path = self._cache_path(provider, model_id, digest)
        if path is None:
            return
    # write-temp-then-rename keeps concurrent readers away from partial files
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(entry, handle, ensure_ascii=False, indent=2, sort_keys=True)
            os.replace(tmp_name, path)
        finally:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)

    def _record_use(self, digest: str, hit: bool) -> None:
        with self._lock:
            self.stats.used_digests.append(digest)
            if hit:
                self.stats.cache_hits += 1
            else:
                self.stats.cache_misses += 1

    # -- calls -----------------------------------------------------------

    def chat(self, request: ChatRequest) -> ChatResponse:
        if self.chat_provider is None and not self.offline:
            raise ProviderError("no chat provider configured", classification="not-configured")
        provider_name = self.chat_provider.name if self.chat_provider else "offline"
        digest = chat_cache_key(provider_name, request)
        cached = self._cache_read(provider_name, request.model_id, digest)
        if cached is not None:
            self._record_use(digest, hit=True)
            return _response_from_entry(cached)
        if self.offline:
            raise ProviderError(
                f"cache miss for digest {digest[:12]} with network disabled",
                classification="offline-cache-miss",
            )
        self._record_use(digest, hit=False)
        response = self._with_transport_retries(lambda: self._network_chat(request))
        entry = {
            "request": json.loads(canonical_request_json(provider_name, request)),
            "response": {
                "text": response.text,
                "finish_reason": response.finish_reason,
                "usage": asdict(response.usage),
            },
        }
        self._cache_write(provider_name, request.model_id, digest, entry)
        return response

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValidationError("embed needs a non-empty list of texts")
        if any(not t for t in texts):
            raise ValidationError("embed texts must be non-empty")
        if self.embed_provider is None and not self.offline:
            raise ProviderError("no embedding provider configured", classification="not-configured")
        provider_name = self.embed_provider.name if self.embed_provider else "offline"
        model_id = self.embed_provider.model_id if self.embed_provider else "offline"

        vectors: dict[int, list[float]] = {}
        missing: list[tuple[int, str]] = []
        for i, text in enumerate(texts):
            digest = embed_cache_key(provider_name, model_id, text)
            cached = self._cache_read(provider_name, model_id, digest)
            if cached is not None:
                self._record_use(digest, hit=True)
                vectors[i] = list(cached["response"]["vector"])
            else:
                missing.append((i, text))
        if missing:
            if self.offline:
                raise ProviderError(
                    f"{len(missing)} embedding(s) missing from cache with network disabled",
                    classification="offline-cache-miss",
                )
            fresh = self._with_transport_retries(
                lambda: self._network_embed([text for _, text in missing])
            )
            for (i, text), vector in zip(missing, fresh):
                digest = embed_cache_key(provider_name, model_id, text)
                self._record_use(digest, hit=False)
                self._cache_write(
                    provider_name,
                    model_id,
                    digest,
                    {"request": {"text": text, "model_id": model_id}, "response": {"vector": vector}},
                )
                vectors[i] = vector
        return [vectors[i] for i in range(len(texts))]

    def _network_chat(self, request: ChatRequest) -> ChatResponse:
        with self._in_flight:
            if self._bucket:
                self._bucket.acquire()
            with self._lock:
                self.stats.network_calls += 1
            return self.chat_provider.complete(request)

    def _network_embed(self, texts: list[str]) -> list[list[float]]:
        with self._in_flight:
            if self._bucket:
                self._bucket.acquire()
            with self._lock:
                self.stats.network_calls += 1
            vectors = self.embed_provider.embed(texts)
        if len(vectors) != len(texts):
            raise ProviderError(
                f"embedding provider returned {len(vectors)} vectors for {len(texts)} texts"
            )
        return [list(map(float, v)) for v in vectors]

    def _with_transport_retries(self, call: Callable[[], Any]) -> Any:
        delay = self.backoff_s
        last: ProviderError | None = None
        for attempt in range(1 + self.transport_retries):
            try:
                return call()
            except ProviderError as err:
                if err.classification not in TRANSIENT_CLASSIFICATIONS:
                    raise
                last = err
                if attempt < self.transport_retries:
                    logger.warning("transient provider error (%s), retrying: %s", err.classification, err)
                    time.sleep(delay)
                    delay *= 2
        raise last  # type: ignore[misc]


def _response_from_entry(entry: dict[str, Any]) -> ChatResponse:
    resp = entry["response"]
    usage = resp.get("usage") or {}
    return ChatResponse(
        text=resp["text"],
        finish_reason=resp.get("finish_reason", "stop"),
        usage=TokenUsage(
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        ),
    )


def parallel_map(fn: Callable[[Any], Any], items: Iterable[Any], max_workers: int = 1) -> list[Any]:
    """Order-preserving map; items are independent so any worker count is safe."""
    items = list(items)
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))


# -- HTTP providers (OpenAI-style JSON endpoints) -------------------------


def _classify_http_error(status: int, body: str) -> str:
    if status in (401, 403):
        return "auth"
    if status == 429:
        return "rate-limit"
    if status == 408:
        return "timeout"
    if status >= 500:
        return "server"
    if status == 400 and "context" in body.lower():
        return "context-overflow"
    return "provider"


class HttpChatProvider:
    """POST chat-completions client; base URL and API key via configuration."""

    def __init__(self, base_url: str, api_key: str | None = None, *, name: str = "http-chat", timeout_s: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.name = name
        self.timeout_s = timeout_s
        self._session = requests.Session()

    def complete(self, request: ChatRequest) -> ChatResponse:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.extend({"role": m.role, "content": m.content} for m in request.messages)
        payload: dict[str, Any] = {
            "model": request.model_id,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.stop:
            payload["stop"] = list(request.stop)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            http = self._session.post(
                f"{self.base_url}/chat/completions", json=payload, headers=headers, timeout=self.timeout_s
            )
        except requests.Timeout as err:
            raise ProviderError(f"chat request timed out: {err}", classification="timeout")
        except requests.RequestException as err:
            raise ProviderError(f"chat transport failure: {err}", classification="server")
        if http.status_code != 200:
            raise ProviderError(
                f"chat endpoint returned {http.status_code}: {http.text[:200]}",
                classification=_classify_http_error(http.status_code, http.text),
            )
        body = http.json()
        choice = body["choices"][0]
        usage = body.get("usage") or {}
        return ChatResponse(
            text=choice["message"]["content"] or "",
            finish_reason=choice.get("finish_reason") or "stop",
            usage=TokenUsage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            ),
        )


class HttpEmbedProvider:
    def __init__(
        self,
        base_url: str,
        model_id: str,
        api_key: str | None = None,
        *,
        name: str = "http-embed",
        timeout_s: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.api_key = api_key
        self.name = name
        self.timeout_s = timeout_s
        self._session = requests.Session()

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            http = self._session.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model_id, "input": list(texts)},
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.Timeout as err:
            raise ProviderError(f"embedding request timed out: {err}", classification="timeout")
        except requests.RequestException as err:
            raise ProviderError(f"embedding transport failure: {err}", classification="server")
        if http.status_code != 200:
            raise ProviderError(
                f"embedding endpoint returned {http.status_code}: {http.text[:200]}",
                classification=_classify_http_error(http.status_code, http.text),
            )
        data = http.json()["data"]
        return [list(map(float, item["embedding"])) for item in data]
