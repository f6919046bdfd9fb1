"""Uniform access to chat-completion backends.

One wire protocol is supported: OpenAI-compatible chat JSON over HTTP.
A replay backend answers from a digest-keyed script instead, which makes
every LLM-dependent run a deterministic function of its inputs. The
gateway layers response caching, retry with exponential backoff, a
parallelism bound, and a call log on top of either backend.
"""

import hashlib
import json
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import httpx

from .errors import (
    ReplayMissError,
    RequestError,
    TransportError,
    ValidationError,
)

API_KEY_ENV = "C3_API_KEY"

_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str
    image_ref: str | None = None

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValidationError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call.

    ``request_tag`` is a free-form trace label; it never influences the
    request digest or the response.
    """

    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 512
    request_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not any(m.role == "user" for m in self.messages):
            raise ValidationError("request needs at least one user message")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValidationError("max_tokens must be >= 1")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    backend_id: str
    latency_ms: float
    cached: bool


def _image_digest(ref: str | None) -> str | None:
    """Digest images by content when the reference resolves to a file.

    Falls back to hashing the reference string itself, so requests stay
    hashable when fixtures reference images that are not materialized.
    """
    if ref is None:
        return None
    try:
        data = Path(ref).read_bytes()
    except OSError:
        data = ref.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def request_hash(req: ChatRequest) -> str:
    """Stable 256-bit digest of everything that can influence a response.

    Covers model id, message roles/contents (images by content digest),
    temperature, and max_tokens; insensitive to ``request_tag``.
    """
    canonical = {
        "model_id": req.model_id,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "messages": [
            {
                "role": m.role,
                "content": m.content,
                "image": _image_digest(m.image_ref),
            }
            for m in req.messages
        ],
    }
    blob = json.dumps(canonical, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Answer(Enum):
    YES = "yes"
    NO = "no"
    UNPARSEABLE = "unparseable"


_AFFIRMATIVE = ("yes", "y", "是", "正确")
_NEGATIVE = ("no", "n", "否", "不正确")
_LEADING_JUNK = re.compile(r'^[\s()\[\]"\'“”‘’.,;:!?。，；：！？、#*>-]+')


def _leading_token_is(text: str, token: str) -> bool:
    if not text.startswith(token):
        return False
    if token[-1].isascii():
        rest = text[len(token):]
        return not (rest and (rest[0].isalnum() and rest[0].isascii()))
    return True  # CJK tokens carry their own boundary


def parse_binary_answer(text: str) -> Answer:
    """Classify a reply as Yes/No by its leading token.

    ASCII tokens must end at a word boundary ("nothing" is not "no");
    CJK tokens match as prefixes. Anything unrecognized is UNPARSEABLE,
    which callers treat as a negative answer.
    """
    stripped = _LEADING_JUNK.sub("", text).casefold()
    for token in _NEGATIVE:
        if _leading_token_is(stripped, token):
            return Answer.NO
    for token in _AFFIRMATIVE:
        if _leading_token_is(stripped, token):
            return Answer.YES
    return Answer.UNPARSEABLE


class ReplayBackend:
    """Answers requests from a JSON map of request digest -> content."""

    backend_id = "replay"

    def __init__(self, script: dict[str, str] | str | os.PathLike):
        if isinstance(script, (str, os.PathLike)):
            with open(script, encoding="utf-8") as fh:
                script = json.load(fh)
        if not isinstance(script, dict):
            raise ValidationError("replay script must be a JSON object")
        self._script = {str(k): str(v) for k, v in script.items()}

    def send(self, req: ChatRequest) -> str:
        digest = request_hash(req)
        try:
            return self._script[digest]
        except KeyError:
            raise ReplayMissError(digest) from None


class HttpBackend:
    """OpenAI-compatible ``POST {base_url}/chat/completions`` client.

    4xx responses raise :class:`RequestError` (not retryable); network
    failures and 5xx raise :class:`TransportError` and are retried by
    the gateway.
    """

    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 60.0,
                 client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.backend_id = self.base_url
        self._client = client or httpx.Client(timeout=timeout)

    def send(self, req: ChatRequest) -> str:
        body = {
            "model": req.model_id,
            "messages": [self._wire_message(m) for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(
                f"{self.base_url}/chat/completions", json=body, headers=headers
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if 400 <= resp.status_code < 500:
            raise RequestError(f"backend rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code != 200:
            raise TransportError(f"backend error: HTTP {resp.status_code}")
        try:
            payload = resp.json()
            return str(payload["choices"][0]["message"]["content"])
        except (ValueError, LookupError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc

    @staticmethod
    def _wire_message(m: ChatMessage) -> dict:
        if m.image_ref is None:
            return {"role": m.role, "content": m.content}
        return {
            "role": m.role,
            "content": [
                {"type": "text", "text": m.content},
                {"type": "image_url", "image_url": {"url": m.image_ref}},
            ],
        }


@dataclass(frozen=True)
class CallRecord:
    """One gateway call, for ablation checks and per-sample accounting."""

    request_tag: str
    model_id: str
    digest: str
    cached: bool


class Gateway:
    """Backend wrapper adding cache, retry, a parallelism bound, and a log.

    Retries apply only to transport-class failures: up to ``max_attempts``
    tries with exponential backoff (``backoff_base * backoff_factor**k``
    seconds after the k-th failure). Cache entries are content-addressed
    JSON files named by the request digest, written atomically.
    """

    def __init__(
        self,
        backend,
        cache_dir: str | os.PathLike | None = None,
        parallelism: int = 4,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        sleeper=time.sleep,
        recorder: dict[str, str] | None = None,
    ):
        if parallelism < 1:
            raise ValidationError("parallelism must be >= 1")
        self.backend = backend
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._sleep = sleeper
        self._slots = threading.Semaphore(parallelism)
        self._log_lock = threading.Lock()
        self.call_log: list[CallRecord] = []
        self.recorder = recorder

    def complete(self, req: ChatRequest) -> ChatResponse:
        digest = request_hash(req)
        started = time.monotonic()
        cached = self._cache_read(digest)
        if cached is not None:
            self._record(req, digest, content=cached, was_cached=True)
            return ChatResponse(cached, self.backend.backend_id,
                                (time.monotonic() - started) * 1000.0, cached=True)
        content = self._send_with_retry(req)
        self._cache_write(digest, content)
        self._record(req, digest, content=content, was_cached=False)
        return ChatResponse(content, self.backend.backend_id,
                            (time.monotonic() - started) * 1000.0, cached=False)

    def _send_with_retry(self, req: ChatRequest) -> str:
        attempts: list[str] = []
        with self._slots:
            for attempt in range(1, self.max_attempts + 1):
                try:
                    return self.backend.send(req)
                except TransportError as exc:
                    attempts.append(f"attempt {attempt}/{self.max_attempts}: {exc}")
                    if attempt == self.max_attempts:
                        raise TransportError(
                            f"gave up after {self.max_attempts} attempts: {exc}",
                            attempts=attempts,
                        ) from exc
                    self._sleep(self.backoff_base * self.backoff_factor ** (attempt - 1))
        raise AssertionError("unreachable")

    def _record(self, req: ChatRequest, digest: str, content: str, was_cached: bool):
        with self._log_lock:
            self.call_log.append(
                CallRecord(req.request_tag, req.model_id, digest, was_cached)
            )
            if self.recorder is not None:
                self.recorder[digest] = content

    def _cache_path(self, digest: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{digest}.json"

    def _cache_read(self, digest: str) -> str | None:
        path = self._cache_path(digest)
        if path is None or not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)["content"]

    def _cache_write(self, digest: str, content: str) -> None:
        path = self._cache_path(digest)
        if path is None:
            return
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=digest, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"content": content}, fh, ensure_ascii=False)
        os.replace(tmp, path)

    def calls_for(self, tag_prefix: str) -> list[CallRecord]:
        with self._log_lock:
            return [c for c in self.call_log if c.request_tag.startswith(tag_prefix)]
