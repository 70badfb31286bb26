"""OpenAI-compatible chat-completions transport, plus record/replay wrappers.

``chat`` never raises for network or HTTP trouble; failures come back as
``ChatOutcome`` values. Transcripts are JSON Lines, one record per call.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import socket
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from .errors import ReplayExhausted, ReplayPromptDrift

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-4o"
RETRY_BACKOFF = (1.0, 2.0)
RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = DEFAULT_BASE_URL
    api_key: str = ""
    model: str = DEFAULT_MODEL

    @classmethod
    def from_env(cls, environ=None) -> "EndpointConfig":
        env = os.environ if environ is None else environ
        return cls(
            base_url=env.get("LLM_BASE_URL") or DEFAULT_BASE_URL,
            api_key=env.get("LLM_API_KEY", ""),
            model=env.get("LLM_MODEL") or DEFAULT_MODEL,
        )


@dataclass(frozen=True)
class ChatRequest:
    model: str
    system: str
    user: str
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 60.0
    # bookkeeping for transcripts; never sent or hashed
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.model or not self.user:
            raise ValueError("model and user message must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens < 1 or self.timeout <= 0:
            raise ValueError("max_tokens and timeout must be positive")

    def body(self) -> dict:
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.body(), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def prompt_hash(request: ChatRequest) -> str:
    return hashlib.sha256(request.to_bytes()).hexdigest()


@dataclass(frozen=True)
class ChatOutcome:
    kind: str  # "success" | "transport_error" | "http_error" | "timeout"
    text: str = ""
    status: int | None = None

    @property
    def ok(self) -> bool:
        return self.kind == "success"

    @classmethod
    def success(cls, text: str) -> "ChatOutcome":
        return cls("success", text)

    @classmethod
    def transport_error(cls, message: str) -> "ChatOutcome":
        return cls("transport_error", message)

    @classmethod
    def http_error(cls, status: int, body: str) -> "ChatOutcome":
        return cls("http_error", body[:500], status)

    @classmethod
    def timed_out(cls) -> "ChatOutcome":
        return cls("timeout")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "text": self.text, "status": self.status}

    @classmethod
    def from_dict(cls, d: dict) -> "ChatOutcome":
        return cls(d["kind"], d.get("text", ""), d.get("status"))


def _is_timeout(exc: BaseException) -> bool:
    if isinstance(exc, (socket.timeout, TimeoutError)):
        return True
    return isinstance(exc, urllib.error.URLError) and isinstance(exc.reason, (socket.timeout, TimeoutError))


def _post_once(endpoint: EndpointConfig, request: ChatRequest) -> ChatOutcome:
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    req = urllib.request.Request(
        url,
        data=request.to_bytes(),
        headers={"Content-Type": "application/json", "Authorization": f"Bearer {endpoint.api_key}"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=request.timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        try:
            body = exc.read().decode("utf-8", "replace")
        except Exception:
            body = ""
        return ChatOutcome.http_error(exc.code, body)
    except Exception as exc:  # network layer: refused, DNS, reset, timeout
        if _is_timeout(exc):
            return ChatOutcome.timed_out()
        return ChatOutcome.transport_error(f"{type(exc).__name__}: {exc}")
    try:
        payload = json.loads(raw)
        content = payload["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        return ChatOutcome.transport_error(f"malformed response body: {exc}")
    return ChatOutcome.success(content if isinstance(content, str) else "")


def chat(endpoint: EndpointConfig, request: ChatRequest, *, sleep: Callable[[float], None] = time.sleep) -> ChatOutcome:
    """One chat-completions call with up to two retries (1 s, 2 s backoff)."""
    outcome = _post_once(endpoint, request)
    for delay in RETRY_BACKOFF:
        retryable = outcome.kind in ("transport_error", "timeout") or (
            outcome.kind == "http_error" and outcome.status in RETRYABLE_STATUS)
        if not retryable:
            break
        log.warning("chat request failed (%s %s); retrying in %.0fs", outcome.kind, outcome.status or "", delay)
        sleep(delay)
        outcome = _post_once(endpoint, request)
    return outcome


class HttpClient:
    """Live client bound to an endpoint."""

    def __init__(self, endpoint: EndpointConfig | None = None, sleep=time.sleep):
        self.endpoint = endpoint or EndpointConfig.from_env()
        self.sleep = sleep

    @property
    def model(self) -> str:
        return self.endpoint.model

    def chat(self, request: ChatRequest) -> ChatOutcome:
        return chat(self.endpoint, request, sleep=self.sleep)


# -- transcripts ----------------------------------------------------------------


@dataclass
class TranscriptRecord:
    tick: int
    epoch: int | None
    prompt_hash: str
    prompt: str
    response: str
    parsed: object
    failed: bool
    timestamp: str
    outcome: dict

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "TranscriptRecord":
        return cls(**json.loads(line))


def read_transcript(path) -> list[TranscriptRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TranscriptRecord.from_json(line) for line in fh if line.strip()]


class RecordingClient:
    """Wraps a client and appends one transcript record per call.

    ``parser`` maps a successful response to the value stored under
    ``parsed``; a parser exception marks the record as failed.
    """

    def __init__(self, inner, path, parser: Callable[[str], object] | None = None):
        self.inner = inner
        self.path = Path(path)
        self.parser = parser
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch()
        self._tick = sum(1 for line in self.path.read_text(encoding="utf-8").splitlines() if line.strip())

    @property
    def model(self) -> str:
        return getattr(self.inner, "model", DEFAULT_MODEL)

    def chat(self, request: ChatRequest) -> ChatOutcome:
        outcome = self.inner.chat(request)
        parsed, failed = None, not outcome.ok
        if outcome.ok and self.parser is not None:
            try:
                parsed = self.parser(outcome.text)
            except Exception:
                failed = True
        if hasattr(parsed, "tolist"):
            parsed = parsed.tolist()
        record = TranscriptRecord(
            tick=request.meta.get("tick", self._tick),
            epoch=request.meta.get("epoch"),
            prompt_hash=prompt_hash(request),
            prompt=request.user,
            response=outcome.text if outcome.ok else "",
            parsed=parsed,
            failed=failed,
            timestamp=datetime.now(timezone.utc).isoformat(),
            outcome=outcome.to_dict(),
        )
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(record.to_json() + "\n")
        self._tick += 1
        return outcome


def record_session(inner, transcript_path, parser=None) -> RecordingClient:
    return RecordingClient(inner, transcript_path, parser)


class ReplayClient:
    """Serves recorded outcomes in order, checking each request's prompt hash."""

    def __init__(self, records: list[TranscriptRecord], model: str = DEFAULT_MODEL):
        self.records = records
        self.cursor = 0
        self.model = model

    def chat(self, request: ChatRequest) -> ChatOutcome:
        if self.cursor >= len(self.records):
            raise ReplayExhausted(f"transcript holds {len(self.records)} records; call {self.cursor + 1} has none")
        rec = self.records[self.cursor]
        actual = prompt_hash(request)
        if actual != rec.prompt_hash:
            raise ReplayPromptDrift(self.cursor, rec.prompt_hash, actual)
        self.cursor += 1
        return ChatOutcome.from_dict(rec.outcome)

    @property
    def remaining(self) -> int:
        return len(self.records) - self.cursor


def replay_session(transcript_path, model: str = DEFAULT_MODEL) -> ReplayClient:
    return ReplayClient(read_transcript(transcript_path), model)
