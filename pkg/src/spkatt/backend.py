"""Greedy completion backends: an HTTP client and a replay store for tests."""

from __future__ import annotations

import asyncio
import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from .prompt import EOS

log = logging.getLogger(__name__)

CUE_MAX_NEW_TOKENS = 64
ROLE_MAX_NEW_TOKENS = 256
TOKEN_ENV = "SPKATT_API_TOKEN"


class BackendError(RuntimeError):
    pass


class TransportError(BackendError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


class ServerError(BackendError):
    pass


class ReplayMiss(BackendError):
    def __init__(self, fingerprint: str):
        super().__init__(f"no replay entry for prompt fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class ReplayConflict(BackendError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_new_tokens: int
    stop: str | None = EOS

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must not be empty")
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    finish_reason: str = "stop"


def fingerprint(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Backend(Protocol):
    identity: str

    async def complete(self, request: CompletionRequest) -> CompletionResponse: ...


def strip_echo(prompt: str, text: str) -> str:
    return text[len(prompt):] if prompt and text.startswith(prompt) else text


class ReplayBackend:
    """Answers from a fingerprint-keyed store; unknown prompts are a hard error."""

    def __init__(self, entries: dict[str, CompletionResponse] | None = None, identity: str = "replay"):
        self.entries = dict(entries or {})
        self.identity = identity

    @classmethod
    def from_path(cls, path: str | Path) -> "ReplayBackend":
        path = Path(path)
        entries = _read_store(path) if path.exists() else {}
        digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16] if path.exists() else "empty"
        return cls(entries, identity=f"replay:{digest}")

    def seed(self, prompt: str, text: str, finish_reason: str = "stop") -> None:
        fp = fingerprint(prompt)
        new = CompletionResponse(text, finish_reason)
        if fp in self.entries and self.entries[fp] != new:
            raise ReplayConflict(f"fingerprint {fp} already maps to a different response")
        self.entries[fp] = new

    def lookup(self, prompt: str) -> CompletionResponse:
        fp = fingerprint(prompt)
        try:
            return self.entries[fp]
        except KeyError:
            raise ReplayMiss(fp) from None

    async def complete(self, request: CompletionRequest) -> CompletionResponse:
        return self.lookup(request.prompt)


def _read_store(path: Path) -> dict[str, CompletionResponse]:
    entries: dict[str, CompletionResponse] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            fp = rec["fingerprint"]
            resp = CompletionResponse(rec["response"], rec.get("finish_reason", "stop"))
            if fp in entries and entries[fp] != resp:
                raise ReplayConflict(f"{path}:{lineno}: conflicting entries for fingerprint {fp}")
            entries[fp] = resp
    return entries


_store_lock = threading.Lock()


def record_replay(store_path: str | Path, request: CompletionRequest, response: CompletionResponse) -> bool:
    """Append a prompt/response pair to a store. Returns False if already present."""
    path = Path(store_path)
    fp = fingerprint(request.prompt)
    with _store_lock:
        existing = _read_store(path) if path.exists() else {}
        if fp in existing:
            if existing[fp] != response:
                raise ReplayConflict(f"fingerprint {fp} already recorded with a different response")
            return False
        rec = {
            "fingerprint": fp,
            "prompt": request.prompt,
            "response": response.text,
            "finish_reason": response.finish_reason,
        }
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    return True


class RecordingBackend:
    """Wraps another backend and writes every response into a replay store."""

    def __init__(self, inner: Backend, store_path: str | Path):
        self.inner = inner
        self.store_path = Path(store_path)
        self.identity = f"record({inner.identity})"

    async def complete(self, request: CompletionRequest) -> CompletionResponse:
        response = await self.inner.complete(request)
        record_replay(self.store_path, request, response)
        return response


class WireBackend:
    """Client for a completions endpoint taking ``{prompt, max_tokens, temperature, stop}``.

    Accepts either ``{text, finish_reason}`` or the OpenAI-style
    ``{choices: [{text, finish_reason}]}`` response body.
    """

    RETRY_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        endpoint: str,
        token: str | None = None,
        model: str | None = None,
        max_attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.model = model
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self.transport = transport
        self.identity = f"wire:{endpoint}" + (f":{model}" if model else "")
        self._client: httpx.AsyncClient | None = None

    def _get_client(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient(timeout=self.timeout, transport=self.transport)
        return self._client

    def payload(self, request: CompletionRequest) -> dict:
        body = {
            "prompt": request.prompt,
            "max_tokens": request.max_new_tokens,
            "temperature": 0,
            "stop": [request.stop] if request.stop else [],
        }
        if self.model:
            body["model"] = self.model
        return body

    async def complete(self, request: CompletionRequest) -> CompletionResponse:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        client = self._get_client()
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = await client.post(self.endpoint, json=self.payload(request), headers=headers)
            except httpx.TransportError as exc:
                if attempt == self.max_attempts:
                    raise TransportError(f"request to {self.endpoint} failed: {exc}", attempt) from exc
                log.warning("transport error on attempt %d: %s", attempt, exc)
                await asyncio.sleep(self.backoff * 2 ** (attempt - 1))
                continue
            if resp.status_code in self.RETRY_STATUS and attempt < self.max_attempts:
                log.warning("server returned %d on attempt %d, retrying", resp.status_code, attempt)
                await asyncio.sleep(self.backoff * 2 ** (attempt - 1))
                continue
            if resp.status_code >= 400:
                raise ServerError(f"server returned {resp.status_code}: {resp.text[:200]}")
            return self._parse(request, resp)
        raise AssertionError("unreachable")

    def _parse(self, request: CompletionRequest, resp: httpx.Response) -> CompletionResponse:
        try:
            body = resp.json()
            if "choices" in body:
                body = body["choices"][0]
            text, reason = body["text"], body.get("finish_reason") or "stop"
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ServerError(f"malformed completion response: {exc}") from None
        if not isinstance(text, str):
            raise ServerError("completion text is not a string")
        return CompletionResponse(strip_echo(request.prompt, text), "length" if reason == "length" else "stop")

    async def aclose(self) -> None:
        if self._client is not None:
            await self._client.aclose()
            self._client = None
