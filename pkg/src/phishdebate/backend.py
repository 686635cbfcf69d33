"""Text-completion backends.

``LiveBackend`` talks to any chat-completions style HTTP endpoint.
``ScriptedBackend`` replays canned replies chosen by matching the prompt,
which is what the tests and offline campaigns use.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import requests

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120.0
DEFAULT_ATTEMPTS = 3
DEFAULT_MAX_INFLIGHT = 8

# Roles that are not a specialist agent.
MODERATOR = "moderator"
JUDGE = "judge"

FAILURE_KINDS = ("timeout", "rate_limit", "transport", "remote_refusal")


class BackendError(RuntimeError):
    def __init__(self, kind: str, message: str, attempts: int = 1):
        if kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {kind!r}")
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.attempts = attempts


class _Transient(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class ModelRequest:
    role: str
    prompt: str
    model_name: str = "default"
    temperature: float = 0.0
    max_reply_tokens: int = 1024

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be nonempty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_reply_tokens <= 0:
            raise ValueError("max_reply_tokens must be positive")


@dataclass(frozen=True)
class ModelReply:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    latency: float = 0.0
    model_name: str = "default"
    attempts: int = 1

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be >= 0")


class Backend:
    """Shared plumbing: an in-flight request ceiling and a clock."""

    def __init__(self, max_inflight: int = DEFAULT_MAX_INFLIGHT):
        if max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")
        self.max_inflight = max_inflight
        self._slots = threading.BoundedSemaphore(max_inflight)

    def clock(self) -> float:
        return time.perf_counter()

    def complete(self, request: ModelRequest) -> ModelReply:
        with self._slots:
            return self._complete(request)

    def _complete(self, request: ModelRequest) -> ModelReply:
        raise NotImplementedError


@dataclass(frozen=True)
class ScriptRule:
    reply: str
    contains: tuple[str, ...] = ()
    pattern: re.Pattern | None = None
    role: str | None = None

    def matches(self, request: ModelRequest) -> bool:
        if self.role is not None and self.role != request.role:
            return False
        if any(s not in request.prompt for s in self.contains):
            return False
        if self.pattern is not None and not self.pattern.search(request.prompt):
            return False
        return True

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScriptRule":
        contains = data.get("contains", ())
        if isinstance(contains, str):
            contains = (contains,)
        pattern = data.get("pattern")
        if not contains and pattern is None and data.get("role") is None:
            raise ValueError(f"rule needs 'contains', 'pattern' or 'role': {dict(data)!r}")
        return cls(
            reply=data["reply"],
            contains=tuple(contains),
            pattern=re.compile(pattern, re.DOTALL) if pattern is not None else None,
            role=data.get("role"),
        )


@dataclass
class ScriptedBackendRules:
    rules: list[ScriptRule] = field(default_factory=list)
    default_reply: str = ""

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScriptedBackendRules":
        return cls(
            rules=[ScriptRule.from_dict(r) for r in data.get("rules", [])],
            default_reply=data.get("default_reply", ""),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackendRules":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class ScriptedBackend(Backend):
    """Deterministic backend: the first matching rule's reply, else the default.

    The clock is virtual and never advances, so timings recorded against this
    backend are reproducible (all zero).
    """

    def __init__(self, rules: ScriptedBackendRules | Sequence | None = None, default_reply: str = "",
                 max_inflight: int = DEFAULT_MAX_INFLIGHT):
        super().__init__(max_inflight)
        if isinstance(rules, ScriptedBackendRules):
            self.rules = rules
        else:
            parsed = []
            for rule in rules or []:
                if isinstance(rule, ScriptRule):
                    parsed.append(rule)
                elif isinstance(rule, Mapping):
                    parsed.append(ScriptRule.from_dict(rule))
                else:
                    matcher, reply = rule
                    parsed.append(ScriptRule(reply=reply, contains=(matcher,)))
            self.rules = ScriptedBackendRules(parsed, default_reply)
        self._lock = threading.Lock()
        self.requests: list[ModelRequest] = []

    def clock(self) -> float:
        return 0.0

    def _complete(self, request: ModelRequest) -> ModelReply:
        with self._lock:
            self.requests.append(request)
        text = next((r.reply for r in self.rules.rules if r.matches(request)), self.rules.default_reply)
        return ModelReply(text=text, latency=0.0, model_name=request.model_name)

    def calls(self, role: str | None = None) -> list[ModelRequest]:
        with self._lock:
            return [r for r in self.requests if role is None or r.role == role]


class LiveBackend(Backend):
    """Chat-completions over HTTP with timeout and exponential backoff."""

    def __init__(
        self,
        endpoint: str,
        path: str = "/v1/chat/completions",
        api_key_env: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        attempts: int = DEFAULT_ATTEMPTS,
        backoff_base: float = 1.0,
        backoff_cap: float = 30.0,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
        session: requests.Session | None = None,
    ):
        super().__init__(max_inflight)
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        self.url = endpoint.rstrip("/") + "/" + path.lstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.attempts = attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._local = threading.local()
        self._session = session

    def _http(self) -> requests.Session:
        if self._session is not None:
            return self._session
        # requests.Session is not documented as thread-safe; one per thread.
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, request: ModelRequest) -> dict:
        return {
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_reply_tokens,
        }

    def _attempt(self, request: ModelRequest) -> tuple[str, int | None, int | None]:
        try:
            resp = self._http().post(self.url, json=self._payload(request), headers=self._headers(),
                                     timeout=self.timeout)
        except requests.Timeout as exc:
            raise _Transient("timeout", str(exc)) from exc
        except requests.RequestException as exc:
            raise _Transient("transport", str(exc)) from exc
        if resp.status_code == 429:
            raise _Transient("rate_limit", f"HTTP 429: {resp.text[:200]}")
        if resp.status_code >= 500:
            raise _Transient("transport", f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise BackendError("remote_refusal", f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError("remote_refusal", f"unexpected response body: {exc}") from exc
        if text is None:
            raise BackendError("remote_refusal", "reply has no content")
        usage = body.get("usage") or {}
        return text, usage.get("prompt_tokens"), usage.get("completion_tokens")

    def _complete(self, request: ModelRequest) -> ModelReply:
        started = time.perf_counter()
        last: _Transient | None = None
        for attempt in range(1, self.attempts + 1):
            try:
                text, p_tok, c_tok = self._attempt(request)
            except _Transient as exc:
                last = exc
                logger.warning("%s request attempt %d/%d failed: %s", request.role, attempt, self.attempts, exc)
                if attempt < self.attempts:
                    time.sleep(min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1)))
                continue
            except BackendError as exc:
                exc.attempts = attempt
                raise
            return ModelReply(
                text=text,
                prompt_tokens=p_tok,
                completion_tokens=c_tok,
                latency=time.perf_counter() - started,
                model_name=request.model_name,
                attempts=attempt,
            )
        assert last is not None
        raise BackendError(last.kind, str(last), attempts=self.attempts)


@dataclass(frozen=True)
class CostSummary:
    cost: float
    lower_bound: bool
    uncounted_replies: int = 0


def usage_summary(replies: Sequence[ModelReply], price_table: Mapping[str, tuple[float, float]]) -> CostSummary:
    """Total cost from token counts and per-token prices.

    Replies with missing counts or an unpriced model contribute nothing and
    mark the total as a lower bound.
    """
    terms = []
    missing = 0
    for reply in replies:
        prices = price_table.get(reply.model_name)
        if prices is None or reply.prompt_tokens is None or reply.completion_tokens is None:
            missing += 1
            if prices is not None:
                terms.append((reply.prompt_tokens or 0) * prices[0] + (reply.completion_tokens or 0) * prices[1])
            continue
        terms.append(reply.prompt_tokens * prices[0] + reply.completion_tokens * prices[1])
    return CostSummary(cost=math.fsum(terms), lower_bound=missing > 0, uncounted_replies=missing)
