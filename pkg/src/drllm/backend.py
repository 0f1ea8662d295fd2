"""Chat-completion backends: OpenAI-compatible HTTP and a deterministic mock.

Both expose ``complete(messages) -> BackendResponse``. The mock is a pure
function of its parameters and the request, which makes it usable for
offline end-to-end runs and for checking the evaluation harness against
known ground truth.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Mapping, Sequence

import requests

from .flow_data import Label
from .prompts import DATA_PREFIX, ChatMessage

logger = logging.getLogger(__name__)

__all__ = [
    "ACK_TEXT",
    "REFUSAL_TEXT",
    "AuthError",
    "BackendConfig",
    "BackendError",
    "BackendResponse",
    "HttpBackend",
    "MockBackend",
    "MockDecision",
    "MockParams",
    "ProviderResponseError",
    "RequestRejectedError",
    "RetriesExhaustedError",
    "TokenBucket",
    "complete",
    "make_backend",
    "mock_decide",
    "request_fingerprint",
]

REFUSAL_TEXT = "I cannot determine a probability from this data."
ACK_TEXT = "Acknowledged."


class BackendError(RuntimeError):
    status: int | None = None

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class AuthError(BackendError):
    pass


class RetriesExhaustedError(BackendError):
    def __init__(self, message: str, status: int | None = None, attempts: int = 0):
        super().__init__(message, status)
        self.attempts = attempts


class RequestRejectedError(BackendError):
    """Non-retryable 4xx from the provider."""


class ProviderResponseError(BackendError):
    """Response body did not have the chat-completions shape."""


@dataclass(frozen=True)
class MockParams:
    accuracy: float = 0.85
    l1_rate: float = 0.05
    l2_rate: float = 0.02
    seed: int = 7

    def __post_init__(self):
        for name in ("accuracy", "l1_rate", "l2_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.l1_rate + self.l2_rate > 1.0:
            raise ValueError("l1_rate + l2_rate must not exceed 1")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    name: str = "mock"
    model_name: str | None = None
    endpoint_url: str | None = None
    auth_source: str | None = None
    temperature: float | None = None
    max_output_tokens: int | None = None
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 1.0
    backoff_cap: float = 30.0
    requests_per_second: float = 5.0
    mock_params: MockParams | None = None

    def __post_init__(self):
        if self.kind not in ("http", "mock"):
            raise ValueError(f"backend kind must be http or mock, got {self.kind!r}")
        if self.kind == "http":
            if not self.endpoint_url:
                raise ValueError(f"http backend {self.name!r} needs endpoint_url")
            if not self.auth_source:
                raise ValueError(f"http backend {self.name!r} needs auth_source")
            if not self.model_name:
                raise ValueError(f"http backend {self.name!r} needs model_name")
        elif self.mock_params is None:
            object.__setattr__(self, "mock_params", MockParams())
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens is not None and self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @property
    def model_identity(self) -> str:
        """Model name used in fingerprints; mock identity includes its params."""
        if self.kind == "mock":
            p = self.mock_params
            base = self.model_name or "mock"
            return f"{base}(accuracy={p.accuracy!r},l1={p.l1_rate!r},l2={p.l2_rate!r},seed={p.seed})"
        return self.model_name


@dataclass(frozen=True)
class BackendResponse:
    text: str
    latency: float
    request_fingerprint: str
    cached: bool = False


def request_fingerprint(model: str, messages: Sequence[ChatMessage], temperature=None) -> str:
    """128-bit hex digest of (model, messages, temperature)."""
    payload = json.dumps(
        [model, [[m.role, m.content] for m in messages], temperature],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.blake2b(payload.encode("utf-8"), digest_size=16).hexdigest()


# --------------------------------------------------------------------- mock

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _uniforms(seed: int, token_text: str, count: int) -> list[float]:
    digest = hashlib.blake2b(token_text.encode("utf-8"), digest_size=8).digest()
    key = _splitmix64((int.from_bytes(digest, "little") ^ (seed & _MASK64)) & _MASK64)
    return [(_splitmix64((key + k * _GOLDEN) & _MASK64) >> 11) * 2.0**-53 for k in range(count)]


def _pct(hundredths: int) -> Decimal:
    return Decimal(hundredths) / 100


@dataclass(frozen=True)
class MockDecision:
    """What the mock said for one flow, with the ground truth it was given."""

    token_text: str
    true_label: Label
    kind: str  # "valid" | "l1" | "l2"
    text: str
    p_attack: float | None = None
    p_benign: float | None = None


def _mock_draw(params: MockParams, token_text: str, true_label: Label) -> MockDecision:
    u_kind, u_correct, u_conf = _uniforms(params.seed, token_text, 3)
    if u_kind < params.l2_rate:
        return MockDecision(token_text, true_label, "l2", REFUSAL_TEXT)
    if u_kind < params.l2_rate + params.l1_rate:
        # attack + benign = 1.2 by construction
        x = 20 + int(u_conf * 81)
        a, b = _pct(x), _pct(120 - x)
        return MockDecision(
            token_text, true_label, "l1", f"Attack: {a}, Benign: {b}", float(a), float(b)
        )
    confidence = 51 + int(u_conf * 49)  # 0.51 .. 0.99
    says_attack = (true_label is Label.ATTACK) == (u_correct < params.accuracy)
    attack = confidence if says_attack else 100 - confidence
    a, b = _pct(attack), _pct(100 - attack)
    return MockDecision(
        token_text, true_label, "valid", f"Attack: {a}, Benign: {b}", float(a), float(b)
    )


def mock_decide(params: MockParams, token_text: str, true_label: Label) -> str:
    """Deterministic mock answer for one flow.

    A single uniform draw keyed by ``(seed, token_text)`` selects refusal
    (probability ``l2_rate``), a pair summing to 1.2 (``l1_rate``) or a
    well-formed pair; the latter lands on the true side of 0.5 with
    probability ``accuracy``.
    """
    return _mock_draw(params, token_text, Label.coerce(true_label)).text


_DATA_LINE = re.compile("^" + re.escape(DATA_PREFIX) + "(.*)$", re.M)


class MockBackend:
    """Answers stage-1 prompts with an acknowledgement and stage-2 prompts via
    :func:`mock_decide`, looking the flow's truth up by its token text.

    ``sidecar`` collects every decision made, for oracle checks.
    """

    def __init__(self, config: BackendConfig, truth: Mapping[str, Label] | None = None):
        if config.kind != "mock":
            raise ValueError("MockBackend needs a mock config")
        self.config = config
        self.truth = dict(truth or {})
        self.sidecar: list[MockDecision] = []
        self.calls = 0
        self._lock = threading.Lock()

    def register_truth(self, token_text: str, label: Label) -> None:
        self.truth.setdefault(token_text, Label.coerce(label))

    def complete(self, messages: Sequence[ChatMessage]) -> BackendResponse:
        if not messages:
            raise ValueError("messages must be non-empty")
        start = time.perf_counter()
        fp = request_fingerprint(self.config.model_identity, messages, self.config.temperature)
        with self._lock:
            self.calls += 1
        last_user = next((m for m in reversed(messages) if m.role == "user"), None)
        found = _DATA_LINE.findall(last_user.content) if last_user else []
        if not found:
            text = ACK_TEXT
        else:
            token_text = found[-1]
            if token_text not in self.truth:
                raise BackendError("mock backend has no ground truth for this flow")
            decision = _mock_draw(self.config.mock_params, token_text, self.truth[token_text])
            with self._lock:
                self.sidecar.append(decision)
            text = decision.text
        return BackendResponse(text, time.perf_counter() - start, fp)


# --------------------------------------------------------------------- http


class TokenBucket:
    """Blocking token-bucket limiter, ``rate`` tokens per second."""

    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                # tolerance: refill arithmetic can stall just below a whole token
                if self._tokens >= 1 - 1e-9:
                    self._tokens = max(0.0, self._tokens - 1)
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


_RETRY_STATUS = {429} | set(range(500, 600))


class HttpBackend:
    """Non-streaming client for OpenAI-style ``/chat/completions`` endpoints."""

    def __init__(
        self,
        config: BackendConfig,
        session: requests.Session | None = None,
        environ: Mapping[str, str] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if config.kind != "http":
            raise ValueError("HttpBackend needs an http config")
        self.config = config
        self.session = session or requests.Session()
        self.environ = os.environ if environ is None else environ
        self.limiter = TokenBucket(config.requests_per_second)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self.attempts = 0

    def _token(self) -> str:
        var = self.config.auth_source
        token = self.environ.get(var, "").strip()
        if not token:
            raise AuthError(f"environment variable {var} is not set (API key for backend {self.config.name!r})")
        return token

    def _body(self, messages: Sequence[ChatMessage]) -> dict:
        body = {
            "model": self.config.model_name,
            "messages": [m.as_dict() for m in messages],
            "stream": False,
        }
        if self.config.temperature is not None:
            body["temperature"] = self.config.temperature
        if self.config.max_output_tokens is not None:
            body["max_tokens"] = self.config.max_output_tokens
        return body

    def _backoff(self, attempt: int) -> float:
        delay = min(self.config.backoff_cap, self.config.backoff_base * 2**attempt)
        return delay * (0.5 + self._rng.random() / 2)

    def complete(self, messages: Sequence[ChatMessage]) -> BackendResponse:
        if not messages:
            raise ValueError("messages must be non-empty")
        cfg = self.config
        headers = {"Authorization": f"Bearer {self._token()}", "Content-Type": "application/json"}
        body = self._body(messages)
        fp = request_fingerprint(cfg.model_identity, messages, cfg.temperature)

        last_status, last_reason = None, ""
        start = time.perf_counter()
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self._sleep(self._backoff(attempt - 1))
            self.limiter.acquire()
            self.attempts += 1
            try:
                resp = self.session.post(cfg.endpoint_url, json=body, headers=headers, timeout=cfg.timeout)
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_status, last_reason = None, type(exc).__name__
                logger.warning("%s: attempt %d failed: %s", cfg.name, attempt + 1, exc)
                continue
            if resp.status_code in _RETRY_STATUS:
                last_status, last_reason = resp.status_code, resp.reason or ""
                logger.warning("%s: attempt %d got HTTP %d", cfg.name, attempt + 1, resp.status_code)
                continue
            if resp.status_code == 401 or resp.status_code == 403:
                raise AuthError(f"{cfg.name}: HTTP {resp.status_code} (check {cfg.auth_source})", resp.status_code)
            if resp.status_code >= 400:
                raise RequestRejectedError(f"{cfg.name}: HTTP {resp.status_code}: {resp.text[:200]}", resp.status_code)
            return BackendResponse(self._extract(resp), time.perf_counter() - start, fp)

        raise RetriesExhaustedError(
            f"{cfg.name}: gave up after {cfg.max_retries + 1} attempts"
            + (f" (last HTTP {last_status})" if last_status else f" ({last_reason})"),
            last_status,
            cfg.max_retries + 1,
        )

    def _extract(self, resp: requests.Response) -> str:
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderResponseError(
                f"{self.config.name}: malformed completion envelope ({exc!r})", resp.status_code
            ) from None
        if not isinstance(content, str):
            raise ProviderResponseError(f"{self.config.name}: completion content is not text", resp.status_code)
        return content


def make_backend(config: BackendConfig, truth: Mapping[str, Label] | None = None):
    if config.kind == "mock":
        return MockBackend(config, truth)
    return HttpBackend(config)


def complete(config: BackendConfig, messages: Sequence[ChatMessage], truth: Mapping[str, Label] | None = None) -> BackendResponse:
    """One-shot completion; builds a throwaway client for ``config``."""
    return make_backend(config, truth).complete(messages)
