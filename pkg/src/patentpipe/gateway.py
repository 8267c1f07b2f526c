"""Uniform interface to multimodal models.

One request is a prompt plus an optional page image; one response is
text plus token usage. The gateway owns retry with exponential backoff,
bounded parallelism, and a deterministic mock backend keyed by request
digests so the whole pipeline can run offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0  # includes thinking tokens, billed at output rates

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
        )


@dataclass(frozen=True)
class ModelRequest:
    prompt: str
    model_id: str
    image: bytes | None = None
    temperature: float = 0.0  # the pipeline always runs deterministic sampling


@dataclass(frozen=True)
class ModelResponse:
    text: str
    usage: TokenUsage
    attempt_count: int = 1


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 10
    base_delay: float = 1.0
    multiplier: float = 2.0
    max_delay: float = 60.0
    jitter: bool = True

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def delay(self, attempt: int, rng: random.Random | None = None) -> float:
        """Backoff before the given (1-based) attempt's retry."""
        raw = min(self.base_delay * self.multiplier ** (attempt - 1), self.max_delay)
        if self.jitter:
            return (rng or random).uniform(0.0, raw)
        return raw


# Per-entry calls are capped at ten attempts; page extraction keeps trying
# longer since a lost page blocks the whole volume.
ENTRY_RETRY = RetryPolicy(max_attempts=10)
PAGE_RETRY = RetryPolicy(max_attempts=25)


class GatewayError(RuntimeError):
    pass


class AuthError(GatewayError):
    """Credential problem; retrying cannot help."""


class BadRequest(GatewayError):
    """Malformed request rejected by the backend; retrying cannot help."""


class TransientBackendError(GatewayError):
    """Network trouble, rate limit, or server error; safe to retry."""


class InvalidModelOutput(GatewayError):
    """The model answered, but the payload failed validation; retried like a failure."""


class UnknownFixture(GatewayError):
    pass


class ExhaustedRetries(GatewayError):
    def __init__(self, attempts: int, last_error: Exception) -> None:
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


def request_digest(model_id: str, prompt: str, image: bytes | None) -> str:
    """Digest identifying a request: sha256 over model_id, prompt and image, NUL-separated."""
    h = hashlib.sha256()
    h.update(model_id.encode("utf-8"))
    h.update(b"\x00")
    h.update(prompt.encode("utf-8"))
    h.update(b"\x00")
    h.update(image or b"")
    return h.hexdigest()


class Backend(Protocol):
    def complete(self, request: ModelRequest) -> tuple[str, TokenUsage]:
        ...


def _mock_usage(request: ModelRequest, text: str) -> TokenUsage:
    input_tokens = (len(request.prompt.encode("utf-8")) + 3) // 4
    if request.image is not None:
        input_tokens += (len(request.image) + 1023) // 1024
    output_tokens = (len(text.encode("utf-8")) + 3) // 4
    return TokenUsage(input_tokens=input_tokens, output_tokens=output_tokens)


class MockBackend:
    """Deterministic backend answering from a digest-keyed fixture map.

    ``on_missing`` selects the behaviour for unknown digests: ``"error"``
    raises UnknownFixture (strict mode), ``"echo"`` returns the prompt
    itself.
    """

    def __init__(self, fixtures: dict[str, str], on_missing: str = "error") -> None:
        if on_missing not in ("error", "echo"):
            raise ValueError(f"on_missing must be 'error' or 'echo', got {on_missing!r}")
        self.fixtures = dict(fixtures)
        self.on_missing = on_missing

    @classmethod
    def from_file(cls, path: str | Path, on_missing: str = "error") -> "MockBackend":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in raw.items()
        ):
            raise ValueError(f"fixture file {path} must be a JSON map of digest -> text")
        return cls(raw, on_missing=on_missing)

    def complete(self, request: ModelRequest) -> tuple[str, TokenUsage]:
        digest = request_digest(request.model_id, request.prompt, request.image)
        if digest in self.fixtures:
            text = self.fixtures[digest]
        elif self.on_missing == "echo":
            text = request.prompt
        else:
            raise UnknownFixture(f"no fixture for request digest {digest}")
        return text, _mock_usage(request, text)


def _sniff_media_type(image: bytes) -> str:
    if image.startswith(b"\x89PNG\r\n\x1a\n"):
        return "image/png"
    if image.startswith(b"\xff\xd8\xff"):
        return "image/jpeg"
    if image[:4] in (b"II*\x00", b"MM\x00*"):
        return "image/tiff"
    return "application/octet-stream"


class HttpBackend:
    """Adapter speaking the pipeline's generic HTTP JSON contract.

    Request body: ``{"model", "temperature", "prompt", "image"?}`` where
    ``image`` is ``{"media_type", "data"}`` with base64 payload. Expected
    response body: ``{"text", "usage": {"input_tokens", "output_tokens"}}``.
    Vendors with different schemas get their own thin adapter class; the
    gateway only needs ``complete()``.

    The API key is read from the environment variable named by
    ``api_key_env``; the key itself never appears in configuration.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "MODEL_API_KEY",
        timeout: float = 120.0,
        session: requests.Session | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._session = session or requests.Session()

    def complete(self, request: ModelRequest) -> tuple[str, TokenUsage]:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        payload: dict = {
            "model": request.model_id,
            "temperature": request.temperature,
            "prompt": request.prompt,
        }
        if request.image is not None:
            payload["image"] = {
                "media_type": _sniff_media_type(request.image),
                "data": base64.b64encode(request.image).decode("ascii"),
            }
        try:
            response = self._session.post(
                f"{self.base_url}/v1/generate",
                json=payload,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientBackendError(str(exc)) from exc
        if response.status_code in (401, 403):
            raise AuthError(f"HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code == 400:
            raise BadRequest(response.text[:500])
        if response.status_code >= 400:
            raise TransientBackendError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            body = response.json()
            text = body["text"]
            usage = TokenUsage(
                input_tokens=int(body["usage"]["input_tokens"]),
                output_tokens=int(body["usage"]["output_tokens"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise TransientBackendError(f"malformed backend response: {exc}") from exc
        return text, usage


@dataclass
class Gateway:
    """Shared entry point to a backend with retry and a global in-flight cap.

    ``max_in_flight`` set at construction bounds concurrent backend calls
    across *all* callers of this instance; ``invoke_many`` additionally
    bounds each batch.
    """

    backend: Backend
    max_in_flight: int | None = None
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=random.Random)

    def __post_init__(self) -> None:
        self._semaphore = (
            threading.Semaphore(self.max_in_flight) if self.max_in_flight else None
        )

    def _complete(self, request: ModelRequest) -> tuple[str, TokenUsage]:
        if self._semaphore is None:
            return self.backend.complete(request)
        with self._semaphore:
            return self.backend.complete(request)

    def invoke(
        self,
        request: ModelRequest,
        policy: RetryPolicy = ENTRY_RETRY,
        validate: Callable[[str], None] | None = None,
    ) -> ModelResponse:
        """Call the backend, retrying transient failures and invalid output.

        The returned usage reflects the successful attempt only. A
        ``validate`` callback may reject the response text by raising; the
        rejection consumes an attempt exactly like a transport failure.
        """
        last_error: Exception | None = None
        for attempt in range(1, policy.max_attempts + 1):
            try:
                text, usage = self._complete(request)
                if validate is not None:
                    validate(text)
                return ModelResponse(text=text, usage=usage, attempt_count=attempt)
            except (AuthError, BadRequest):
                raise
            except GatewayError as exc:
                last_error = exc
            except Exception as exc:  # parse errors from validate callbacks
                last_error = exc
            if attempt < policy.max_attempts:
                self.sleep(policy.delay(attempt, self.rng))
        assert last_error is not None
        raise ExhaustedRetries(policy.max_attempts, last_error)

    def invoke_many(
        self,
        reqs: Sequence[ModelRequest],
        policy: RetryPolicy = ENTRY_RETRY,
        max_in_flight: int = 8,
        validate: Callable[[str], None] | None = None,
    ) -> list[ModelResponse | GatewayError]:
        """Invoke requests concurrently, results in request order.

        Each slot holds either the response or the error that position
        ended with; one failure never aborts its siblings.
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

        def one(request: ModelRequest) -> ModelResponse | GatewayError:
            try:
                return self.invoke(request, policy, validate)
            except GatewayError as exc:
                return exc

        if not reqs:
            return []
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            return list(pool.map(one, reqs))
