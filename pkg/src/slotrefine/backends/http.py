"""HTTP clients for remote model services.

Request/response schemas are documented in ``docs/protocol.md``. Images
travel as base64 PNG. Transport errors, timeouts, 429 and 5xx responses
are retried with exponential backoff; auth failures and malformed bodies
are not.
"""

from __future__ import annotations

import base64
import logging
import math
import os
import threading
import time
from typing import Any, Sequence

import httpx
import numpy as np

from ..errors import (
    AuthError,
    BackendError,
    BackendTimeout,
    MalformedResponseError,
    RequestTooLargeError,
    TransportError,
)

log = logging.getLogger(__name__)


def encode_png_b64(img: np.ndarray, max_bytes: int) -> str:
    import cv2

    ok, buf = cv2.imencode(".png", cv2.cvtColor(np.ascontiguousarray(img), cv2.COLOR_RGB2BGR))
    if not ok:
        raise BackendError("cannot PNG-encode image for transmission")
    if buf.nbytes > max_bytes:
        raise RequestTooLargeError(f"image of {buf.nbytes} bytes exceeds limit of {max_bytes}")
    return base64.b64encode(buf.tobytes()).decode("ascii")


class _HttpClient:
    def __init__(self, url: str, *, model: str, token: str | None = None, timeout: float = 60.0,
                 max_retries: int = 3, backoff: float = 0.5, max_in_flight: int = 4,
                 max_image_bytes: int = 8 << 20, transport: httpx.BaseTransport | None = None):
        if not url:
            raise BackendError(f"{type(self).__name__}: no endpoint configured")
        self.url = url
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_image_bytes = max_image_bytes
        self._limiter = threading.BoundedSemaphore(max_in_flight)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._calls_lock = threading.Lock()
        self.calls = 0

    def close(self) -> None:
        self._client.close()

    def _once(self, payload: dict) -> Any:
        with self._calls_lock:
            self.calls += 1
        try:
            with self._limiter:
                resp = self._client.post(self.url, json=payload)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"{self.url}: timeout ({exc})") from None
        except httpx.HTTPError as exc:
            raise TransportError(f"{self.url}: {exc}") from None
        if resp.status_code in (401, 403):
            raise AuthError(f"{self.url}: HTTP {resp.status_code}")
        if resp.status_code == 413:
            raise RequestTooLargeError(f"{self.url}: HTTP 413")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"{self.url}: HTTP {resp.status_code}")
        if not 200 <= resp.status_code < 300:
            raise BackendError(f"{self.url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError:
            raise MalformedResponseError(f"{self.url}: response is not JSON") from None

    def post(self, payload: dict) -> Any:
        attempt = 0
        while True:
            try:
                return self._once(payload)
            except BackendError as exc:
                if not exc.retryable or attempt >= self.max_retries:
                    raise
                delay = self.backoff * (2 ** attempt)
                log.warning("retrying %s after %s (attempt %d, sleeping %.2fs)",
                            self.url, exc, attempt + 1, delay)
                time.sleep(delay)
                attempt += 1


def _field(body: Any, name: str, url: str):
    if not isinstance(body, dict) or name not in body:
        raise MalformedResponseError(f"{url}: response lacks {name!r}")
    return body[name]


class HttpEmbedding(_HttpClient):
    """POST {"model", "texts"} or {"model", "images"} -> {"vectors": [[float]]}."""

    def __init__(self, url: str, *, dimension: int, **kw):
        super().__init__(url, **kw)
        self.dimension = dimension
        self.identity = f"http-embed({self.model}@{url})"

    def _vectors(self, body: Any, n: int) -> np.ndarray:
        vecs = _field(body, "vectors", self.url)
        try:
            arr = np.asarray(vecs, dtype=np.float64)
        except (TypeError, ValueError):
            raise MalformedResponseError(f"{self.url}: vectors are not numeric") from None
        if arr.shape != (n, self.dimension):
            raise MalformedResponseError(f"{self.url}: expected {n}x{self.dimension} vectors, got {arr.shape}")
        norms = np.sqrt(np.array([math.fsum(row * row) for row in arr]))
        if not np.all(np.isfinite(arr)) or np.any(norms == 0):
            raise MalformedResponseError(f"{self.url}: degenerate embedding")
        return arr / norms[:, None]

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        body = self.post({"model": self.model, "texts": list(texts)})
        return self._vectors(body, len(texts))

    def embed_images(self, images: Sequence[np.ndarray]) -> np.ndarray:
        enc = [encode_png_b64(im, self.max_image_bytes) for im in images]
        body = self.post({"model": self.model, "images": enc})
        return self._vectors(body, len(images))


class HttpVlm(_HttpClient):
    """POST {"model", "prompt", "images", "temperature": 0, "max_tokens", "sample_id"} -> {"text"}."""

    def __init__(self, url: str, *, max_tokens: int = 512, **kw):
        super().__init__(url, **kw)
        self.max_tokens = max_tokens
        self.identity = f"http-vlm({self.model}@{url})"

    def describe(self, rasters, prompt: str, sample_id: str | None = None) -> str:
        enc = [encode_png_b64(r, self.max_image_bytes) for r in rasters]
        body = self.post({"model": self.model, "prompt": prompt, "images": enc,
                          "temperature": 0, "max_tokens": self.max_tokens, "sample_id": sample_id})
        text = _field(body, "text", self.url)
        if not isinstance(text, str):
            raise MalformedResponseError(f"{self.url}: 'text' is not a string")
        return text


class ChatVlm(_HttpClient):
    """Adapter for the chat-completions convention (``choices[0].message.content``)."""

    def __init__(self, url: str, *, max_tokens: int = 512, **kw):
        super().__init__(url, **kw)
        self.max_tokens = max_tokens
        self.identity = f"chat-vlm({self.model}@{url})"

    def describe(self, rasters, prompt: str, sample_id: str | None = None) -> str:
        content: list[dict] = [
            {"type": "image_url",
             "image_url": {"url": "data:image/png;base64," + encode_png_b64(r, self.max_image_bytes)}}
            for r in rasters
        ]
        content.append({"type": "text", "text": prompt})
        body = self.post({"model": self.model, "temperature": 0, "max_tokens": self.max_tokens,
                          "messages": [{"role": "user", "content": content}]})
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponseError(f"{self.url}: not a chat-completions response") from None
        return text if isinstance(text, str) else ""


class HttpReranker(_HttpClient):
    """POST {"model", "query", "documents"} -> {"scores": [float]} (one per document)."""

    def __init__(self, url: str, **kw):
        super().__init__(url, **kw)
        self.identity = f"http-rerank({self.model}@{url})"

    def rerank(self, query: str, documents: Sequence[str]) -> list[float]:
        body = self.post({"model": self.model, "query": query, "documents": list(documents)})
        scores = _field(body, "scores", self.url)
        if not isinstance(scores, list) or len(scores) != len(documents):
            raise MalformedResponseError(
                f"{self.url}: expected {len(documents)} scores, got "
                f"{len(scores) if isinstance(scores, list) else type(scores).__name__}")
        try:
            out = [float(s) for s in scores]
        except (TypeError, ValueError):
            raise MalformedResponseError(f"{self.url}: non-numeric score") from None
        if not all(math.isfinite(s) for s in out):
            raise MalformedResponseError(f"{self.url}: non-finite score")
        return out

    def relevance(self, query: str, document: str) -> float:
        return self.rerank(query, [document])[0]


def token_from_env(var: str | None) -> str | None:
    return os.environ.get(var) if var else None
