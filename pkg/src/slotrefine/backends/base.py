"""Backend interfaces.

Three model roles are reached through small protocols so the pipeline can
run against remote services, deterministic mocks, or a cache in front of
either.
"""

from __future__ import annotations

import hashlib
import threading
from typing import Protocol, Sequence, runtime_checkable

import numpy as np


@runtime_checkable
class EmbeddingBackend(Protocol):
    identity: str
    dimension: int

    def embed_text(self, texts: Sequence[str]) -> np.ndarray: ...

    def embed_images(self, images: Sequence[np.ndarray]) -> np.ndarray: ...


@runtime_checkable
class VlmBackend(Protocol):
    identity: str

    def describe(self, rasters: Sequence[np.ndarray], prompt: str, sample_id: str | None = None) -> str: ...


@runtime_checkable
class RerankerBackend(Protocol):
    identity: str

    def rerank(self, query: str, documents: Sequence[str]) -> list[float]: ...


class CallCounter:
    """Thread-safe count of backend round trips."""

    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0

    def bump(self) -> None:
        with self._lock:
            self.calls += 1


def image_bytes(img: np.ndarray) -> bytes:
    """Canonical byte identity of a raster: shape, dtype, then raw pixels."""
    img = np.ascontiguousarray(img)
    header = f"image\x00{'x'.join(map(str, img.shape))}|{img.dtype.str}\x00".encode()
    return header + img.tobytes()


def text_bytes(text: str) -> bytes:
    return b"text\x00" + text.encode("utf-8")


def image_digest(img: np.ndarray) -> str:
    return hashlib.sha256(image_bytes(img)).hexdigest()
