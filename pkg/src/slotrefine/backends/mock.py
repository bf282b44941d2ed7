"""Deterministic offline backends.

Embedding generator (fixed, platform independent)::

    key    = SHA-256(b"slotrefine-mock-embed-v1\\0" + str(seed) + b"\\0" + input_bytes)
    stream = SHAKE-256(key), first 8*d bytes, read as d little-endian uint64 words
    v[j]   = 2 * (word[j] >> 11) * 2**-53 - 1          # uniform on [-1, 1)
    out    = v / sqrt(fsum(v * v))

``input_bytes`` is ``b"text\\0" + utf8`` for strings and a shape/dtype
header plus raw pixels for rasters (see ``base.image_bytes``). Every step
is exactly rounded IEEE arithmetic, so vectors are bit-identical on any
platform.

Reranker: ``h(q, d) = |T(q) & T(d)| / |T(q) | T(d)|`` where ``T`` is the set
of lowercase alphanumeric tokens (0 when both sets are empty).
"""

from __future__ import annotations

import hashlib
import math
import re
from typing import Mapping, Sequence

import numpy as np

from .base import CallCounter, image_bytes, text_bytes

_TOKEN = re.compile(r"[a-z0-9]+")

_REGIONS = ["mouth corner", "upper lip", "lower lip", "teeth area", "chin line",
            "cheek surface", "jaw boundary", "nose base", "eye region", "hairline"]
_OBSERVATIONS = [
    "texture looks mildly soft across frames",
    "edges stay consistent between frames",
    "shading shifts slightly over time",
    "detail is uniform with little change",
    "color varies a little from frame to frame",
    "contours remain steady and aligned",
]


def mock_embed(data: bytes, seed: int, dimension: int) -> np.ndarray:
    key = hashlib.sha256(b"slotrefine-mock-embed-v1\x00" + str(seed).encode() + b"\x00" + data).digest()
    words = np.frombuffer(hashlib.shake_256(key).digest(8 * dimension), dtype="<u8")
    v = (words >> np.uint64(11)).astype(np.float64) * (2.0 ** -53) * 2.0 - 1.0
    norm = math.sqrt(math.fsum((v * v).tolist()))
    return v / norm


def tokens(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


def jaccard(query: str, doc: str) -> float:
    a, b = tokens(query), tokens(doc)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


class MockEmbedding:
    def __init__(self, dimension: int = 64, seed: int = 0):
        self.dimension = dimension
        self.seed = seed
        self.identity = f"mock-embed(d={dimension},seed={seed})"
        self.counter = CallCounter()

    @property
    def calls(self) -> int:
        return self.counter.calls

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        self.counter.bump()
        return np.stack([mock_embed(text_bytes(t), self.seed, self.dimension) for t in texts]) \
            if texts else np.zeros((0, self.dimension))

    def embed_images(self, images: Sequence[np.ndarray]) -> np.ndarray:
        self.counter.bump()
        return np.stack([mock_embed(image_bytes(im), self.seed, self.dimension) for im in images]) \
            if len(images) else np.zeros((0, self.dimension))


class MockVlm:
    """Templated describer: one line per strip, chosen from the strip's content hash.

    In oracle mode (``oracle`` maps sample_id -> 0/1) samples found in the
    table are described with their label's anchor phrases instead, so rank
    scores correlate with labels by construction.
    """

    def __init__(self, seed: int = 0, oracle: Mapping[str, int] | None = None,
                 anchors_fake: Sequence[str] = (), anchors_real: Sequence[str] = (),
                 max_chars: int = 4000):
        self.seed = seed
        self.oracle = dict(oracle or {})
        self.anchors_fake = list(anchors_fake)
        self.anchors_real = list(anchors_real)
        self.max_chars = max_chars
        mode = "oracle" if self.oracle else "template"
        self.identity = f"mock-vlm(seed={seed},mode={mode})"
        self.counter = CallCounter()

    @property
    def calls(self) -> int:
        return self.counter.calls

    def _hash(self, raster: np.ndarray) -> bytes:
        return hashlib.sha256(str(self.seed).encode() + b"\x00" + image_bytes(raster)).digest()

    def describe(self, rasters: Sequence[np.ndarray], prompt: str, sample_id: str | None = None) -> str:
        self.counter.bump()
        label = self.oracle.get(sample_id) if sample_id is not None else None
        lines = []
        k = len(rasters)
        for m, raster in enumerate(rasters):
            h = self._hash(raster)
            if label is not None:
                pool = self.anchors_fake if int(label) == 1 else self.anchors_real
                lines.append(f"{m + 1}. {pool[h[0] % len(pool)]}")
            else:
                region = _REGIONS[h[0] % len(_REGIONS)]
                obs = _OBSERVATIONS[h[1] % len(_OBSERVATIONS)]
                lines.append(f"{m + 1}. strip {m + 1} of {k}: the {region} {obs}")
        return "\n".join(lines)[: self.max_chars]


class MockReranker:
    identity = "mock-rerank(jaccard)"

    def __init__(self):
        self.counter = CallCounter()

    @property
    def calls(self) -> int:
        return self.counter.calls

    def rerank(self, query: str, documents: Sequence[str]) -> list[float]:
        self.counter.bump()
        return [jaccard(query, d) for d in documents]

    def relevance(self, query: str, document: str) -> float:
        return self.rerank(query, [document])[0]
