"""Content-addressed cache for backend responses.

Layout under the cache root::

    objects/<key[:2]>/<key>.json   one payload per content hash
    index.jsonl                    one {"key", "backend", "op"} line per stored entry

Keys are SHA-256 over the backend identity, the config hash, the operation
name and a digest of the request content. Writes go to a temp file that is
hard-linked into place, so the first writer wins and readers never see a
partial entry.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .. import jsonio
from ..errors import MalformedResponseError, StorageError
from .base import image_digest


class EvidenceCache:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        try:
            (self.root / "objects").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create cache dir {self.root}: {exc}") from exc

    @staticmethod
    def make_key(**identity: Any) -> str:
        return jsonio.digest_obj(identity)

    def _path(self, key: str) -> Path:
        return self.root / "objects" / key[:2] / f"{key}.json"

    def get(self, key: str) -> bytes | None:
        try:
            data = self._path(key).read_bytes()
        except FileNotFoundError:
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return data

    def put(self, key: str, payload: bytes, **meta: Any) -> bytes:
        """Store ``payload`` unless another writer got there first; return the stored bytes."""
        final = self._path(key)
        final.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=final.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            try:
                os.link(tmp, final)
                won = True
            except FileExistsError:
                won = False
            except OSError:
                # filesystems without hard links: replace is still atomic
                os.replace(tmp, final)
                won = True
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        if not won:
            return final.read_bytes()
        line = json.dumps({"key": key, **meta}, sort_keys=True) + "\n"
        with self._lock, open(self.root / "index.jsonl", "a", encoding="utf-8") as fh:
            fh.write(line)
        return payload

    def __len__(self) -> int:
        return sum(1 for _ in (self.root / "objects").glob("*/*.json"))


def _parse(payload: bytes, field: str):
    try:
        return json.loads(payload)[field]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponseError(f"corrupt cache entry: {exc}") from None


class CachedEmbedding:
    """Per-item memoization; only misses reach the wrapped backend."""

    def __init__(self, backend, cache: EvidenceCache, namespace: str):
        self.backend = backend
        self.cache = cache
        self.namespace = namespace
        self.identity = backend.identity
        self.dimension = backend.dimension

    def _key(self, op: str, digest: str) -> str:
        return self.cache.make_key(backend=self.identity, config=self.namespace, op=op, input=digest)

    def _run(self, op: str, items: Sequence, digests: list[str], call) -> np.ndarray:
        keys = [self._key(op, d) for d in digests]
        payloads: list[bytes | None] = [self.cache.get(k) for k in keys]
        missing = [i for i, p in enumerate(payloads) if p is None]
        if missing:
            fresh = call([items[i] for i in missing])
            for i, vec in zip(missing, fresh):
                data = jsonio.dumps({"vector": [float(x) for x in vec]}).encode()
                payloads[i] = self.cache.put(keys[i], data, backend=self.identity, op=op)
        if not payloads:
            return np.zeros((0, self.dimension))
        return np.array([_parse(p, "vector") for p in payloads], dtype=np.float64)

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        digests = [jsonio.digest_bytes(t.encode("utf-8")) for t in texts]
        return self._run("embed_text", list(texts), digests, self.backend.embed_text)

    def embed_images(self, images: Sequence[np.ndarray]) -> np.ndarray:
        digests = [image_digest(im) for im in images]
        return self._run("embed_image", list(images), digests, self.backend.embed_images)


class CachedVlm:
    def __init__(self, backend, cache: EvidenceCache, namespace: str):
        self.backend = backend
        self.cache = cache
        self.namespace = namespace
        self.identity = backend.identity

    def describe(self, rasters, prompt: str, sample_id: str | None = None) -> str:
        key = self.cache.make_key(backend=self.identity, config=self.namespace, op="describe",
                                  input={"rasters": [image_digest(r) for r in rasters],
                                         "prompt": prompt, "sample_id": sample_id})
        payload = self.cache.get(key)
        if payload is None:
            text = self.backend.describe(rasters, prompt, sample_id=sample_id)
            payload = self.cache.put(key, jsonio.dumps({"text": text}).encode(),
                                     backend=self.identity, op="describe")
        return _parse(payload, "text")


class CachedReranker:
    def __init__(self, backend, cache: EvidenceCache, namespace: str):
        self.backend = backend
        self.cache = cache
        self.namespace = namespace
        self.identity = backend.identity

    def rerank(self, query: str, documents: Sequence[str]) -> list[float]:
        key = self.cache.make_key(backend=self.identity, config=self.namespace, op="rerank",
                                  input={"query": query, "documents": list(documents)})
        payload = self.cache.get(key)
        if payload is None:
            scores = self.backend.rerank(query, documents)
            payload = self.cache.put(key, jsonio.dumps({"scores": [float(s) for s in scores]}).encode(),
                                     backend=self.identity, op="rerank")
        return [float(s) for s in _parse(payload, "scores")]

    def relevance(self, query: str, document: str) -> float:
        return self.rerank(query, [document])[0]
