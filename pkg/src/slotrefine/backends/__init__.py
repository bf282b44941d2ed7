"""Model backends: embedding, vision-language description, text reranking."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from ..errors import ConfigError, StorageError
from .base import EmbeddingBackend, RerankerBackend, VlmBackend
from .cache import CachedEmbedding, CachedReranker, CachedVlm, EvidenceCache
from .http import ChatVlm, HttpEmbedding, HttpReranker, HttpVlm, token_from_env
from .mock import MockEmbedding, MockReranker, MockVlm, jaccard, mock_embed

ENV_URLS = {
    "embedding": "SLOTREFINE_EMBED_URL",
    "vlm": "SLOTREFINE_VLM_URL",
    "reranker": "SLOTREFINE_RERANK_URL",
}

__all__ = [
    "Backends", "build_backends", "EvidenceCache", "MockEmbedding", "MockVlm", "MockReranker",
    "HttpEmbedding", "HttpVlm", "ChatVlm", "HttpReranker", "EmbeddingBackend", "VlmBackend",
    "RerankerBackend", "jaccard", "mock_embed",
]


@dataclass
class Backends:
    embedding: EmbeddingBackend
    vlm: VlmBackend
    reranker: RerankerBackend

    def identities(self) -> dict[str, str]:
        return {"embedding": self.embedding.identity, "vlm": self.vlm.identity,
                "reranker": self.reranker.identity}

    def with_cache(self, cache: EvidenceCache | None, namespace: str) -> "Backends":
        if cache is None:
            return self
        return Backends(CachedEmbedding(self.embedding, cache, namespace),
                        CachedVlm(self.vlm, cache, namespace),
                        CachedReranker(self.reranker, cache, namespace))


def load_oracle_table(path: str) -> dict[str, int]:
    try:
        with open(path, encoding="utf-8") as fh:
            table = json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read oracle table {path}: {exc}") from exc
    if not isinstance(table, dict) or not all(v in (0, 1) for v in table.values()):
        raise ConfigError(f"oracle table {path} must map sample ids to 0/1")
    return {str(k): int(v) for k, v in table.items()}


def build_backends(config) -> Backends:
    """Instantiate the three backends named in ``config.backends``."""
    bc = config.backends
    common = dict(timeout=bc.timeout_s, max_retries=bc.max_retries, backoff=bc.backoff_s,
                  max_in_flight=bc.max_in_flight, max_image_bytes=bc.max_image_bytes)

    def url_for(role: str, cfg) -> str:
        url = cfg.url or os.environ.get(ENV_URLS[role])
        if not url:
            raise ConfigError(f"{role} backend is '{cfg.kind}' but no url is configured "
                              f"(set backends.{role}.url or ${ENV_URLS[role]})")
        return url

    e = bc.embedding
    if e.kind == "mock":
        embedding = MockEmbedding(e.dimension, e.seed)
    else:
        embedding = HttpEmbedding(url_for("embedding", e), dimension=e.dimension, model=e.model,
                                  token=token_from_env(e.token_env), **common)

    v = bc.vlm
    if v.kind == "mock":
        oracle = load_oracle_table(v.oracle_table) if v.oracle_table else None
        vlm = MockVlm(v.seed, oracle, config.anchors_fake, config.anchors_real)
    else:
        cls = HttpVlm if v.kind == "http" else ChatVlm
        vlm = cls(url_for("vlm", v), max_tokens=v.max_tokens, model=v.model,
                  token=token_from_env(v.token_env), **common)

    r = bc.reranker
    if r.kind == "mock":
        reranker = MockReranker()
    else:
        reranker = HttpReranker(url_for("reranker", r), model=r.model,
                                token=token_from_env(r.token_env), **common)
    return Backends(embedding, vlm, reranker)
