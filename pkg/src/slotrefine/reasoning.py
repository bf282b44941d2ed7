"""Turn evidence strips into a rank score.

The vision-language backend describes the strips; the description is split
into evidence lines; each line is scored against fake and real anchor
texts with the reranker, and the rank score is the mean per-line margin.
When no valid line survives parsing, the mean patch suspiciousness of the
selected locations stands in.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

from .backends.mock import _TOKEN
from .errors import DataError

_LEADER = re.compile(r"^(?:\s*(?:[-*+>•·‣▪]|\(?\d{1,3}[.):\]]|\(?[a-z]\)|#{1,6})\s*)+", re.IGNORECASE)
_WORD = re.compile(r"\w+")
MIN_WORDS = 3


@dataclass(frozen=True)
class EvidenceDescription:
    sample_id: str
    raw_text: str
    lines: tuple[str, ...]
    fallback_used: bool

    @property
    def N(self) -> int:
        return len(self.lines)


@dataclass(frozen=True)
class LineTrace:
    line: str
    best_fake_anchor: str
    best_fake_h: float
    best_real_anchor: str
    best_real_h: float
    margin: float

    def to_dict(self) -> dict:
        return {"line": self.line, "best_fake_anchor": self.best_fake_anchor,
                "best_fake_h": self.best_fake_h, "best_real_anchor": self.best_real_anchor,
                "best_real_h": self.best_real_h, "margin": self.margin}


@dataclass(frozen=True)
class RankedEvidence:
    sample_id: str
    margins: tuple[float, ...]
    rank_score: float | None
    fallback_used: bool
    raw_text: str = ""
    lines: tuple[str, ...] = ()
    trace: tuple[LineTrace, ...] = ()
    mode: str = "reranker"  # reranker | keyword | clip_only | failed
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.mode == "failed"

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "mode": self.mode,
            "rank_score": self.rank_score,
            "fallback_used": self.fallback_used,
            "raw_text": self.raw_text,
            "lines": list(self.lines),
            "margins": list(self.margins),
            "trace": [t.to_dict() for t in self.trace],
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RankedEvidence":
        return cls(
            sample_id=d["sample_id"],
            margins=tuple(d["margins"]),
            rank_score=d["rank_score"],
            fallback_used=d["fallback_used"],
            raw_text=d.get("raw_text", ""),
            lines=tuple(d.get("lines", ())),
            trace=tuple(LineTrace(**t) for t in d.get("trace", ())),
            mode=d.get("mode", "reranker"),
            error=d.get("error"),
        )


def compile_patterns(patterns: Sequence[str]) -> list[re.Pattern]:
    try:
        return [re.compile(p, re.IGNORECASE) for p in patterns]
    except re.error as exc:
        raise DataError(f"invalid boilerplate pattern: {exc}") from None


def parse_lines(raw_text: str, boilerplate: Sequence[str | re.Pattern] = ()) -> list[str]:
    """Split a description into evidence lines, dropping bullets, short lines and boilerplate."""
    pats = [p if isinstance(p, re.Pattern) else re.compile(p, re.IGNORECASE) for p in boilerplate]
    out = []
    for line in raw_text.splitlines():
        line = " ".join(_LEADER.sub("", line).split())
        if len(_WORD.findall(line)) < MIN_WORDS:
            continue
        if any(p.search(line) for p in pats):
            continue
        out.append(line)
    return out


def describe_evidence(bundle, prompt: str, vlm, boilerplate: Sequence[str] = ()) -> EvidenceDescription:
    if not bundle.strips:
        raise DataError(f"{bundle.sample_id}: evidence bundle has no strips")
    if not prompt.strip():
        raise DataError("instruction prompt is empty")
    raw = vlm.describe(list(bundle.strips), prompt, sample_id=bundle.sample_id)
    lines = parse_lines(raw or "", compile_patterns(boilerplate))
    return EvidenceDescription(bundle.sample_id, raw or "", tuple(lines), not lines)


def score_line(line: str, anchors_fake: Sequence[str], anchors_real: Sequence[str], reranker) -> LineTrace:
    if not anchors_fake or not anchors_real:
        raise DataError("anchor lists must be nonempty")
    h = reranker.rerank(line, list(anchors_fake) + list(anchors_real))
    hf, hr = h[: len(anchors_fake)], h[len(anchors_fake):]
    i = max(range(len(hf)), key=lambda k: (hf[k], -k))
    j = max(range(len(hr)), key=lambda k: (hr[k], -k))
    return LineTrace(line, anchors_fake[i], hf[i], anchors_real[j], hr[j], hf[i] - hr[j])


def line_margin(line: str, anchors_fake: Sequence[str], anchors_real: Sequence[str], reranker) -> float:
    """Best fake-anchor relevance minus best real-anchor relevance."""
    return score_line(line, anchors_fake, anchors_real, reranker).margin


def _token_list(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def keyword_margin(line: str, anchors_fake: Sequence[str], anchors_real: Sequence[str]) -> float:
    """Fake-keyword hits minus real-keyword hits; keywords are the anchors' tokens."""
    if not anchors_fake or not anchors_real:
        raise DataError("anchor lists must be nonempty")
    fake_kw = {t for a in anchors_fake for t in _token_list(a)}
    real_kw = {t for a in anchors_real for t in _token_list(a)}
    toks = _token_list(line)
    return float(sum(t in fake_kw for t in toks) - sum(t in real_kw for t in toks))


def rank_score(description: EvidenceDescription, margins: Sequence[float], fallback_value: float,
               trace: Sequence[LineTrace] = (), mode: str = "reranker") -> RankedEvidence:
    if len(margins) != description.N:
        raise DataError(f"{description.sample_id}: {len(margins)} margins for {description.N} lines")
    if description.N:
        r = math.fsum(margins) / len(margins)
        fallback = False
    else:
        r = float(fallback_value)
        fallback = True
    return RankedEvidence(description.sample_id, tuple(margins), r, fallback, description.raw_text,
                          description.lines, tuple(trace), mode)


def reason_sample(bundle, config, vlm, reranker) -> RankedEvidence:
    """Rank score for one evidence bundle under the configured ablation switches."""
    ab = config.ablation
    fallback = bundle.fallback_value
    if not ab.use_vlm:
        return RankedEvidence(bundle.sample_id, (), fallback, True, mode="clip_only")
    desc = describe_evidence(bundle, config.instruction_prompt, vlm, config.boilerplate_patterns)
    if ab.use_reranker:
        trace = [score_line(l, config.anchors_fake, config.anchors_real, reranker) for l in desc.lines]
        return rank_score(desc, [t.margin for t in trace], fallback, trace, "reranker")
    margins = [keyword_margin(l, config.anchors_fake, config.anchors_real) for l in desc.lines]
    return rank_score(desc, margins, fallback, mode="keyword")


def failed_evidence(sample_id: str, error: str) -> RankedEvidence:
    return RankedEvidence(sample_id, (), None, False, mode="failed", error=error)
