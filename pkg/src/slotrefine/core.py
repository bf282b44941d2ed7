"""Domain types and score-manifest I/O.

A score manifest is a line-delimited JSON file with one record per line::

    {"sample_id": "v001", "split": "test", "label": 1, "media_path": "v001.npy", "base_score": 0.73}

``label`` is 1 for fake, 0 for real, or null. Scores are arbitrary finite
reals; larger means more likely fake.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from . import jsonio
from .errors import (
    DuplicateIdError,
    ManifestError,
    ManifestParseError,
    NonFiniteScoreError,
    StorageError,
)

MANIFEST_KEYS = ("sample_id", "split", "label", "media_path", "base_score")


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class Label(enum.IntEnum):
    REAL = 0
    FAKE = 1


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    split: Split
    label: Label | None
    media_path: str | None
    base_score: float

    def __post_init__(self):
        if not isinstance(self.sample_id, str) or not self.sample_id:
            raise ValueError("sample_id must be a nonempty string")
        object.__setattr__(self, "split", Split(self.split))
        if self.label is not None:
            object.__setattr__(self, "label", Label(self.label))
        score = float(self.base_score)
        if not math.isfinite(score):
            raise ValueError(f"non-finite base_score for {self.sample_id!r}: {self.base_score!r}")
        object.__setattr__(self, "base_score", score)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "split": self.split.value,
            "label": None if self.label is None else int(self.label),
            "media_path": self.media_path,
            "base_score": self.base_score,
        }


@dataclass(frozen=True)
class ScoreManifest:
    records: tuple[SampleRecord, ...] = ()
    source: str = field(default="unknown", compare=False)  # not part of the line format
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        index: dict[str, int] = {}
        for i, rec in enumerate(records):
            if rec.sample_id in index:
                raise DuplicateIdError(f"duplicate sample_id {rec.sample_id!r}")
            index[rec.sample_id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.records)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    def get(self, sample_id: str) -> SampleRecord:
        return self.records[self._index[sample_id]]

    @property
    def ids(self) -> list[str]:
        return [r.sample_id for r in self.records]

    def by_split(self, split: Split | str) -> "ScoreManifest":
        split = Split(split)
        return ScoreManifest(tuple(r for r in self.records if r.split == split), self.source)

    def subset(self, sample_ids: Sequence[str]) -> "ScoreManifest":
        return ScoreManifest(tuple(self.get(s) for s in sample_ids), self.source)


@dataclass(frozen=True)
class ManifestIssue:
    line: int
    kind: str  # "parse" | "duplicate" | "non_finite"
    message: str


_ISSUE_ERRORS = {
    "parse": ManifestParseError,
    "duplicate": DuplicateIdError,
    "non_finite": NonFiniteScoreError,
}


def _parse_line(text: str, lineno: int) -> SampleRecord:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _LineIssue("parse", f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise _LineIssue("parse", f"line {lineno}: expected an object")
    missing = [k for k in ("sample_id", "split", "base_score") if k not in obj]
    if missing:
        raise _LineIssue("parse", f"line {lineno}: missing keys {missing}")
    score = obj["base_score"]
    if isinstance(score, str):
        # tolerate textual scores but flag non-finite ones explicitly
        try:
            score = float(score)
        except ValueError:
            raise _LineIssue("parse", f"line {lineno}: base_score is not a number") from None
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise _LineIssue("parse", f"line {lineno}: base_score is not a number")
    if not math.isfinite(score):
        raise _LineIssue("non_finite", f"line {lineno}: non-finite base_score {obj['base_score']!r}")
    label = obj.get("label")
    if label is not None and (isinstance(label, bool) or label not in (0, 1)):
        raise _LineIssue("parse", f"line {lineno}: label must be 0, 1 or null")
    media = obj.get("media_path")
    if media is not None and not isinstance(media, str):
        raise _LineIssue("parse", f"line {lineno}: media_path must be a string or null")
    try:
        return SampleRecord(obj["sample_id"], obj["split"], label, media, score)
    except ValueError as exc:
        raise _LineIssue("parse", f"line {lineno}: {exc}") from None


class _LineIssue(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind
        self.message = message


def read_manifest(path: str | os.PathLike, source: str | None = None) -> tuple[ScoreManifest, list[ManifestIssue]]:
    """Parse a manifest without raising on bad lines.

    Returns the valid records plus one issue per rejected line, so that
    ``nonblank lines == len(records) + len(issues)`` always holds.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise StorageError(f"manifest not found: {path}") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise StorageError(f"cannot read manifest {path}: {exc}") from exc

    records: list[SampleRecord] = []
    issues: list[ManifestIssue] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = _parse_line(line, lineno)
        except _LineIssue as issue:
            issues.append(ManifestIssue(lineno, issue.kind, issue.message))
            continue
        if rec.sample_id in seen:
            issues.append(ManifestIssue(lineno, "duplicate", f"line {lineno}: duplicate sample_id {rec.sample_id!r}"))
            continue
        seen.add(rec.sample_id)
        records.append(rec)
    return ScoreManifest(tuple(records), source or path.stem), issues


def load_manifest(path: str | os.PathLike, source: str | None = None) -> ScoreManifest:
    manifest, issues = read_manifest(path, source)
    if issues:
        first = issues[0]
        summary = "; ".join(i.message for i in issues[:5])
        more = f" (+{len(issues) - 5} more)" if len(issues) > 5 else ""
        raise _ISSUE_ERRORS.get(first.kind, ManifestError)(
            f"{path}: {len(issues)} invalid line(s): {summary}{more}", issues
        )
    return manifest


def manifest_line(rec: SampleRecord, **extra) -> str:
    obj = rec.to_dict()
    obj.update(extra)
    return jsonio.dumps(obj)


def save_manifest(manifest: ScoreManifest, path: str | os.PathLike) -> None:
    lines = [manifest_line(r) + "\n" for r in manifest.records]
    jsonio.atomic_write_text(path, "".join(lines))
