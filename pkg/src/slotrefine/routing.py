"""Validation-set Youden threshold and confident/uncertain partition.

A sample is predicted fake iff ``score > tau``. Candidate thresholds are
the midpoints between consecutive distinct validation scores plus one
value below the minimum and one above the maximum. Among Youden
maximizers the smallest threshold wins, which sends more samples on to
re-examination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import jsonio
from .core import Label, SampleRecord
from .errors import DataError, MissingLabelError, SingleClassError


@dataclass(frozen=True)
class RoutingThreshold:
    tau: float
    youden_j: float
    n_val: int
    candidate_count: int


@dataclass(frozen=True)
class Partition:
    confident: tuple[str, ...]
    uncertain: tuple[str, ...]
    threshold: RoutingThreshold
    routing_enabled: bool = True

    def subset_ids(self, subset: str) -> tuple[str, ...]:
        if subset == "confident":
            return self.confident
        if subset == "uncertain":
            return self.uncertain
        raise ValueError(f"unknown subset {subset!r}")

    def to_dict(self) -> dict:
        t = self.threshold
        return {
            "tau": t.tau,
            "youden_j": t.youden_j,
            "n_val": t.n_val,
            "candidate_count": t.candidate_count,
            "routing_enabled": self.routing_enabled,
            "confident": list(self.confident),
            "uncertain": list(self.uncertain),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        try:
            thr = RoutingThreshold(float(d["tau"]), float(d["youden_j"]), int(d["n_val"]),
                                   int(d["candidate_count"]))
            return cls(tuple(d["confident"]), tuple(d["uncertain"]), thr,
                       bool(d.get("routing_enabled", True)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed partition document: {exc}") from None


def _midpoint(a: float, b: float) -> float:
    mid = a / 2.0 + b / 2.0
    # adjacent floats: keep a <= mid < b so the split stays well defined
    if not (a <= mid < b):
        mid = a
    return mid


def _below(x: float) -> float:
    step = max(1.0, abs(x))
    low = x - step
    return low if low < x else math.nextafter(x, -math.inf)


def _above(x: float) -> float:
    step = max(1.0, abs(x))
    high = x + step
    return high if high > x else math.nextafter(x, math.inf)


def candidate_thresholds(scores: Sequence[float]) -> list[float]:
    """Gap midpoints of the distinct sorted scores, bracketed on both sides."""
    distinct = sorted(set(float(s) for s in scores))
    if not distinct:
        return []
    cands = [_below(distinct[0])]
    cands += [_midpoint(a, b) for a, b in zip(distinct[:-1], distinct[1:])]
    cands.append(_above(distinct[-1]))
    return cands


def _labeled_arrays(val_records: Sequence[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
    missing = [r.sample_id for r in val_records if r.label is None]
    if missing:
        raise MissingLabelError(
            f"{len(missing)} validation record(s) lack labels, e.g. {missing[:3]}")
    scores = np.array([r.base_score for r in val_records], dtype=np.float64)
    labels = np.array([int(r.label) for r in val_records], dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise DataError("validation scores must be finite")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        which = "real" if n_pos == 0 else "fake"
        raise SingleClassError(f"validation set is single-class (all {which}); need both labels")
    return scores, labels


def estimate_youden_threshold(val_records: Sequence[SampleRecord]) -> RoutingThreshold:
    scores, labels = _labeled_arrays(val_records)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos

    distinct, inverse = np.unique(scores, return_inverse=True)
    pos_per = np.bincount(inverse, weights=labels, minlength=len(distinct)).astype(np.int64)
    neg_per = np.bincount(inverse, minlength=len(distinct)).astype(np.int64) - pos_per
    # gap k sits just below distinct[k]; predicted fake = every group at or after k.
    # gap 0 is below the minimum, gap len(distinct) is above the maximum.
    tp = np.concatenate([np.cumsum(pos_per[::-1])[::-1], [0]])
    fp = np.concatenate([np.cumsum(neg_per[::-1])[::-1], [0]])
    # exact integer Youden numerator: (tp/P - fp/N) * P * N
    numer = tp * n_neg - fp * n_pos
    best = int(np.argmax(numer))  # first maximizer = smallest tau

    cands = candidate_thresholds(distinct.tolist())
    return RoutingThreshold(
        tau=cands[best],
        youden_j=float(tp[best]) / n_pos - float(fp[best]) / n_neg,
        n_val=len(labels),
        candidate_count=len(cands),
    )


# criterion hook: callable(val_records) -> RoutingThreshold
ThresholdCriterion = Callable[[Sequence[SampleRecord]], RoutingThreshold]


def partition(test_records: Sequence[SampleRecord], threshold: RoutingThreshold,
              *, routing_enabled: bool = True) -> Partition:
    """Split test samples into ``s <= tau`` (confident) and ``s > tau`` (uncertain).

    With routing disabled every sample is uncertain.
    """
    tau = threshold.tau
    if not math.isfinite(tau):
        raise DataError(f"routing threshold must be finite, got {tau!r}")
    if not routing_enabled:
        return Partition((), tuple(r.sample_id for r in test_records), threshold, False)
    confident = tuple(r.sample_id for r in test_records if r.base_score <= tau)
    uncertain = tuple(r.sample_id for r in test_records if r.base_score > tau)
    return Partition(confident, uncertain, threshold, True)


def route(val_records: Sequence[SampleRecord], test_records: Sequence[SampleRecord], *,
          use_routing: bool = True,
          criterion: ThresholdCriterion = estimate_youden_threshold) -> Partition:
    return partition(test_records, criterion(val_records), routing_enabled=use_routing)


def save_partition(part: Partition, path, **extra) -> None:
    doc = part.to_dict()
    doc.update(extra)
    jsonio.write_json(path, doc)


def load_partition(path) -> Partition:
    return Partition.from_dict(jsonio.read_json(path))


def youden_at(scores: Sequence[float], labels: Sequence[int], tau: float) -> float:
    """TPR - FPR when predicting fake for ``score > tau``."""
    pos = [s for s, y in zip(scores, labels) if int(y) == Label.FAKE]
    neg = [s for s, y in zip(scores, labels) if int(y) == Label.REAL]
    return sum(s > tau for s in pos) / len(pos) - sum(s > tau for s in neg) / len(neg)
