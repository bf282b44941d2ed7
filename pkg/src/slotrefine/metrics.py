"""AUC / AP, subset reports and rank displacement. Fake (label 1) is the positive class."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ScoreManifest
from .errors import DataError, MissingLabelError, SingleClassError

SUBSETS = ("full", "uncertain", "confident")


def _arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError("scores and labels must be 1-D and equal length")
    if not np.all(np.isin(y, (0, 1))):
        raise DataError("labels must be 0 (real) or 1 (fake)")
    return s, y


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: share of (fake, real) pairs ordered correctly, ties count half."""
    s, y = _arrays(scores, labels)
    pos, neg = s[y == 1], s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassError("AUC needs both real and fake samples")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    upto = np.searchsorted(neg_sorted, pos, side="right")
    # twice the Mann-Whitney U, in integers
    u2 = int(np.sum(below + upto))
    return u2 / (2 * len(pos) * len(neg))


def ap(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mean precision at each fake's rank; equal scores keep their input order."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("AP needs at least one fake sample")
    order = np.argsort(-s, kind="stable")
    hits = np.cumsum(y[order])
    ranks = np.arange(1, len(s) + 1)
    precisions = hits[y[order] == 1] / ranks[y[order] == 1]
    return float(np.sum(precisions) / n_pos)


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) at every distinct score, predicting fake for score >= threshold."""
    s, y = _arrays(scores, labels)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC needs both classes")
    pts = [(float("inf"), 0.0, 0.0)]
    for t in np.unique(s)[::-1]:
        pred = s >= t
        pts.append((float(t), float(np.sum(pred & (y == 0)) / n_neg), float(np.sum(pred & (y == 1)) / n_pos)))
    return pts


def pr_points(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, recall, precision) at every distinct score."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("PR curve needs at least one fake sample")
    pts = []
    for t in np.unique(s)[::-1]:
        pred = s >= t
        tp = int(np.sum(pred & (y == 1)))
        pts.append((float(t), tp / n_pos, tp / int(np.sum(pred))))
    return pts


@dataclass(frozen=True)
class MetricsReport:
    ap: float
    auc: float
    n_real: int
    n_fake: int
    subset: str

    def to_dict(self) -> dict:
        return asdict(self)


def labeled_scores(manifest: ScoreManifest, ids: Sequence[str],
                   labels: Mapping[str, int] | None) -> tuple[list[float], list[int]]:
    scores, ys = [], []
    missing = []
    for sid in ids:
        rec = manifest.get(sid)
        y = labels.get(sid) if labels is not None else rec.label
        if y is None:
            missing.append(sid)
            continue
        scores.append(rec.base_score)
        ys.append(int(y))
    if missing:
        raise MissingLabelError(f"cannot evaluate unlabeled samples, e.g. {missing[:3]} "
                                f"({len(missing)} missing)")
    return scores, ys


def subset_ids(manifest: ScoreManifest, partition, subset: str) -> list[str]:
    if subset == "full":
        return manifest.ids
    if partition is None:
        raise DataError(f"subset {subset!r} needs a partition")
    return list(partition.subset_ids(subset))


def subset_report(manifest: ScoreManifest, partition, subset: str = "full",
                  labels: Mapping[str, int] | None = None) -> MetricsReport:
    """Metrics over one subset of ``manifest`` (its ``base_score`` field is what gets evaluated)."""
    if subset not in SUBSETS:
        raise DataError(f"unknown subset {subset!r}")
    scores, ys = labeled_scores(manifest, subset_ids(manifest, partition, subset), labels)
    n_fake = sum(ys)
    n_real = len(ys) - n_fake
    if n_fake == 0 or n_real == 0:
        raise SingleClassError(f"{subset} subset is single-class ({n_real} real, {n_fake} fake)")
    return MetricsReport(ap(scores, ys), auc(scores, ys), n_real, n_fake, subset)


@dataclass(frozen=True)
class DisplacementRecord:
    sample_id: str
    label: int | None
    rank_before: int
    rank_after: int

    @property
    def displacement(self) -> int:
        return self.rank_after - self.rank_before

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "label": self.label, "rank_before": self.rank_before,
                "rank_after": self.rank_after, "displacement": self.displacement}


def _ranks(manifest: ScoreManifest, ids: Sequence[str]) -> dict[str, int]:
    pos = {s: i for i, s in enumerate(ids)}
    order = sorted(ids, key=lambda s: (-manifest.get(s).base_score, pos[s]))
    return {s: k + 1 for k, s in enumerate(order)}


def rank_displacement(before: ScoreManifest, after: ScoreManifest, partition) -> list[DisplacementRecord]:
    """Rank change within the uncertain subset; negative = moved toward more suspicious."""
    ids = list(partition.uncertain)
    missing = [s for s in ids if s not in before or s not in after]
    if missing:
        raise DataError(f"uncertain ids missing from a manifest, e.g. {missing[:3]}")
    rb, ra = _ranks(before, ids), _ranks(after, ids)
    out = []
    for s in ids:
        lab = before.get(s).label
        out.append(DisplacementRecord(s, None if lab is None else int(lab), rb[s], ra[s]))
    return out


def format_table(rows: Sequence[tuple[str, MetricsReport | None]], title: str = "") -> str:
    """Plain-text AP/AUC table (percent, one decimal)."""
    lines = [title] if title else []
    lines.append(f"{'method':<28}{'subset':<11}{'AP':>8}{'AUC':>8}{'#real':>7}{'#fake':>7}")
    for name, rep in rows:
        if rep is None:
            lines.append(f"{name:<28}{'-':<11}{'n/a':>8}{'n/a':>8}")
            continue
        lines.append(f"{name:<28}{rep.subset:<11}{100 * rep.ap:>8.1f}{100 * rep.auc:>8.1f}"
                     f"{rep.n_real:>7d}{rep.n_fake:>7d}")
    return "\n".join(lines)


def format_delta(before: MetricsReport, after: MetricsReport) -> str:
    """``AP 72.2 -> 89.3 (+17.1) | AUC 31.6 -> 67.1 (+35.5)`` style gain annotation."""
    def one(name, a, b):
        return f"{name} {100 * a:.1f} -> {100 * b:.1f} ({100 * (b - a):+.1f})"
    return f"[{after.subset}] " + one("AP", before.ap, after.ap) + " | " + one("AUC", before.auc, after.auc)
