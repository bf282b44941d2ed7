"""Slot-preserving reordering of the uncertain subset.

The uncertain samples' own base scores, sorted descending, form a fixed set
of slots. Samples are re-sorted by rank score and take the slots in that
order, so the score multiset never changes; confident samples are copied
through untouched.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import jsonio
from .core import SampleRecord, ScoreManifest, manifest_line
from .errors import DataError, InternalError


@dataclass(frozen=True)
class SlotSet:
    slots: tuple[float, ...]
    origin: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.slots)


def build_slots(uncertain_records: Sequence[SampleRecord]) -> SlotSet:
    ordered = sorted(uncertain_records, key=lambda r: (-r.base_score, r.sample_id))
    return SlotSet(tuple(r.base_score for r in ordered), tuple(r.sample_id for r in ordered))


@dataclass(frozen=True)
class UncertainEntry:
    sample_id: str
    base_score: float
    rank_score: float | None  # None pins the sample to its own score


def reassign_slots(uncertain: Sequence[UncertainEntry | tuple], slots: SlotSet) -> dict[str, float]:
    """Map each uncertain sample to a slot by descending rank score.

    Ties in rank score fall back to base score (descending), then sample id.
    Entries without a rank score keep their own base score, and that value
    is withdrawn from the slot pool.
    """
    entries = [e if isinstance(e, UncertainEntry) else UncertainEntry(*e) for e in uncertain]
    pool = Counter(slots.slots)
    final: dict[str, float] = {}
    for e in entries:
        if e.rank_score is None:
            if pool[e.base_score] <= 0:
                raise DataError(f"pinned score of {e.sample_id!r} is not among the slots")
            pool[e.base_score] -= 1
            final[e.sample_id] = e.base_score
    free = sorted((v for v, n in pool.items() for _ in range(n)), reverse=True)
    ranked = sorted((e for e in entries if e.rank_score is not None),
                    key=lambda e: (-e.rank_score, -e.base_score, e.sample_id))
    if len(free) != len(ranked):
        raise DataError(f"slot/sample count mismatch: {len(free)} slots for {len(ranked)} samples")
    for value, e in zip(free, ranked):
        final[e.sample_id] = value
    return final


def assign_raw(uncertain: Sequence[UncertainEntry]) -> dict[str, float]:
    """Slot-free variant: uncertain samples take their rank score as the final score."""
    return {e.sample_id: e.base_score if e.rank_score is None else float(e.rank_score) for e in uncertain}


@dataclass(frozen=True)
class RefinedRecord:
    record: SampleRecord
    final_score: float
    subset: str  # "confident" | "uncertain"
    slot_index: int | None = None
    rank_score: float | None = None
    flags: tuple[str, ...] = ()

    def to_line(self, provenance_hash: str | None = None) -> str:
        rec = SampleRecord(self.record.sample_id, self.record.split, self.record.label,
                           self.record.media_path, self.final_score)
        extra = {"original_score": self.record.base_score, "subset": self.subset,
                 "slot_index": self.slot_index, "rank_score": self.rank_score,
                 "flags": list(self.flags)}
        if provenance_hash is not None:
            extra["provenance"] = provenance_hash
        return manifest_line(rec, **extra)


@dataclass(frozen=True)
class RefinedManifest:
    records: tuple[RefinedRecord, ...]
    provenance: dict = field(default_factory=dict)

    def final_manifest(self) -> ScoreManifest:
        return ScoreManifest(tuple(
            SampleRecord(r.record.sample_id, r.record.split, r.record.label, r.record.media_path,
                         r.final_score) for r in self.records), "refined")

    def final_scores(self) -> dict[str, float]:
        return {r.record.sample_id: r.final_score for r in self.records}

    def to_text(self) -> str:
        ph = self.provenance.get("provenance_hash")
        return "".join(r.to_line(ph) + "\n" for r in self.records)

    def save(self, path) -> None:
        jsonio.atomic_write_text(path, self.to_text())


def merge(test_manifest: ScoreManifest, refined_uncertain: Mapping[str, float], partition,
          *, rank_scores: Mapping[str, float | None] | None = None,
          flags: Mapping[str, Sequence[str]] | None = None, use_slots: bool = True,
          provenance: dict | None = None) -> RefinedManifest:
    """Combine untouched confident scores with refined uncertain scores, in manifest order."""
    uncertain = set(partition.uncertain)
    confident = set(partition.confident)
    if set(refined_uncertain) != uncertain:
        raise DataError("refined scores must cover exactly the uncertain ids")
    if (uncertain | confident) != set(test_manifest.ids) or uncertain & confident:
        raise DataError("partition does not match the test manifest")
    rank_scores = rank_scores or {}
    flags = flags or {}

    slot_of: dict[str, int] = {}
    if use_slots:
        slots = build_slots([test_manifest.get(s) for s in partition.uncertain])
        # slot index = position of the assigned value in the descending slot list
        by_value: dict[float, list[int]] = {}
        for k, v in enumerate(slots.slots):
            by_value.setdefault(v, []).append(k)
        order = sorted(partition.uncertain,
                       key=lambda s: (-refined_uncertain[s], -test_manifest.get(s).base_score, s))
        for sid in order:
            slot_of[sid] = by_value[refined_uncertain[sid]].pop(0)

    out = []
    for rec in test_manifest:
        sid = rec.sample_id
        if sid in confident:
            out.append(RefinedRecord(rec, rec.base_score, "confident", flags=tuple(flags.get(sid, ()))))
        else:
            out.append(RefinedRecord(rec, refined_uncertain[sid], "uncertain", slot_of.get(sid),
                                     rank_scores.get(sid), tuple(flags.get(sid, ()))))
    refined = RefinedManifest(tuple(out), dict(provenance or {}))
    if use_slots:
        _check_conservation(test_manifest, refined)
    return refined


def _check_conservation(before: ScoreManifest, after: RefinedManifest) -> None:
    a = sorted(r.base_score for r in before)
    b = sorted(r.final_score for r in after.records)
    if a != b:
        raise InternalError("score multiset changed during refinement")
    for r in after.records:
        if r.subset == "confident" and r.final_score != r.record.base_score:
            raise InternalError(f"confident score of {r.record.sample_id!r} changed")


def refine_uncertain(test_manifest: ScoreManifest, partition, ranked: Mapping[str, float | None],
                     *, use_slots: bool = True) -> dict[str, float]:
    entries = [UncertainEntry(s, test_manifest.get(s).base_score, ranked.get(s)) for s in partition.uncertain]
    if not use_slots:
        return assign_raw(entries)
    return reassign_slots(entries, build_slots([test_manifest.get(s) for s in partition.uncertain]))
