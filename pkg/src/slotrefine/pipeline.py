"""File-based pipeline stages: route -> mine -> reason -> refine -> eval.

Every stage reads its inputs from and writes its outputs to the run
directory, so a run can be resumed or executed stage by stage::

    <out>/partition.json
    <out>/evidence/<sample>/strip_NN.png + evidence.json
    <out>/reasoning/<sample>.json
    <out>/refined.jsonl
    <out>/provenance.json
    <out>/reports/{metrics.json, metrics.txt, displacement.tsv, roc_*.tsv, pr_*.tsv}
    <out>/run_log.json        (wall-clock timings; the only non-deterministic file)
"""

from __future__ import annotations

import functools
import hashlib
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Mapping

from . import __version__, jsonio
from .backends import Backends, EvidenceCache, build_backends
from .config import PipelineConfig
from .core import ScoreManifest, load_manifest
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    InternalError,
    SingleClassError,
    SlotRefineError,
)
from .evidence import EvidenceBundle, load_bundle, mine_sample, save_bundle
from .metrics import (
    SUBSETS,
    MetricsReport,
    format_delta,
    format_table,
    labeled_scores,
    pr_points,
    rank_displacement,
    roc_points,
    subset_ids,
    subset_report,
)
from .reasoning import RankedEvidence, failed_evidence, reason_sample
from .refine import RefinedManifest, merge, refine_uncertain
from .routing import Partition, estimate_youden_threshold, load_partition, partition, save_partition

log = logging.getLogger(__name__)

PARTITION = "partition.json"
REFINED = "refined.jsonl"
PROVENANCE = "provenance.json"
RUN_LOG = "run_log.json"

_SAFE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]{0,99}")


def safe_name(sample_id: str) -> str:
    if _SAFE.fullmatch(sample_id):
        return sample_id
    return "id-" + hashlib.sha256(sample_id.encode("utf-8")).hexdigest()[:20]


def manifest_digest(manifest: ScoreManifest) -> str:
    return jsonio.digest_obj([r.to_dict() for r in manifest])


def staged(name: str):
    """Tag any error escaping a stage with the stage name."""
    def deco(fn: Callable):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except SlotRefineError as exc:
                if exc.stage is None:
                    exc.stage = name
                raise
            except Exception as exc:  # noqa: BLE001 - reclassify unexpected failures
                raise InternalError(f"{type(exc).__name__}: {exc}", stage=name) from exc
        return wrapper
    return deco


# -- provenance ----------------------------------------------------------------


def provenance_core(config: PipelineConfig, identities: Mapping[str, str],
                    val: ScoreManifest, test: ScoreManifest) -> dict:
    core = {
        "tool": f"slotrefine {__version__}",
        "config_hash": config.config_hash(),
        "backends": dict(identities),
        "ablation": config.ablation.model_dump(),
        "val_manifest": manifest_digest(val),
        "test_manifest": manifest_digest(test),
    }
    core["provenance_hash"] = jsonio.digest_obj(core)
    # the hash already covers these values through config_hash
    core["config"] = config.resolved()
    return core


def _read_partition_doc(out: Path) -> dict:
    return jsonio.read_json(out / PARTITION)


def _check_provenance(config: PipelineConfig, doc: dict) -> dict:
    prov = doc.get("provenance")
    if not prov:
        raise DataError("partition file carries no provenance; rerun the route stage")
    if prov["config_hash"] != config.config_hash():
        raise ConfigError("config differs from the one used to route this run "
                          f"({config.config_hash()[:12]} vs {prov['config_hash'][:12]})")
    return prov


# -- stages --------------------------------------------------------------------


@staged("route")
def stage_route(config: PipelineConfig, val: ScoreManifest, test: ScoreManifest, out: str | Path,
                identities: Mapping[str, str] | None = None) -> Partition:
    out = Path(out)
    if identities is None:
        identities = build_backends(config).identities()
    threshold = estimate_youden_threshold(list(val))
    part = partition(list(test), threshold, routing_enabled=config.ablation.use_routing)
    prov = provenance_core(config, identities, val, test)
    save_partition(part, out / PARTITION, provenance=prov)
    return part


def resolve_media(rec, media_root: Path | None) -> Path:
    if not rec.media_path:
        raise DataError(f"{rec.sample_id}: uncertain sample has no media_path")
    p = Path(rec.media_path)
    if not p.is_absolute() and media_root is not None:
        p = media_root / p
    return p


def _pool_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@staged("mine")
def stage_mine(config: PipelineConfig, test: ScoreManifest, media_root: str | Path | None,
               out: str | Path, backends: Backends) -> list[EvidenceBundle]:
    out = Path(out)
    doc = _read_partition_doc(out)
    prov = _check_provenance(config, doc)
    part = Partition.from_dict(doc)
    root = Path(media_root) if media_root is not None else None
    ids = list(part.uncertain)
    if not ids:
        return []
    emb = backends.embedding
    proto_real = emb.embed_text(config.prototypes_real)
    proto_fake = emb.embed_text(config.prototypes_fake)

    def work(sid: str) -> EvidenceBundle:
        rec = test.get(sid)
        bundle = mine_sample(sid, resolve_media(rec, root), config, emb, proto_real, proto_fake)
        save_bundle(bundle, out / "evidence" / safe_name(sid), provenance=prov["provenance_hash"])
        return bundle

    return _pool_map(work, ids, config.runtime.workers)


@staged("reason")
def stage_reason(config: PipelineConfig, out: str | Path, backends: Backends) -> list[RankedEvidence]:
    out = Path(out)
    doc = _read_partition_doc(out)
    prov = _check_provenance(config, doc)
    part = Partition.from_dict(doc)

    def work(sid: str) -> RankedEvidence:
        bundle = load_bundle(out / "evidence" / safe_name(sid))
        if bundle.sample_id != sid:
            raise DataError(f"evidence directory for {sid!r} holds {bundle.sample_id!r}")
        try:
            ranked = reason_sample(bundle, config, backends.vlm, backends.reranker)
        except BackendError as exc:
            log.warning("reasoning failed for %s: %s", sid, exc)
            ranked = failed_evidence(sid, f"{type(exc).__name__}: {exc}")
        jsonio.write_json(out / "reasoning" / f"{safe_name(sid)}.json",
                          {**ranked.to_dict(), "provenance": prov["provenance_hash"]})
        return ranked

    return _pool_map(work, list(part.uncertain), config.runtime.workers)


def sample_flags(r: RankedEvidence) -> list[str]:
    flags = []
    if r.failed:
        flags.append("reasoning_failed")
    if r.fallback_used and r.mode != "clip_only":
        flags.append("fallback")
    if r.mode in ("clip_only", "keyword"):
        flags.append(r.mode)
    return flags


@staged("refine")
def stage_refine(config: PipelineConfig, test: ScoreManifest, out: str | Path) -> RefinedManifest:
    out = Path(out)
    doc = _read_partition_doc(out)
    prov = _check_provenance(config, doc)
    part = Partition.from_dict(doc)
    ranked: dict[str, RankedEvidence] = {}
    for sid in part.uncertain:
        ranked[sid] = RankedEvidence.from_dict(
            jsonio.read_json(out / "reasoning" / f"{safe_name(sid)}.json"))
    rank_scores = {s: (None if r.failed else r.rank_score) for s, r in ranked.items()}
    flags = {s: sample_flags(r) for s, r in ranked.items()}
    use_slots = config.ablation.use_slots
    final = refine_uncertain(test, part, rank_scores, use_slots=use_slots)

    provenance = {
        **prov,
        "tau": part.threshold.tau,
        "youden_j": part.threshold.youden_j,
        "n_confident": len(part.confident),
        "n_uncertain": len(part.uncertain),
        "sample_flags": {s: f for s, f in flags.items() if f},
    }
    refined = merge(test, final, part, rank_scores=rank_scores, flags=flags,
                    use_slots=use_slots, provenance=provenance)
    refined.save(out / REFINED)
    jsonio.write_json(out / PROVENANCE, provenance)
    return refined


def _report_or_none(manifest, part, subset, labels, notes: list[str], tag: str) -> MetricsReport | None:
    if subset != "full" and not subset_ids(manifest, part, subset):
        notes.append(f"{tag}/{subset}: empty subset")
        return None
    try:
        return subset_report(manifest, part, subset, labels)
    except SingleClassError as exc:
        if subset == "full":
            raise
        notes.append(f"{tag}/{subset}: {exc}")
        return None


def _write_points(path: Path, header: str, rows) -> None:
    text = header + "\n" + "".join("\t".join(jsonio.format_float(v) if v != float("inf") else "inf"
                                             for v in row) + "\n" for row in rows)
    jsonio.atomic_write_text(path, text)


@staged("eval")
def stage_eval(before: ScoreManifest, after: ScoreManifest | None, part: Partition | None,
               out: str | Path, *, labels: Mapping[str, int] | None = None,
               subsets: tuple[str, ...] = SUBSETS, provenance_hash: str | None = None) -> dict:
    """Metrics for the base manifest and, if given, the refined one, plus deltas."""
    out = Path(out)
    reports_dir = out / "reports"
    notes: list[str] = []
    if part is not None and not part.uncertain:
        notes.append("uncertain subset is empty; refinement is the identity")
    result: dict = {"provenance": provenance_hash, "subsets": {}, "notes": notes}
    rows = []
    deltas = []
    for subset in subsets:
        if subset != "full" and part is None:
            continue
        b = _report_or_none(before, part, subset, labels, notes, "base")
        a = _report_or_none(after, part, subset, labels, notes, "refined") if after is not None else None
        entry = {"base": b.to_dict() if b else None}
        if after is not None:
            entry["refined"] = a.to_dict() if a else None
            if a and b:
                entry["delta"] = {"ap": a.ap - b.ap, "auc": a.auc - b.auc}
                deltas.append(format_delta(b, a))
        result["subsets"][subset] = entry
        rows.append(("base", b))
        if after is not None:
            rows.append(("refined", a))

    text = format_table(rows, "AP / AUC (%)")
    if deltas:
        text += "\n\n" + "\n".join(deltas)
    if notes:
        text += "\n\nnotes:\n" + "\n".join(f"  - {n}" for n in notes)
    jsonio.write_json(reports_dir / "metrics.json", result)
    jsonio.atomic_write_text(reports_dir / "metrics.txt", text + "\n")

    if after is not None and part is not None:
        disp = rank_displacement(before, after, part)
        result["displacement"] = [d.to_dict() for d in disp]
        lines = ["sample_id\tlabel\trank_before\trank_after\tdisplacement"]
        lines += [f"{d.sample_id}\t{'' if d.label is None else d.label}\t{d.rank_before}\t"
                  f"{d.rank_after}\t{d.displacement}" for d in disp]
        jsonio.atomic_write_text(reports_dir / "displacement.tsv", "\n".join(lines) + "\n")

    for tag, man in (("base", before), ("refined", after)):
        if man is None:
            continue
        try:
            scores, ys = labeled_scores(man, man.ids, labels)
            _write_points(reports_dir / f"roc_{tag}.tsv", "threshold\tfpr\ttpr", roc_points(scores, ys))
            _write_points(reports_dir / f"pr_{tag}.tsv", "threshold\trecall\tprecision", pr_points(scores, ys))
        except DataError as exc:
            notes.append(f"{tag}: curve export skipped ({exc})")
    return result


def eval_run(config: PipelineConfig, test: ScoreManifest, out: str | Path) -> dict:
    out = Path(out)
    doc = _read_partition_doc(out)
    prov = _check_provenance(config, doc)
    part = Partition.from_dict(doc)
    after = load_manifest(out / REFINED)
    return stage_eval(test, after, part, out, provenance_hash=prov["provenance_hash"])


def open_cache(config: PipelineConfig) -> EvidenceCache | None:
    return EvidenceCache(config.runtime.cache_dir) if config.runtime.cache_dir else None


def run(config: PipelineConfig, val: ScoreManifest, test: ScoreManifest,
        media_root: str | Path | None, out: str | Path, backends: Backends | None = None,
        cache: EvidenceCache | None = None) -> dict:
    """Execute every stage in order through the run directory."""
    out = Path(out)
    raw = backends if backends is not None else build_backends(config)
    if cache is None:
        cache = open_cache(config)
    wrapped = raw.with_cache(cache, config.config_hash())
    timings: dict[str, float] = {}

    def timed(name, fn, *a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        timings[name] = time.perf_counter() - t0
        return res

    part = timed("route", stage_route, config, val, test, out, identities=raw.identities())
    timed("mine", stage_mine, config, test, media_root, out, wrapped)
    timed("reason", stage_reason, config, out, wrapped)
    refined = timed("refine", stage_refine, config, test, out)
    report = timed("eval", eval_run, config, test, out)
    jsonio.write_json(out / RUN_LOG, {"timings_s": timings,
                                      "provenance": refined.provenance["provenance_hash"]})
    return {"partition": part, "refined": refined, "report": report, "timings": timings}
