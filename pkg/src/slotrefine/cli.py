"""Command-line entry point: ``slotrefine <subcommand>``.

Stage commands share one run directory (``--out``); pass the same
``--config``/``--ablate``/``--seed`` to every stage of a run, since later
stages refuse a config whose hash differs from the routed one.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__, jsonio, pipeline
from .backends import build_backends
from .config import ABLATION_SWITCHES, load_config
from .core import load_manifest
from .errors import EXIT_INTERNAL, SlotRefineError
from .media import read_frames, write_frames
from .metrics import SUBSETS
from .perturbations import KINDS, params_from_config, perturb
from .routing import load_partition

log = logging.getLogger("slotrefine")


def _config(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(ablate=getattr(args, "ablate", None) or [],
                              seed=getattr(args, "seed", None),
                              cache_dir=getattr(args, "cache_dir", None),
                              workers=getattr(args, "workers", None))


def _media_root(args) -> Path:
    if args.media_root:
        return Path(args.media_root)
    return Path(args.test).resolve().parent


def cmd_route(args) -> int:
    cfg = _config(args)
    val = load_manifest(args.val)
    test = load_manifest(args.test)
    part = pipeline.stage_route(cfg, val, test, args.out)
    t = part.threshold
    print(f"tau={jsonio.format_float(t.tau)} J={t.youden_j:.6f} "
          f"|C|={len(part.confident)} |U|={len(part.uncertain)} routing={'on' if part.routing_enabled else 'off'}")
    return 0


def _backends(cfg):
    return build_backends(cfg).with_cache(pipeline.open_cache(cfg), cfg.config_hash())


def cmd_mine(args) -> int:
    cfg = _config(args)
    test = load_manifest(args.test)
    bundles = pipeline.stage_mine(cfg, test, _media_root(args), args.out, _backends(cfg))
    print(f"mined evidence for {len(bundles)} uncertain sample(s)")
    return 0


def cmd_reason(args) -> int:
    cfg = _config(args)
    ranked = pipeline.stage_reason(cfg, args.out, _backends(cfg))
    failed = sum(r.failed for r in ranked)
    fallback = sum(r.fallback_used for r in ranked if r.mode != "clip_only")
    print(f"reasoned {len(ranked)} sample(s): {failed} failed, {fallback} fallback")
    return 0


def cmd_refine(args) -> int:
    cfg = _config(args)
    test = load_manifest(args.test)
    refined = pipeline.stage_refine(cfg, test, args.out)
    n_unc = sum(r.subset == "uncertain" for r in refined.records)
    moved = sum(r.final_score != r.record.base_score for r in refined.records)
    print(f"refined {n_unc} uncertain sample(s); {moved} score(s) moved -> {Path(args.out) / pipeline.REFINED}")
    return 0


def cmd_eval(args) -> int:
    before = load_manifest(args.test)
    after = load_manifest(args.refined) if args.refined else None
    part, prov = None, None
    if args.partition:
        part = load_partition(args.partition)
        prov = (jsonio.read_json(args.partition).get("provenance") or {}).get("provenance_hash")
    labels = None
    if args.labels:
        labels = {r.sample_id: int(r.label) for r in load_manifest(args.labels) if r.label is not None}
    subsets = SUBSETS if args.subset == "all" else ("full", args.subset) if args.subset != "full" else ("full",)
    pipeline.stage_eval(before, after, part, args.out, labels=labels, subsets=subsets,
                        provenance_hash=prov)
    print((Path(args.out) / "reports" / "metrics.txt").read_text(encoding="utf-8"), end="")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    val = load_manifest(args.val)
    test = load_manifest(args.test)
    result = pipeline.run(cfg, val, test, _media_root(args), args.out)
    part = result["partition"]
    print(f"tau={jsonio.format_float(part.threshold.tau)} J={part.threshold.youden_j:.6f} "
          f"|C|={len(part.confident)} |U|={len(part.uncertain)}")
    print((Path(args.out) / "reports" / "metrics.txt").read_text(encoding="utf-8"), end="")
    return 0


def cmd_perturb(args) -> int:
    cfg = load_config(args.config)
    pc = cfg.perturbation
    params = {
        "sigma": args.sigma if args.sigma is not None else pc.noise_sigma,
        "kernel": args.kernel if args.kernel is not None else pc.blur_kernel,
        "blur_sigma": args.blur_sigma if args.blur_sigma is not None else pc.blur_sigma,
        "quality": args.quality if args.quality is not None else pc.jpeg_quality,
        "seed": args.seed if args.seed is not None else pc.seed,
    }
    used = {k: params[k] for k in {"inversion": (), "noise": ("sigma", "seed"),
                                   "blur": ("kernel", "blur_sigma"), "compress": ("quality",)}[args.kind]}
    if args.input:
        write_frames(args.output, perturb(read_frames(args.input), args.kind, **params))
        print(f"{args.kind} {used} -> {args.output}")
        return 0

    # batch mode: every video referenced by a manifest
    test = load_manifest(args.test)
    root = _media_root(args)
    out = Path(args.output)

    def job(rec):
        if not rec.media_path:
            return rec
        src = pipeline.resolve_media(rec, root)
        dst = Path(args.kind) / (Path(rec.media_path).stem + ".npy")
        write_frames(out / dst, perturb(read_frames(src), args.kind, **params))
        return rec.__class__(rec.sample_id, rec.split, rec.label, str(dst), rec.base_score)

    with ThreadPoolExecutor(max_workers=cfg.runtime.workers) as pool:
        recs = list(pool.map(job, list(test)))
    from .core import ScoreManifest, save_manifest

    save_manifest(ScoreManifest(tuple(recs), test.source), out / f"{args.kind}.jsonl")
    jsonio.write_json(out / f"{args.kind}.perturb.json", {"kind": args.kind, "params": used,
                                                          "source": str(args.test)})
    print(f"{args.kind} {used}: {len(recs)} record(s) -> {out / (args.kind + '.jsonl')} "
          "(base scores are copied; rescore the perturbed media with the base detector)")
    return 0


def cmd_synth(args) -> int:
    from .synthetic import generate

    paths = generate(args.out, seed=args.seed or 0)
    for k, p in paths.items():
        print(f"{k}: {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slotrefine", description="Route, mine, reason, refine and evaluate "
                                "detector scores with slot-preserving reordering.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, val=False, test=True, media=False, cache=False, out=True):
        sp.add_argument("--config", help="YAML/JSON pipeline config (defaults apply when omitted)")
        if val:
            sp.add_argument("--val", required=True, help="validation score manifest (labeled)")
        if test:
            sp.add_argument("--test", required=True, help="test score manifest")
        if media:
            sp.add_argument("--media-root", help="directory that relative media paths resolve against "
                            "(default: the test manifest's directory)")
        if cache:
            sp.add_argument("--cache-dir", help="content-addressed backend cache directory")
            sp.add_argument("--workers", type=int, help="concurrent samples per stage")
        if out:
            sp.add_argument("--out", required=True, help="run directory")
        sp.add_argument("--ablate", action="append", choices=ABLATION_SWITCHES, metavar="SWITCH",
                        help=f"disable a component; one of {', '.join(ABLATION_SWITCHES)} (repeatable)")
        sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("route", help="estimate the threshold and partition the test set")
    common(sp, val=True)
    sp.set_defaults(func=cmd_route)

    sp = sub.add_parser("mine", help="mine evidence strips for uncertain samples")
    common(sp, media=True, cache=True)
    sp.set_defaults(func=cmd_mine)

    sp = sub.add_parser("reason", help="describe evidence and compute rank scores")
    common(sp, test=False, cache=True)
    sp.set_defaults(func=cmd_reason)

    sp = sub.add_parser("refine", help="reassign uncertain score slots by rank score")
    common(sp)
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("eval", help="AP/AUC reports, deltas and displacement")
    sp.add_argument("--test", required=True, help="base score manifest")
    sp.add_argument("--refined", help="refined manifest to compare against the base")
    sp.add_argument("--partition", help="partition.json (needed for subset reports)")
    sp.add_argument("--labels", help="manifest supplying labels (default: labels in --test)")
    sp.add_argument("--subset", choices=SUBSETS + ("all",), default="all")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("run", help="route -> mine -> reason -> refine -> eval")
    common(sp, val=True, media=True, cache=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("perturb", help="apply a corruption to one video or every video in a manifest")
    sp.add_argument("--config")
    sp.add_argument("--kind", required=True, choices=KINDS)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="single video")
    src.add_argument("--test", help="manifest whose videos are all perturbed")
    sp.add_argument("--media-root")
    sp.add_argument("--output", "--out", dest="output", required=True,
                    help="output video (single mode) or directory (manifest mode)")
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--kernel", type=int)
    sp.add_argument("--blur-sigma", type=float)
    sp.add_argument("--quality", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_perturb)

    sp = sub.add_parser("synth", help="write the synthetic mock corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SlotRefineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
