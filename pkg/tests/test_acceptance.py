"""Exit criteria. Each test carries an ``acceptance`` marker; the terminal
summary prints one PASS/FAIL line per criterion."""

import hashlib
import json
import math
import random
import socket
import time
from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from conftest import labeled, rec
from slotrefine import jsonio, pipeline
from slotrefine.backends import build_backends
from slotrefine.config import load_config
from slotrefine.core import load_manifest
from slotrefine.evidence import hashed_patch_choice, score_frame, score_patches, uniform_positions
from slotrefine.metrics import ap, auc
from slotrefine.perturbations import add_noise, blur, invert
from slotrefine.refine import UncertainEntry, build_slots, reassign_slots
from slotrefine.routing import RoutingThreshold, estimate_youden_threshold, partition

acceptance = pytest.mark.acceptance

# sha256 of refined.jsonl for the seed-0 synthetic corpus; audited by hand:
# confident rows unchanged, score multiset conserved, every uncertain fake above every uncertain real
REFINED_SHA256 = "6a32394d5e6a17fa8a8bbf882757a19389f9b2eb08cfc640607460b5b678de19"


# -- 1 -----------------------------------------------------------------------------


def sweep_oracle(scores, labels):
    """Every midpoint candidate, counted directly; first maximizer wins."""
    d = sorted(set(scores))
    cands = [d[0] - 1.0] + [(a + b) / 2 for a, b in zip(d, d[1:])] + [d[-1] + 1.0]
    P = sum(labels)
    N = len(labels) - P
    best = None
    for tau in cands:
        tp = sum(1 for s, y in zip(scores, labels) if y == 1 and s > tau)
        fp = sum(1 for s, y in zip(scores, labels) if y == 0 and s > tau)
        j = Fraction(tp, P) - Fraction(fp, N)
        if best is None or j > best[1]:
            best = (tau, j)
    return best


@acceptance("1. Youden oracle")
def test_youden_oracle():
    rng = random.Random(1)
    cases = []
    while len(cases) < 1000:
        n = rng.randint(2, 12)
        # coarse grid so ties are common
        scores = [rng.randint(0, 20) / 20 if rng.random() < 0.5 else rng.random() for _ in range(n)]
        labels = [rng.randint(0, 1) for _ in range(n)]
        if 0 < sum(labels) < n:
            cases.append((scores, labels))
    t0 = time.perf_counter()
    results = [estimate_youden_threshold([rec(f"s{i}", s, y, "val") for i, (s, y) in enumerate(zip(sc, lb))])
               for sc, lb in cases]
    elapsed = time.perf_counter() - t0
    for (sc, lb), got in zip(cases, results):
        tau, j = sweep_oracle(sc, lb)
        assert got.tau == tau, (sc, lb)
        assert abs(got.youden_j - float(j)) <= 1e-15
    assert elapsed < 5.0, elapsed


# -- 2 -----------------------------------------------------------------------------


@acceptance("2. Partition totality")
def test_partition_totality():
    rng = random.Random(2)
    for _ in range(500):
        n = rng.randint(0, 30)
        tau = rng.choice([0.5, rng.random()])
        scores = [rng.choice([tau, rng.random(), round(rng.random(), 1)]) for _ in range(n)]
        recs = [rec(f"s{i}", s) for i, s in enumerate(scores)]
        p = partition(recs, RoutingThreshold(tau, 0.0, 0, 0))
        c, u = set(p.confident), set(p.uncertain)
        assert not c & u and c | u == {r.sample_id for r in recs}
        assert len(p.confident) + len(p.uncertain) == n
        for r in recs:
            assert (r.sample_id in c) == (r.base_score <= tau)
    p = partition([rec("eq", 0.5)], RoutingThreshold(0.5, 0.0, 0, 0))
    assert p.confident == ("eq",)


# -- 3 -----------------------------------------------------------------------------


def _unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def _dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def brute_frame(x, real, fake):
    sf = [_dot(x, p) for p in fake]
    sr = [_dot(x, p) for p in real]
    best_f = sf[0]
    for s in sf:
        if s > best_f:
            best_f = s
    best_r = sr[0]
    for s in sr:
        if s > best_r:
            best_r = s
    g = best_f - best_r
    c = best_f - sum(sf) / len(sf)
    return g, c, g + c


@acceptance("3. Scoring oracle")
def test_scoring_oracle():
    rng = np.random.default_rng(3)
    for inst in range(200):
        d = int(rng.integers(2, 65))
        real = [_unit(rng, d) for _ in range(int(rng.integers(1, 9)))]
        fake = [_unit(rng, d) for _ in range(1 if inst % 4 == 0 else int(rng.integers(1, 9)))]
        T = int(rng.integers(1, 7))
        frames = [_unit(rng, d) for _ in range(T)]
        for x in frames:
            g, c, u = score_frame(x, real, fake)
            bg, bc, bu = brute_frame(x, real, fake)
            assert abs(g - bg) <= 1e-9 and abs(c - max(bc, 0.0)) <= 1e-9 and abs(u - (g + c)) <= 1e-12
            assert c >= 0.0
            if len(fake) == 1:
                assert c == 0.0
            # singleton fake set forced on every instance as well
            assert score_frame(x, real, fake[:1])[1] == 0.0
        patches = {(t, l): _unit(rng, d) for t in range(T) for l in range(16)}
        ps = score_patches(patches, real, fake, T, 16)
        for l in range(16):
            acc = 0.0
            for t in range(T):
                bg = brute_frame(patches[(t, l)], real, fake)[0]
                assert abs(ps.g[t][l] - bg) <= 1e-9
                acc += bg
            assert abs(ps.u[l] - acc / T) <= 1e-9


# -- 4 -----------------------------------------------------------------------------


@acceptance("4. Slot conservation")
def test_slot_conservation():
    rng = random.Random(4)
    for case in range(1000):
        n = rng.randint(0, 15)
        base = [rng.choice([rng.random(), round(rng.random(), 1)]) for _ in range(n)]
        ranks = [rng.choice([rng.random(), round(rng.random(), 1)]) for _ in range(n)]
        entries = [UncertainEntry(f"u{i}", b, r) for i, (b, r) in enumerate(zip(base, ranks))]
        slots = build_slots([rec(e.sample_id, e.base_score) for e in entries])
        out = reassign_slots(entries, slots)
        assert sorted(out.values()) == sorted(base)
        for a in entries:
            for b in entries:
                if a.rank_score > b.rank_score:
                    assert out[a.sample_id] >= out[b.sample_id]
        # rank order equal to base order: a strictly increasing map of the base scores
        same = [UncertainEntry(e.sample_id, e.base_score, 3 * e.base_score - 1) for e in entries]
        assert reassign_slots(same, slots) == {e.sample_id: e.base_score for e in entries}


# -- 5 -----------------------------------------------------------------------------


def brute_auc(s, y):
    pos = [a for a, l in zip(s, y) if l == 1]
    neg = [a for a, l in zip(s, y) if l == 0]
    won = Fraction(0)
    for p in pos:
        for q in neg:
            won += 1 if p > q else Fraction(1, 2) if p == q else 0
    return won / (len(pos) * len(neg))


def brute_ap(s, y):
    order = sorted(range(len(s)), key=lambda i: -s[i])  # stable: ties keep input order
    hits, total = 0, Fraction(0)
    for k, i in enumerate(order, start=1):
        if y[i]:
            hits += 1
            total += Fraction(hits, k)
    return total / sum(y)


@acceptance("5. Metric oracle")
def test_metric_oracle():
    # every labeling of every score pattern over a 3-value alphabet, sizes 1..6
    for n in range(1, 7):
        for s in product((0.0, 0.5, 1.0), repeat=n):
            for y in product((0, 1), repeat=n):
                if 0 < sum(y) < n:
                    assert abs(auc(s, y) - float(brute_auc(s, y))) <= 1e-12
                if sum(y):
                    assert abs(ap(s, y) - float(brute_ap(s, y))) <= 1e-12
    rng = random.Random(5)
    for _ in range(3000):
        n = rng.randint(2, 8)
        s = [rng.randint(0, 4) for _ in range(n)]
        y = [rng.randint(0, 1) for _ in range(n)]
        if not 0 < sum(y) < n:
            continue
        assert abs(auc(s, y) - float(brute_auc(s, y))) <= 1e-12
        assert abs(ap(s, y) - float(brute_ap(s, y))) <= 1e-12
        for f in (lambda v: v ** 3 + 7, math.exp, lambda v: math.atan(v) - 10):
            assert auc([f(v) for v in s], y) == auc(s, y)


# -- 6 -----------------------------------------------------------------------------


@pytest.fixture
def no_network(monkeypatch):
    def refuse(*a, **k):
        raise OSError("network access disabled in this test")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


def _labels(manifest):
    return {r.sample_id: int(r.label) for r in manifest}


@acceptance("6. End-to-end mock run")
def test_end_to_end(corpus, tmp_path, no_network):
    t0 = time.perf_counter()
    cfg = load_config(corpus["config"])
    val, test = load_manifest(corpus["val"]), load_manifest(corpus["test"])
    assert len(test) == 40
    res = pipeline.run(cfg, val, test, corpus["test"].parent, tmp_path / "run")
    elapsed = time.perf_counter() - t0

    part = res["partition"]
    final = res["refined"].final_manifest()
    unc = list(part.uncertain)
    y = [int(test.get(s).label) for s in unc]
    before = auc([test.get(s).base_score for s in unc], y)
    after = auc([final.get(s).base_score for s in unc], y)
    assert before < after == 1.0

    for s in part.confident:
        assert final.get(s).base_score.hex() == test.get(s).base_score.hex()
    assert sorted(r.base_score for r in final) == sorted(r.base_score for r in test)

    digest = hashlib.sha256((tmp_path / "run" / "refined.jsonl").read_bytes()).hexdigest()
    assert digest == REFINED_SHA256
    assert elapsed < 60.0


# -- 7 -----------------------------------------------------------------------------


def _run_arm(corpus, out, switch):
    cfg = load_config(corpus["config"]).with_overrides(ablate=[switch])
    val, test = load_manifest(corpus["val"]), load_manifest(corpus["test"])
    b = build_backends(cfg)
    res = pipeline.run(cfg, val, test, corpus["test"].parent, out, backends=b)
    return cfg, test, res, b


def _sidecars(out, ids):
    return {s: jsonio.read_json(out / "evidence" / s / "evidence.json") for s in ids}


def _ranked(out, ids):
    return {s: jsonio.read_json(out / "reasoning" / f"{s}.json") for s in ids}


@acceptance("7. Ablation arms")
@pytest.mark.parametrize("switch", ["routing", "frame_selector", "patch_selector", "vlm", "reranker", "slots"])
def test_ablation_arm(corpus, tmp_path, switch):
    out = tmp_path / switch
    cfg, test, res, b = _run_arm(corpus, out, switch)
    part = res["partition"]
    unc = list(part.uncertain)
    final = res["refined"].final_scores()
    for s in part.confident:
        assert final[s] == test.get(s).base_score

    if switch == "routing":
        assert len(part.confident) == 0 and len(unc) == len(test)
    elif switch == "frame_selector":
        for s, doc in _sidecars(out, unc).items():
            n = doc["n_video_frames"]
            assert doc["frame_scores"] is None
            assert doc["sampled_frames"] == uniform_positions(n, cfg.t_frames)
            assert doc["selected_positions"] == uniform_positions(len(doc["sampled_frames"]), cfg.k_frm)
    elif switch == "patch_selector":
        for s, doc in _sidecars(out, unc).items():
            assert doc["selected_patches"] == hashed_patch_choice(16, cfg.k_pat, cfg.seed, s)
    elif switch == "vlm":
        assert b.vlm.calls == 0 and b.reranker.calls == 0
        side, ranked = _sidecars(out, unc), _ranked(out, unc)
        for s in unc:
            u = side[s]["patch_scores"]["u_pat"]
            expected = float(np.mean([u[l] for l in side[s]["selected_patches"]]))
            assert abs(ranked[s]["rank_score"] - expected) <= 1e-9
    elif switch == "reranker":
        assert b.reranker.calls == 0 and b.vlm.calls == len(unc)
        assert all(r["mode"] == "keyword" for r in _ranked(out, unc).values())
    elif switch == "slots":
        ranked = _ranked(out, unc)
        assert all(final[s] == ranked[s]["rank_score"] for s in unc)

    if switch != "slots":
        assert sorted(final.values()) == sorted(r.base_score for r in test)


# -- 8 -----------------------------------------------------------------------------


@acceptance("8. Perturbation identities")
def test_perturbation_identities():
    rng = np.random.default_rng(8)
    for _ in range(20):
        shape = (int(rng.integers(1, 4)), int(rng.integers(1, 24)), int(rng.integers(1, 24)), 3)
        frames = rng.integers(0, 256, shape, dtype=np.uint8)
        assert np.array_equal(invert(invert(frames)), frames)
        assert np.array_equal(add_noise(frames, 0.0, seed=int(rng.integers(100))), frames)
        const = np.empty(shape, dtype=np.uint8)
        const[...] = rng.integers(0, 256, 3, dtype=np.uint8)
        assert np.array_equal(blur(const, 7, 2.0), const)


# -- 9 -----------------------------------------------------------------------------


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != pipeline.RUN_LOG}


@acceptance("9. Cache replay")
def test_cache_replay(corpus, tmp_path):
    cfg = load_config(corpus["config"]).with_overrides(cache_dir=str(tmp_path / "cache"))
    val, test = load_manifest(corpus["val"]), load_manifest(corpus["test"])
    cold = build_backends(cfg)
    pipeline.run(cfg, val, test, corpus["test"].parent, tmp_path / "cold", backends=cold)
    assert cold.embedding.calls > 0 and cold.vlm.calls > 0 and cold.reranker.calls > 0

    warm = build_backends(cfg)
    pipeline.run(cfg, val, test, corpus["test"].parent, tmp_path / "warm", backends=warm)
    assert (warm.embedding.calls, warm.vlm.calls, warm.reranker.calls) == (0, 0, 0)
    a, b = _tree(tmp_path / "cold"), _tree(tmp_path / "warm")
    assert a.keys() == b.keys() and all(a[k] == b[k] for k in a)
