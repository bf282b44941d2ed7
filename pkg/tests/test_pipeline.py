import json

import numpy as np
import pytest

from slotrefine import jsonio, pipeline
from slotrefine.backends import Backends
from slotrefine.backends.mock import MockEmbedding, MockReranker, MockVlm
from slotrefine.config import load_config
from slotrefine.core import SampleRecord, ScoreManifest, load_manifest, save_manifest
from slotrefine.errors import ConfigError, TransportError


def mock_backends(cfg):
    from slotrefine.backends import build_backends

    return build_backends(cfg)


def load(corpus):
    return load_config(corpus["config"]), load_manifest(corpus["val"]), load_manifest(corpus["test"])


def test_confident_media_never_touched(corpus_copy, tmp_path):
    cfg, val, test = load(corpus_copy)
    media = corpus_copy["test"].parent
    for r in test:
        if r.base_score <= 0.5:
            (media / r.media_path).unlink()
    res = pipeline.run(cfg, val, test, media, tmp_path / "run")
    part = res["partition"]
    assert len(part.confident) == 16
    assert sorted(p.name for p in (tmp_path / "run" / "evidence").iterdir()) == sorted(part.uncertain)


def test_empty_uncertain_is_identity(corpus, tmp_path):
    cfg, val, test = load(corpus)
    low = ScoreManifest(tuple(r for r in test if r.base_score <= 0.5))
    res = pipeline.run(cfg, val, low, corpus["test"].parent, tmp_path / "run")
    assert res["refined"].final_manifest() == low
    assert not (tmp_path / "run" / "evidence").exists()
    txt = (tmp_path / "run" / "reports" / "metrics.txt").read_text()
    assert "uncertain subset is empty" in txt


def test_reasoning_failure_is_pinned(corpus, tmp_path):
    cfg, val, test = load(corpus)
    b = mock_backends(cfg)
    victim = "unc-real-00"

    class Flaky:
        identity = b.vlm.identity

        def describe(self, rasters, prompt, sample_id=None):
            if sample_id == victim:
                raise TransportError("connection reset")
            return b.vlm.describe(rasters, prompt, sample_id)

    res = pipeline.run(cfg, val, test, corpus["test"].parent, tmp_path / "run",
                       backends=Backends(b.embedding, Flaky(), b.reranker))
    rec = {r.record.sample_id: r for r in res["refined"].records}[victim]
    assert rec.final_score == rec.record.base_score and "reasoning_failed" in rec.flags
    prov = jsonio.read_json(tmp_path / "run" / "provenance.json")
    assert prov["sample_flags"][victim] == ["reasoning_failed"]
    assert sorted(res["refined"].final_scores().values()) == sorted(r.base_score for r in test)


def test_stage_refuses_other_config(corpus, tmp_path):
    cfg, val, test = load(corpus)
    pipeline.stage_route(cfg, val, test, tmp_path)
    other = cfg.with_overrides(seed=5)
    with pytest.raises(ConfigError):
        pipeline.stage_mine(other, test, corpus["test"].parent, tmp_path, mock_backends(other))


def test_routing_ablation_routes_everything(corpus, tmp_path):
    cfg, val, test = load(corpus)
    part = pipeline.stage_route(cfg.with_overrides(ablate=["routing"]), val, test, tmp_path)
    assert part.confident == () and len(part.uncertain) == len(test)


def test_unsafe_sample_ids_get_hashed_dirs():
    assert pipeline.safe_name("ok-1.a") == "ok-1.a"
    assert pipeline.safe_name("../etc/passwd").startswith("id-")


def test_provenance_records_resolved_config(corpus, tmp_path):
    cfg, val, test = load(corpus)
    pipeline.run(cfg, val, test, corpus["test"].parent, tmp_path)
    prov = jsonio.read_json(tmp_path / "provenance.json")
    assert prov["config"]["t_frames"] == 8 and prov["config"]["k_pat"] == 3
    assert prov["config_hash"] == cfg.config_hash()
    assert not prov["config"]["backends"]["vlm"]["oracle_table"].endswith(".json")
    line = (tmp_path / "refined.jsonl").read_text().splitlines()[0]
    assert json.loads(line)["provenance"] == prov["provenance_hash"]
