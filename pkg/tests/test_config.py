import json

import pytest

from slotrefine.config import ABLATION_SWITCHES, build_config, load_config
from slotrefine.errors import ConfigError, StorageError


def test_defaults():
    cfg = build_config({})
    assert (cfg.t_frames, cfg.k_frm, cfg.k_pat) == (16, 4, 3)
    assert cfg.grid_rows * cfg.grid_cols == 16
    assert all(getattr(cfg.ablation, f"use_{s}") for s in ABLATION_SWITCHES)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        build_config({"t_frame": 8})


@pytest.mark.parametrize("data", [
    {"t_frames": 4, "k_frm": 5},
    {"grid_rows": 1, "grid_cols": 2, "k_pat": 3},
    {"k_pat": 0},
    {"patch_size": -1},
])
def test_budgets(data):
    with pytest.raises(ConfigError):
        build_config(data)


def test_ablate_override():
    cfg = build_config({}).with_overrides(ablate=["vlm", "use_slots", "frame-selector"])
    assert not cfg.ablation.use_vlm and not cfg.ablation.use_slots
    assert not cfg.ablation.use_frame_selector
    assert cfg.ablation.use_routing
    with pytest.raises(ConfigError):
        build_config({}).with_overrides(ablate=["qwen"])


def test_hash_ignores_runtime_but_tracks_results():
    base = build_config({})
    assert base.with_overrides(workers=1, cache_dir="/x").config_hash() == base.config_hash()
    assert base.with_overrides(seed=1).config_hash() != base.config_hash()
    assert base.with_overrides(ablate=["slots"]).config_hash() != base.config_hash()


def test_oracle_table_hashed_by_content(tmp_path):
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        (tmp_path / d / "oracle.json").write_text('{"x": 1}')
        (tmp_path / d / "cfg.yaml").write_text("backends:\n  vlm:\n    oracle_table: oracle.json\n")
    ha = load_config(tmp_path / "a" / "cfg.yaml").config_hash()
    hb = load_config(tmp_path / "b" / "cfg.yaml").config_hash()
    assert ha == hb
    (tmp_path / "b" / "oracle.json").write_text('{"x": 0}')
    assert load_config(tmp_path / "b" / "cfg.yaml").config_hash() != ha


def test_load_errors(tmp_path):
    with pytest.raises(StorageError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(bad)
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"k_frm": 2}))
    assert load_config(js).k_frm == 2
