"""Synthetic corpus for offline end-to-end runs.

Videos are small solid-color cell grids with a moving block; fakes also
carry a flickering mouth-area cell. Base scores are planted so the
uncertain side of the threshold mixes real and fake samples in a poor
order, and an oracle table lets the mock describer know each label.
All values come from SHA-256, so the corpus is identical on every
platform.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from . import jsonio
from .core import SampleRecord, ScoreManifest, save_manifest
from .media import write_frames


def hash_uniform(*parts) -> float:
    """Uniform [0, 1) from the SHA-256 of the joined parts (53-bit resolution)."""
    h = hashlib.sha256("\x00".join(map(str, parts)).encode()).digest()
    return (int.from_bytes(h[:8], "little") >> 11) * 2.0 ** -53


def _color(*parts) -> np.ndarray:
    h = hashlib.sha256("\x00".join(map(str, parts)).encode()).digest()
    return np.frombuffer(h[:3], dtype=np.uint8).copy()


def make_video(sample_id: str, label: int, n_frames: int = 12, size: int = 48, grid: int = 4) -> np.ndarray:
    cell = size // grid
    base = np.zeros((size, size, 3), dtype=np.uint8)
    for r in range(grid):
        for c in range(grid):
            base[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = _color(sample_id, "cell", r, c)
    frames = []
    block = cell // 2
    for t in range(n_frames):
        f = base.copy()
        # the block only moves on a few frames so frame differences are uneven
        step = sum(1 for k in (2, 5, 8, 10) if t >= k)
        y = (step * 7) % (size - block)
        x = (step * 11) % (size - block)
        f[y:y + block, x:x + block] = _color(sample_id, "block")
        if label == 1 and t % 3 == 1:
            r, c = grid - 1, grid // 2
            f[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = _color(sample_id, "flicker", t)
        frames.append(f)
    return np.stack(frames)


# (label, count, score range) per test group; the threshold lands at 0.5
_TEST_GROUPS = [
    ("conf-real", 0, 12, (0.02, 0.48)),
    ("conf-fake", 1, 4, (0.30, 0.49)),
    ("unc-real", 0, 8, (0.62, 0.98)),
    ("unc-fake", 1, 16, (0.51, 0.95)),
]

SYNTH_CONFIG = {
    "t_frames": 8,
    "k_frm": 3,
    "k_pat": 3,
    "grid_rows": 4,
    "grid_cols": 4,
    "patch_size": 16,
    "backends": {
        "embedding": {"kind": "mock", "dimension": 32, "seed": 0},
        "vlm": {"kind": "mock", "seed": 0, "oracle_table": "oracle.json"},
        "reranker": {"kind": "mock"},
    },
    "runtime": {"workers": 4},
}


def generate(out: str | Path, seed: int = 0) -> dict[str, Path]:
    """Write val/test manifests, .npy videos, the oracle table and a config into ``out``."""
    out = Path(out)
    (out / "media").mkdir(parents=True, exist_ok=True)

    val = []
    for i in range(10):
        val.append(SampleRecord(f"val-real-{i:02d}", "val", 0, None, 0.10 + 0.04 * i))
        val.append(SampleRecord(f"val-fake-{i:02d}", "val", 1, None, 0.54 + 0.04 * i))

    test = []
    for name, label, count, (lo, hi) in _TEST_GROUPS:
        for i in range(count):
            sid = f"{name}-{i:02d}"
            score = lo + (hi - lo) * hash_uniform(seed, sid, "score")
            media = f"media/{sid}.npy"
            write_frames(out / media, make_video(f"{seed}:{sid}", label))
            test.append(SampleRecord(sid, "test", label, media, score))
    test.sort(key=lambda r: hash_uniform(seed, r.sample_id, "order"))
    assert len({r.base_score for r in test}) == len(test)

    paths = {"val": out / "val.jsonl", "test": out / "test.jsonl", "oracle": out / "oracle.json",
             "config": out / "config.json"}
    save_manifest(ScoreManifest(tuple(val), "synthetic"), paths["val"])
    save_manifest(ScoreManifest(tuple(test), "synthetic"), paths["test"])
    jsonio.write_json(paths["oracle"], {r.sample_id: int(r.label) for r in test})
    jsonio.write_json(paths["config"], SYNTH_CONFIG)
    return paths
