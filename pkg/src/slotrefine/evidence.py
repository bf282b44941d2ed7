"""Evidence mining for uncertain samples.

Steps per video: keep the frames with the largest grayscale change, score
every sampled frame and every grid patch against the real/fake text
prototypes, keep the top frames and top patch locations, and lay the chosen
patch location out across the chosen frames as a horizontal strip.

Similarities are inner products of unit vectors, summed with ``math.fsum``
so that scores are reproducible bit-for-bit across platforms.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import jsonio, media
from .errors import DataError, DecodeError, InternalError

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class FrameSequence:
    sample_id: str
    indices: tuple[int, ...]
    frames: np.ndarray  # (T, H, W, 3) uint8 RGB
    gray: np.ndarray  # (T, H, W) float64
    n_video_frames: int

    def __post_init__(self):
        if len(self.indices) != len(self.frames) or len(self.frames) != len(self.gray):
            raise InternalError("frame sequence arrays disagree in length")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise InternalError("frame indices must be strictly increasing")

    @property
    def T(self) -> int:
        return len(self.indices)


def frame_differences(video: str | os.PathLike) -> np.ndarray:
    """Mean absolute grayscale difference of each frame to its predecessor (first = 0)."""
    diffs: list[float] = []
    prev = None
    for frame in media.iter_frames(video):
        gray = media.to_gray(frame)
        diffs.append(0.0 if prev is None else float(np.mean(np.abs(gray - prev))))
        prev = gray
    if not diffs:
        raise DecodeError(f"video has zero frames: {video}")
    return np.asarray(diffs)


def top_k(values: Sequence[float], k: int) -> list[int]:
    """Indices of the k largest values, ties to the smaller index, returned ascending."""
    if k > len(values):
        raise DataError(f"cannot select {k} items from {len(values)}")
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return sorted(order[:k])


def uniform_positions(n: int, k: int) -> list[int]:
    """k evenly spaced positions over [0, n)."""
    if k >= n:
        return list(range(n))
    return [(j * n) // k for j in range(k)]


def _gather(video, sample_id: str, keep: Sequence[int], n_total: int) -> FrameSequence:
    keep_set = set(keep)
    frames = [f for i, f in enumerate(media.iter_frames(video)) if i in keep_set]
    if len(frames) != len(keep):
        raise DecodeError(f"{video}: frame count changed between passes")
    arr = np.stack(frames)
    return FrameSequence(sample_id, tuple(keep), arr, media.to_gray(arr), n_total)


def sample_frames(video: str | os.PathLike, t_frames: int, sample_id: str = "") -> FrameSequence:
    """Keep the ``t_frames`` frames with the largest grayscale change, in temporal order."""
    diffs = frame_differences(video)
    keep = top_k(diffs.tolist(), min(t_frames, len(diffs)))
    return _gather(video, sample_id, keep, len(diffs))


def sample_frames_uniform(video: str | os.PathLike, t_frames: int, sample_id: str = "") -> FrameSequence:
    n = sum(1 for _ in media.iter_frames(video))
    if n == 0:
        raise DecodeError(f"video has zero frames: {video}")
    return _gather(video, sample_id, uniform_positions(n, t_frames), n)


# -- grid ----------------------------------------------------------------------


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("grid dimensions must be positive")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def bounds(self, index: int, height: int, width: int) -> tuple[int, int, int, int]:
        """(y0, y1, x0, x1) of patch ``index``; the last row/column absorb remainders."""
        if not 0 <= index < self.size:
            raise InternalError(f"patch index {index} outside grid {self.rows}x{self.cols}")
        if height < self.rows or width < self.cols:
            raise DataError(f"frame {height}x{width} too small for grid {self.rows}x{self.cols}")
        r, c = divmod(index, self.cols)
        ph, pw = height // self.rows, width // self.cols
        y1 = height if r == self.rows - 1 else (r + 1) * ph
        x1 = width if c == self.cols - 1 else (c + 1) * pw
        return r * ph, y1, c * pw, x1

    def crop(self, frame: np.ndarray, index: int) -> np.ndarray:
        y0, y1, x0, x1 = self.bounds(index, frame.shape[0], frame.shape[1])
        return frame[y0:y1, x0:x1]


# -- scoring ---------------------------------------------------------------------


def _check_unit(vec: np.ndarray, what: str) -> None:
    norm = math.sqrt(math.fsum(float(v) * float(v) for v in vec))
    if abs(norm - 1.0) > UNIT_TOL:
        raise DataError(f"{what} is not unit-normalized (norm={norm:.9f})")


def _as_matrix(protos, what: str) -> np.ndarray:
    mat = np.asarray(protos, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.shape[0] == 0 or mat.size == 0:
        raise DataError(f"{what} prototype list is empty")
    return mat


def similarities(x: np.ndarray, protos: np.ndarray) -> list[float]:
    """Cosine similarity of unit vector ``x`` against each row of ``protos``."""
    x = np.asarray(x, dtype=np.float64)
    if protos.shape[1] != x.shape[-1]:
        raise DataError(f"dimension mismatch: embedding {x.shape[-1]} vs prototypes {protos.shape[1]}")
    return [math.fsum(row) for row in protos * x]


def score_frame(frame_embedding, proto_real, proto_fake) -> tuple[float, float, float]:
    """Return (global suspiciousness, prototype concentration, frame score)."""
    real = _as_matrix(proto_real, "real")
    fake = _as_matrix(proto_fake, "fake")
    x = np.asarray(frame_embedding, dtype=np.float64)
    _check_unit(x, "frame embedding")
    sf = similarities(x, fake)
    sr = similarities(x, real)
    best_fake = max(sf)
    g = best_fake - max(sr)
    c = best_fake - math.fsum(sf) / len(sf)
    if c < 0.0:  # rounding only; max >= mean mathematically
        c = 0.0
    return g, c, g + c


def patch_margin(patch_embedding, proto_real, proto_fake) -> float:
    real = _as_matrix(proto_real, "real")
    fake = _as_matrix(proto_fake, "fake")
    x = np.asarray(patch_embedding, dtype=np.float64)
    _check_unit(x, "patch embedding")
    return max(similarities(x, fake)) - max(similarities(x, real))


@dataclass(frozen=True)
class FrameScores:
    g: tuple[float, ...]
    c: tuple[float, ...]
    u: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"g_frm": list(self.g), "c_frm": list(self.c), "u_frm": list(self.u)}


@dataclass(frozen=True)
class PatchScores:
    g: tuple[tuple[float, ...], ...]  # [t][l]
    u: tuple[float, ...]  # [l]

    def to_dict(self) -> dict:
        return {"g_pat": [list(row) for row in self.g], "u_pat": list(self.u)}


def score_frames(frame_embeddings, proto_real, proto_fake) -> FrameScores:
    triples = [score_frame(e, proto_real, proto_fake) for e in frame_embeddings]
    g, c, u = zip(*triples) if triples else ((), (), ())
    return FrameScores(tuple(g), tuple(c), tuple(u))


def score_patches(patch_embeddings: Mapping[tuple[int, int], np.ndarray], proto_real, proto_fake,
                  n_frames: int | None = None, n_patches: int | None = None) -> PatchScores:
    """Per-patch margins and their mean over frames (summed left to right, then divided)."""
    if n_frames is None:
        n_frames = 1 + max(t for t, _ in patch_embeddings) if patch_embeddings else 0
    if n_patches is None:
        n_patches = 1 + max(l for _, l in patch_embeddings) if patch_embeddings else 0
    if n_frames == 0 or n_patches == 0:
        raise DataError("no patch embeddings supplied")
    g = []
    for t in range(n_frames):
        row = []
        for l in range(n_patches):
            try:
                emb = patch_embeddings[(t, l)]
            except KeyError:
                raise DataError(f"missing patch embedding for frame {t}, patch {l}") from None
            row.append(patch_margin(emb, proto_real, proto_fake))
        g.append(tuple(row))
    u = []
    for l in range(n_patches):
        acc = 0.0
        for t in range(n_frames):
            acc += g[t][l]
        u.append(acc / n_frames)
    return PatchScores(tuple(g), tuple(u))


def select_evidence(frame_u: Sequence[float], patch_u: Sequence[float], k_frm: int,
                    k_pat: int) -> tuple[list[int], list[int]]:
    return top_k(list(frame_u), k_frm), top_k(list(patch_u), k_pat)


def hashed_patch_choice(n_patches: int, k: int, seed: int, sample_id: str) -> list[int]:
    """Seeded uniform choice of k patch locations, identical on every platform."""
    if k > n_patches:
        raise DataError(f"cannot select {k} patches from {n_patches}")

    def key(l: int) -> bytes:
        return hashlib.sha256(f"{seed}\x00{sample_id}\x00{l}".encode()).digest()

    return sorted(sorted(range(n_patches), key=key)[:k])


# -- strips ------------------------------------------------------------------------


def resize_nearest(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    ys = ((2 * np.arange(size) + 1) * h) // (2 * size)
    xs = ((2 * np.arange(size) + 1) * w) // (2 * size)
    return img[ys][:, xs]


@dataclass(frozen=True)
class EvidenceBundle:
    sample_id: str
    selected_frames: tuple[int, ...]  # video frame indices
    selected_positions: tuple[int, ...]  # positions within the sampled sequence
    selected_patches: tuple[int, ...]
    strips: tuple[np.ndarray, ...]
    patch_scores: PatchScores | None = None
    frame_scores: FrameScores | None = None
    sampled_frames: tuple[int, ...] = ()
    n_video_frames: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def fallback_value(self) -> float:
        """Mean cross-frame patch suspiciousness over the selected locations."""
        if self.patch_scores is None:
            raise InternalError("bundle has no patch scores")
        vals = [self.patch_scores.u[l] for l in self.selected_patches]
        return math.fsum(vals) / len(vals)


def compose_strips(frames: FrameSequence, selection: tuple[Sequence[int], Sequence[int]],
                   grid: PatchGrid, patch_size: int) -> EvidenceBundle:
    positions, patches = (list(selection[0]), list(selection[1]))
    if not positions or not patches:
        raise DataError("selection must contain at least one frame and one patch")
    if any(not 0 <= p < frames.T for p in positions):
        raise InternalError(f"frame selection {positions} outside sequence of {frames.T}")
    positions = sorted(positions)
    strips = []
    for l in patches:
        crops = [resize_nearest(grid.crop(frames.frames[p], l), patch_size) for p in positions]
        strips.append(np.ascontiguousarray(np.concatenate(crops, axis=1)))
    return EvidenceBundle(
        sample_id=frames.sample_id,
        selected_frames=tuple(frames.indices[p] for p in positions),
        selected_positions=tuple(positions),
        selected_patches=tuple(patches),
        strips=tuple(strips),
        sampled_frames=frames.indices,
        n_video_frames=frames.n_video_frames,
    )


def mine_sample(sample_id: str, video: str | os.PathLike, config, embedder,
                proto_real: np.ndarray, proto_fake: np.ndarray) -> EvidenceBundle:
    """Full evidence mining for one uncertain video."""
    ab = config.ablation
    grid = PatchGrid(config.grid_rows, config.grid_cols)
    if ab.use_frame_selector:
        seq = sample_frames(video, config.t_frames, sample_id)
    else:
        seq = sample_frames_uniform(video, config.t_frames, sample_id)
    k_frm = min(config.k_frm, seq.T)

    frame_scores = None
    if ab.use_frame_selector:
        frame_embs = embedder.embed_images(list(seq.frames))
        frame_scores = score_frames(frame_embs, proto_real, proto_fake)
        positions = top_k(list(frame_scores.u), k_frm)
    else:
        positions = uniform_positions(seq.T, k_frm)

    crops = [grid.crop(seq.frames[t], l) for t in range(seq.T) for l in range(grid.size)]
    embs = embedder.embed_images(crops)
    patch_map = {(t, l): embs[t * grid.size + l] for t in range(seq.T) for l in range(grid.size)}
    patch_scores = score_patches(patch_map, proto_real, proto_fake, seq.T, grid.size)
    if ab.use_patch_selector:
        patches = top_k(list(patch_scores.u), config.k_pat)
    else:
        patches = hashed_patch_choice(grid.size, config.k_pat, config.seed, sample_id)

    bundle = compose_strips(seq, (positions, patches), grid, config.patch_size)
    return EvidenceBundle(
        sample_id=bundle.sample_id,
        selected_frames=bundle.selected_frames,
        selected_positions=bundle.selected_positions,
        selected_patches=bundle.selected_patches,
        strips=bundle.strips,
        patch_scores=patch_scores,
        frame_scores=frame_scores,
        sampled_frames=bundle.sampled_frames,
        n_video_frames=bundle.n_video_frames,
        meta={"grid": [grid.rows, grid.cols], "patch_size": config.patch_size,
              "frame_selector": ab.use_frame_selector, "patch_selector": ab.use_patch_selector},
    )


# -- persistence ---------------------------------------------------------------------

SIDECAR = "evidence.json"


def strip_digest(strip: np.ndarray) -> str:
    h = hashlib.sha256(f"{strip.shape}|{strip.dtype}".encode())
    h.update(np.ascontiguousarray(strip).tobytes())
    return h.hexdigest()


def save_bundle(bundle: EvidenceBundle, directory: str | os.PathLike, **extra) -> None:
    directory = Path(directory)
    names = []
    for m, strip in enumerate(bundle.strips):
        name = f"strip_{m:02d}.png"
        media.write_image(directory / name, strip)
        names.append(name)
    doc = {
        "sample_id": bundle.sample_id,
        "n_video_frames": bundle.n_video_frames,
        "sampled_frames": list(bundle.sampled_frames),
        "selected_frames": list(bundle.selected_frames),
        "selected_positions": list(bundle.selected_positions),
        "selected_patches": list(bundle.selected_patches),
        "strips": names,
        "strip_sha256": [strip_digest(s) for s in bundle.strips],
        "fallback_value": bundle.fallback_value if bundle.patch_scores else None,
        "frame_scores": bundle.frame_scores.to_dict() if bundle.frame_scores else None,
        "patch_scores": bundle.patch_scores.to_dict() if bundle.patch_scores else None,
        **bundle.meta,
        **extra,
    }
    jsonio.write_json(directory / SIDECAR, doc)


def load_bundle(directory: str | os.PathLike) -> EvidenceBundle:
    directory = Path(directory)
    doc = jsonio.read_json(directory / SIDECAR)
    strips = []
    for name, digest in zip(doc["strips"], doc["strip_sha256"]):
        strip = media.read_image(directory / name)
        if strip_digest(strip) != digest:
            raise DataError(f"{directory / name}: strip content does not match its sidecar digest")
        strips.append(strip)
    fs = doc.get("frame_scores")
    ps = doc.get("patch_scores")
    return EvidenceBundle(
        sample_id=doc["sample_id"],
        selected_frames=tuple(doc["selected_frames"]),
        selected_positions=tuple(doc["selected_positions"]),
        selected_patches=tuple(doc["selected_patches"]),
        strips=tuple(strips),
        patch_scores=PatchScores(tuple(tuple(r) for r in ps["g_pat"]), tuple(ps["u_pat"])) if ps else None,
        frame_scores=FrameScores(tuple(fs["g_frm"]), tuple(fs["c_frm"]), tuple(fs["u_frm"])) if fs else None,
        sampled_frames=tuple(doc["sampled_frames"]),
        n_video_frames=doc["n_video_frames"],
        meta={k: doc[k] for k in ("grid", "patch_size", "frame_selector", "patch_selector") if k in doc},
    )
