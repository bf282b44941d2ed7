"""Minimal frame extraction and writing.

Supported containers:

* ``.npy`` -- uint8 array shaped (T, H, W, 3), RGB. Lossless; used by the
  synthetic corpus and tests.
* a directory of ``.png``/``.jpg`` frames, read in sorted filename order.
* anything OpenCV can decode (``.mp4``, ``.avi``, ...).

Frames are always yielded as RGB uint8 arrays.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DecodeError, StorageError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def _as_rgb(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 2:
        frame = np.repeat(frame[:, :, None], 3, axis=2)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DecodeError(f"unsupported frame shape {frame.shape}")
    if frame.dtype != np.uint8:
        raise DecodeError(f"frames must be uint8, got {frame.dtype}")
    return frame


def read_image(path: str | os.PathLike) -> np.ndarray:
    import cv2

    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DecodeError(f"cannot decode image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_image(path: str | os.PathLike, rgb: np.ndarray) -> bytes:
    """Write a lossless PNG and return the encoded bytes."""
    import cv2

    from .jsonio import atomic_write_bytes

    ok, buf = cv2.imencode(".png", cv2.cvtColor(_as_rgb(rgb), cv2.COLOR_RGB2BGR))
    if not ok:
        raise StorageError(f"cannot encode PNG for {path}")
    data = buf.tobytes()
    atomic_write_bytes(path, data)
    return data


def iter_frames(path: str | os.PathLike) -> Iterator[np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DecodeError(f"media not found: {path}")
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        for f in files:
            yield _as_rgb(read_image(f))
        return
    if path.suffix.lower() == ".npy":
        try:
            arr = np.load(path, mmap_mode="r", allow_pickle=False)
        except (ValueError, OSError) as exc:
            raise DecodeError(f"cannot load {path}: {exc}") from None
        if arr.ndim not in (3, 4):
            raise DecodeError(f"{path}: expected (T,H,W[,3]) array, got shape {arr.shape}")
        for frame in arr:
            yield _as_rgb(np.ascontiguousarray(frame))
        return
    yield from _iter_cv2(path)


def _iter_cv2(path: Path) -> Iterator[np.ndarray]:
    import cv2

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeError(f"cannot open video {path}")
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            yield cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
    finally:
        cap.release()


def read_frames(path: str | os.PathLike) -> np.ndarray:
    frames = list(iter_frames(path))
    if not frames:
        raise DecodeError(f"video has zero frames: {path}")
    return np.stack(frames)


def write_frames(path: str | os.PathLike, frames: Iterable[np.ndarray], fps: float = 25.0) -> None:
    path = Path(path)
    frames = [_as_rgb(np.asarray(f)) for f in frames]
    if not frames:
        raise StorageError("refusing to write an empty video")
    if path.suffix.lower() == ".npy":
        import io

        from .jsonio import atomic_write_bytes

        buf = io.BytesIO()
        np.save(buf, np.stack(frames), allow_pickle=False)
        atomic_write_bytes(path, buf.getvalue())
        return
    if path.suffix == "" or path.is_dir():
        path.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(frames):
            write_image(path / f"{i:06d}.png", f)
        return
    import cv2

    h, w = frames[0].shape[:2]
    path.parent.mkdir(parents=True, exist_ok=True)
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (w, h))
    if not writer.isOpened():
        raise StorageError(f"cannot open video writer for {path}")
    try:
        for f in frames:
            writer.write(cv2.cvtColor(f, cv2.COLOR_RGB2BGR))
    finally:
        writer.release()


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luma (BT.601 weights) as float64."""
    rgb = rgb.astype(np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
