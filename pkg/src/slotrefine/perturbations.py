"""Frame-wise corruptions for robustness runs: inversion, noise, blur, compression."""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError, DecodeError

KINDS = ("inversion", "noise", "blur", "compress")


def _max_value(frames: np.ndarray) -> float:
    if np.issubdtype(frames.dtype, np.integer):
        return float(np.iinfo(frames.dtype).max)
    return 1.0


def invert(frames: np.ndarray) -> np.ndarray:
    """Pixel-value inversion ``v -> max - v`` on every channel."""
    if np.issubdtype(frames.dtype, np.integer):
        return (np.iinfo(frames.dtype).max - frames).astype(frames.dtype)
    return 1.0 - frames


def _requantize(x: np.ndarray, like: np.ndarray) -> np.ndarray:
    if np.issubdtype(like.dtype, np.integer):
        info = np.iinfo(like.dtype)
        return np.clip(np.rint(x), info.min, info.max).astype(like.dtype)
    return np.clip(x, 0.0, 1.0).astype(like.dtype)


def add_noise(frames: np.ndarray, sigma: float = 0.05, seed: int = 0) -> np.ndarray:
    """Zero-mean Gaussian noise; ``sigma`` is a fraction of the dynamic range."""
    if sigma < 0:
        raise DataError("noise sigma must be non-negative")
    if sigma == 0:
        return frames.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma * _max_value(frames), size=frames.shape)
    return _requantize(frames.astype(np.float64) + noise, frames)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size <= 0 or size % 2 == 0:
        raise DataError("blur kernel size must be a positive odd integer")
    half = size // 2
    w = np.array([math.exp(-(i * i) / (2.0 * sigma * sigma)) for i in range(-half, half + 1)])
    return w / w.sum()


def blur(frames: np.ndarray, size: int = 7, sigma: float = 2.0) -> np.ndarray:
    """Separable Gaussian blur over H and W with reflected borders."""
    k = gaussian_kernel(size, sigma)
    half = size // 2
    x = frames.astype(np.float64)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    for axis in (1, 2):
        pad = [(0, 0)] * x.ndim
        pad[axis] = (half, half)
        xp = np.pad(x, pad, mode="reflect" if x.shape[axis] > half else "edge")
        acc = np.zeros_like(x)
        n = x.shape[axis]
        for i, w in enumerate(k):
            acc += w * np.take(xp, np.arange(i, i + n), axis=axis)
        x = acc
    if squeeze:
        x = x[0]
    return _requantize(x, frames)


def compress(frames: np.ndarray, quality: int = 30) -> np.ndarray:
    """Lossy JPEG round trip of each frame."""
    import cv2

    if frames.dtype != np.uint8:
        raise DataError("compression requires uint8 frames")
    out = []
    for f in frames:
        ok, buf = cv2.imencode(".jpg", cv2.cvtColor(f, cv2.COLOR_RGB2BGR),
                               [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
        if not ok:
            raise DecodeError("JPEG encode failed")
        dec = cv2.imdecode(buf, cv2.IMREAD_COLOR)
        if dec is None:
            raise DecodeError("JPEG decode failed")
        out.append(cv2.cvtColor(dec, cv2.COLOR_BGR2RGB))
    return np.stack(out)


def perturb(frames: np.ndarray, kind: str, *, sigma: float = 0.05, kernel: int = 7,
            blur_sigma: float = 2.0, quality: int = 30, seed: int = 0) -> np.ndarray:
    """Apply one corruption to a (T, H, W, 3) frame stack."""
    frames = np.asarray(frames)
    if kind == "inversion":
        return invert(frames)
    if kind == "noise":
        return add_noise(frames, sigma, seed)
    if kind == "blur":
        return blur(frames, kernel, blur_sigma)
    if kind == "compress":
        return compress(frames, quality)
    raise DataError(f"unknown perturbation {kind!r}; choose from {KINDS}")


def params_from_config(kind: str, pc) -> dict:
    """The parameters a given kind actually uses, for embedding in reports."""
    return {
        "inversion": {},
        "noise": {"sigma": pc.noise_sigma, "seed": pc.seed},
        "blur": {"kernel": pc.blur_kernel, "blur_sigma": pc.blur_sigma},
        "compress": {"quality": pc.jpeg_quality},
    }[kind]
