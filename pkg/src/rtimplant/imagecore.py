"""Images, binary masks, compositing and the trigger-mask algebra.

Images are float arrays of shape (C, H, W) with values in [0, 1]. Masks are
float arrays of shape (H, W) holding exactly 0.0 or 1.0; a 1 marks a pixel to
be repainted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import ParameterError, ShapeError

MASK_THRESHOLD = 128


def check_image(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ShapeError(f"image must be (C, H, W) with positive sizes, got {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        raise ParameterError(f"image must be floating point, got {x.dtype}")
    if np.any(~np.isfinite(x)) or x.min() < 0 or x.max() > 1:
        raise ParameterError("image values must lie in [0, 1]")
    return x


def check_mask(m: np.ndarray, like: np.ndarray | None = None) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim == 3 and m.shape[0] == 1:
        m = m[0]
    if m.ndim != 2 or min(m.shape) < 1:
        raise ShapeError(f"mask must be (H, W), got {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ParameterError("mask values must be exactly 0 or 1")
    if like is not None and m.shape != like.shape[-2:]:
        raise ShapeError(f"mask {m.shape} does not match image {like.shape[-2:]}")
    return m.astype(np.float64, copy=False)


def composite(pred: np.ndarray, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Take ``pred`` inside the mask and ``x`` outside it."""
    pred, x = np.asarray(pred), np.asarray(x)
    if pred.shape != x.shape:
        raise ShapeError(f"prediction {pred.shape} vs image {x.shape}")
    m = check_mask(m, like=x)
    return np.where(m.astype(bool), pred, x)


def centered_square(size: int, side: int) -> np.ndarray:
    """Square trigger of ``side`` pixels centred in a ``size``x``size`` frame."""
    if not 0 < side <= size:
        raise ParameterError(f"side {side} must lie in (0, {size}]")
    m = np.zeros((size, size))
    lo = (size - side) // 2
    m[lo:lo + side, lo:lo + side] = 1.0
    return m


def expand_mask(m: np.ndarray, kernel_side: int = 7) -> np.ndarray:
    """Dilate by convolving with an all-ones square kernel and thresholding at > 0."""
    if kernel_side < 1 or kernel_side % 2 == 0:
        raise ParameterError(f"kernel_side must be odd and >= 1, got {kernel_side}")
    m = check_mask(m)
    pad = (kernel_side - 1) // 2
    h, w = m.shape
    cols = kernels.im2col(m[None, None], kernel_side, kernel_side, 1, pad)
    counts = cols.sum(axis=1).reshape(h, w)
    return (counts > 0).astype(np.float64)


def subtract_trigger(e: np.ndarray, t: np.ndarray) -> np.ndarray:
    e, t = check_mask(e), check_mask(t)
    if e.shape != t.shape:
        raise ShapeError(f"mask shapes differ: {e.shape} vs {t.shape}")
    return np.clip(e - t, 0.0, 1.0)


def sample_incomplete(e: np.ndarray, fraction: float = 0.5, seed: int = 0,
                      mode: str = "bernoulli") -> np.ndarray:
    """Keep a random subset of the mask's pixels.

    ``bernoulli`` keeps each pixel independently with probability ``fraction``.
    ``halfplane`` keeps the pixels on one side of a random line through the
    mask centroid, with the offset chosen so that ``fraction`` of them survive.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    e = check_mask(e)
    rng = np.random.default_rng(np.uint64(seed))
    if mode == "bernoulli":
        keep = rng.random(e.shape) < fraction
        return np.where(keep, e, 0.0)
    if mode == "halfplane":
        ys, xs = np.nonzero(e)
        out = np.zeros_like(e)
        if ys.size == 0:
            return out
        theta = rng.uniform(0, 2 * np.pi)
        proj = (ys - ys.mean()) * np.sin(theta) + (xs - xs.mean()) * np.cos(theta)
        k = int(round(fraction * ys.size))
        order = np.argsort(proj, kind="stable")[:k]
        out[ys[order], xs[order]] = 1.0
        return out
    raise ParameterError(f"unknown sampling mode {mode!r}")


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Quantize a (C, H, W) image to HWC uint8 with round-half-up."""
    return np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8).transpose(1, 2, 0)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "F"):
            raise ParameterError(f"unsupported bit depth ({im.mode}) in {path}")
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def save_image(img: np.ndarray, path) -> None:
    img = check_image(img)
    data = to_bytes(img)
    if data.shape[2] == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(data, mode="RGB").save(path)


def load_mask(path, threshold: int = MASK_THRESHOLD) -> np.ndarray:
    with Image.open(path) as im:
        lum = np.asarray(im.convert("L"), dtype=np.uint8)
    return (lum >= threshold).astype(np.float64)


def save_mask(m: np.ndarray, path) -> None:
    m = check_mask(m)
    Image.fromarray((m * 255).astype(np.uint8), mode="L").save(path)


def ensure_path(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p
