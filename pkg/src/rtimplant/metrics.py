"""PSNR, SSIM and an encoder-feature distance, optionally restricted to a region."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    region: str  # "full" or "mask"
    pixels: int
    warning: str | None = None

    def __float__(self) -> float:
        return self.value


def _region(region, shape: tuple[int, int]) -> tuple[np.ndarray, str]:
    if region is None:
        return np.ones(shape, dtype=bool), "full"
    r = np.asarray(region)
    if r.ndim == 3 and r.shape[0] == 1:
        r = r[0]
    if r.shape != shape:
        raise ShapeError(f"region {r.shape} does not match image {shape}")
    r = r.astype(bool)
    if not r.any():
        raise ParameterError("metric region is empty")
    return r, "mask"


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeError(f"metric operands must be matching (C, H, W), got {a.shape} and {b.shape}")
    return a, b


def psnr(a, b, region=None) -> MetricValue:
    a, b = _pair(a, b)
    r, kind = _region(region, a.shape[1:])
    mse = float(((a - b) ** 2)[:, r].mean())
    value = PSNR_CAP if mse < 1e-10 else min(PSNR_CAP, 10 * np.log10(1.0 / mse))
    return MetricValue("psnr", float(value), kind, int(r.sum()))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    pad = len(g) // 2
    p = np.pad(img, pad, mode="reflect")
    h, w = img.shape
    rows = sum(g[k] * p[k:k + h, :] for k in range(len(g)))
    return sum(g[k] * rows[:, k:k + w] for k in range(len(g)))


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM of the channel-mean luminance (reflect padding at borders)."""
    a, b = _pair(a, b)
    if min(a.shape[1:]) < SSIM_WINDOW:
        raise ShapeError(f"image side must be >= {SSIM_WINDOW} for SSIM")
    x, y = a.mean(axis=0), b.mean(axis=0)
    g = gaussian_window()
    mx, my = _filter(x, g), _filter(y, g)
    sxx = _filter(x * x, g) - mx * mx
    syy = _filter(y * y, g) - my * my
    sxy = _filter(x * y, g) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(a, b, region=None) -> MetricValue:
    a, b = _pair(a, b)
    r, kind = _region(region, a.shape[1:])
    if np.array_equal(a, b):
        return MetricValue("ssim", 1.0, kind, int(r.sum()))
    value = float(np.clip(ssim_map(a, b)[r].mean(), -1.0, 1.0))
    return MetricValue("ssim", value, kind, int(r.sum()))


def featdist(model, a, b, region=None) -> MetricValue:
    """RMS distance between the model's bottleneck activations of ``a`` and ``b``.

    Both inputs are zeroed outside ``region`` and fed with an empty mask plane.
    This is a cheap perceptual proxy, not LPIPS.
    """
    from .inpaintnet import encode

    a, b = _pair(a, b)
    r, kind = _region(region, a.shape[1:])
    if np.array_equal(a, b):
        fa = fb = np.zeros(1)
    else:
        keep = r.astype(np.float64)
        batch = np.stack([a * keep, b * keep]).astype(model.dtype)
        feats = encode(model, batch, np.zeros((2,) + a.shape[1:])).value.astype(np.float64)
        fa, fb = feats[0], feats[1]
    value = float(np.sqrt(np.mean((fa - fb) ** 2)))
    warning = None if model.trained else "untrained model"
    return MetricValue("featdist", value, kind, int(r.sum()), warning)
