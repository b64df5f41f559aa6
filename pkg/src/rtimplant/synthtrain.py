"""Procedural scenes, rectangular training masks and reconstruction training."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import metrics
from .errors import ParameterError, TrainingError
from .inpaintnet import InpaintModel, predict, predict_batch

log = logging.getLogger(__name__)

SUPERSAMPLE = 4
MANIFEST_VERSION = 1

DEFAULT_PALETTE: tuple[tuple[float, float, float], ...] = (
    (0.90, 0.20, 0.15), (0.95, 0.65, 0.10), (0.95, 0.90, 0.30), (0.25, 0.70, 0.30),
    (0.10, 0.45, 0.30), (0.20, 0.55, 0.85), (0.15, 0.20, 0.55), (0.55, 0.30, 0.70),
    (0.60, 0.40, 0.25), (0.85, 0.85, 0.80), (0.30, 0.30, 0.32), (0.95, 0.55, 0.65),
)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    size: int = 64
    shape_count: tuple[int, int] = (2, 6)
    palette: tuple[tuple[float, float, float], ...] = DEFAULT_PALETTE
    background: str | None = None  # "flat", "gradient", or None to draw from the seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape_count"] = list(self.shape_count)
        d["palette"] = [list(c) for c in self.palette]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        kw = dict(d)
        if "shape_count" in kw:
            kw["shape_count"] = tuple(kw["shape_count"])
        if "palette" in kw:
            kw["palette"] = tuple(tuple(float(v) for v in c) for c in kw["palette"])
        return cls(**kw)


def _jitter(rng, color, amount=0.08) -> np.ndarray:
    return np.clip(np.asarray(color) + rng.uniform(-amount, amount, 3), 0.0, 1.0)


def _paint(canvas: np.ndarray, cover: np.ndarray, color: np.ndarray) -> None:
    canvas *= 1 - cover
    canvas += cover * color[:, None, None]


def _glyph(rng, canvas_size: int, cell: int) -> np.ndarray:
    """Mirror-symmetric 5x5 bit pattern on a 5*cell square, as a coverage map."""
    bits = rng.random((5, 3)) < 0.5
    bits[2, 1] = True
    full = np.concatenate([bits, bits[:, 1::-1]], axis=1)
    return np.kron(full, np.ones((cell, cell))).astype(np.float64)


def generate_scene(spec: SceneSpec) -> np.ndarray:
    """Background, a few anti-aliased rectangles/disks, and a centred logo glyph."""
    size = spec.size
    if size % 4 or size < 16:
        raise ParameterError(f"scene size must be a multiple of 4 and >= 16, got {size}")
    lo, hi = spec.shape_count
    if not 0 <= lo <= hi:
        raise ParameterError(f"bad shape count range {spec.shape_count}")
    rng = np.random.default_rng(np.uint64(spec.seed))
    s = size * SUPERSAMPLE
    palette = np.asarray(spec.palette, dtype=np.float64)
    yy, xx = np.mgrid[0:s, 0:s] + 0.5

    mode = spec.background or ("flat" if rng.random() < 0.5 else "gradient")
    c0 = _jitter(rng, palette[rng.integers(len(palette))])
    canvas = np.empty((3, s, s))
    if mode == "flat":
        canvas[:] = c0[:, None, None]
    elif mode == "gradient":
        c1 = _jitter(rng, palette[rng.integers(len(palette))])
        theta = rng.uniform(0, 2 * np.pi)
        t = ((yy - s / 2) * np.sin(theta) + (xx - s / 2) * np.cos(theta)) / s + 0.5
        t = np.clip(t, 0, 1)
        canvas[:] = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    else:
        raise ParameterError(f"unknown background mode {mode!r}")

    for _ in range(int(rng.integers(lo, hi + 1))):
        color = _jitter(rng, palette[rng.integers(len(palette))])
        if rng.random() < 0.5:
            h, w = rng.uniform(0.15, 0.5, 2) * s
            y0, x0 = rng.uniform(-0.1, 1.0, 2) * s - np.array([h, w]) / 2
            cover = ((yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)).astype(np.float64)
        else:
            r = rng.uniform(0.08, 0.25) * s
            cy, cx = rng.uniform(0, 1, 2) * s
            cover = (((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r).astype(np.float64)
        _paint(canvas, cover, color)

    # logo: contrasting plate and glyph filling the central quarter
    side = size // 4 * SUPERSAMPLE
    cell = max(1, (side * 3 // 4) // 5)
    glyph = _glyph(rng, s, cell)
    plate = _jitter(rng, palette[rng.integers(len(palette))], 0.05)
    ink = np.where(plate.mean() > 0.5, 0.05, 0.95) * np.ones(3)
    lo_px = (s - side) // 2
    cover = np.zeros((s, s))
    cover[lo_px:lo_px + side, lo_px:lo_px + side] = 1.0
    _paint(canvas, cover, plate)
    g0 = (s - glyph.shape[0]) // 2
    ink_cover = np.zeros((s, s))
    ink_cover[g0:g0 + glyph.shape[0], g0:g0 + glyph.shape[1]] = glyph
    _paint(canvas, ink_cover, ink)

    img = canvas.reshape(3, size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(2, 4))
    return np.clip(img, 0.0, 1.0)


def _rect_sides(area: float, size: int, aspect: float) -> tuple[int, int]:
    """Integer sides whose product is as close to ``area`` as the frame allows."""
    tol = 1.0
    while True:
        cands = []
        for h in range(1, size + 1):
            for w in (int(np.floor(area / h)), int(np.ceil(area / h))):
                if 1 <= w <= size and abs(h * w - area) < tol:
                    cands.append((h, w))
        if cands:
            return min(cands, key=lambda hw: (abs(np.log(hw[0] / hw[1]) - np.log(aspect)), hw))
        tol *= 2


def random_rect_mask(seed: int, size: int, coverage: tuple[float, float]) -> np.ndarray:
    """One axis-aligned rectangle covering a uniform-random fraction of the frame."""
    lo, hi = coverage
    if not 0 < lo <= hi < 1:
        raise ParameterError(f"coverage must satisfy 0 < lo <= hi < 1, got {coverage}")
    rng = np.random.default_rng(np.uint64(seed))
    frac = rng.uniform(lo, hi)
    aspect = float(np.exp(rng.uniform(np.log(0.5), np.log(2.0))))
    h, w = _rect_sides(frac * size * size, size, aspect)
    y0 = int(rng.integers(0, size - h + 1))
    x0 = int(rng.integers(0, size - w + 1))
    m = np.zeros((size, size))
    m[y0:y0 + h, x0:x0 + w] = 1.0
    return m


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# --- dataset manifest ------------------------------------------------------

def make_manifest(n_scenes: int, base_seed: int = 0, size: int = 64) -> dict:
    return {
        "schema_version": MANIFEST_VERSION,
        "scenes": [{"seed": derive_seed(base_seed, i), "size": size} for i in range(n_scenes)],
    }


def write_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def read_manifest(path) -> dict:
    manifest = json.loads(Path(path).read_text())
    if manifest.get("schema_version") != MANIFEST_VERSION:
        raise ParameterError(f"{path}: unsupported manifest schema_version")
    return manifest


def scene_specs(manifest: dict) -> list[SceneSpec]:
    return [SceneSpec.from_dict(entry) for entry in manifest["scenes"]]


def load_dataset(manifest: dict) -> list[np.ndarray]:
    return [generate_scene(s) for s in scene_specs(manifest)]


# --- training --------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 2e-3
    coverage: tuple[float, float] = (0.02, 0.12)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.coverage
        if not 0 < lo <= hi < 1:
            raise ParameterError(f"coverage must satisfy 0 < lo <= hi < 1, got {self.coverage}")
        if self.learning_rate <= 0:
            raise ParameterError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainResult:
    model: InpaintModel
    loss_trace: list[float] = field(default_factory=list)


def train(model: InpaintModel, scenes, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Minimise full-image MSE between each scene and its inpainted version.

    Returns a new model; ``model`` itself is left untouched. Outside the mask the
    composited output equals the input, so this is the masked-region error.
    """
    scenes = [np.asarray(s) for s in scenes]
    if not scenes:
        raise ParameterError("training dataset is empty")
    out = model.copy()
    data = np.stack(scenes).astype(out.dtype)
    size = data.shape[-1]
    params = list(out.params.values())
    opt = dc.Adam([p.value for p in params], lr=cfg.learning_rate)
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, epoch)).permutation(len(data))
        losses = []
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            masks = np.stack([
                random_rect_mask(derive_seed(cfg.seed, epoch, step, j), size, cfg.coverage)
                for j in range(len(idx))
            ])
            x = data[idx]
            out.params.zero_grad()
            loss = dc.mse(predict_batch(out, x, masks), dc.Tensor(x))
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            loss.backward()
            opt.step([p.grad for p in params])
            out.train_steps += 1
            losses.append(value)
        mean = float(np.mean(losses))
        if not np.isfinite(mean):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        trace.append(mean)
        log.info("epoch %d loss %.6f", epoch, mean)
    return TrainResult(out, trace)


def evaluate_recon(model: InpaintModel, scenes, seed: int = 0,
                   coverage: tuple[float, float] = TrainConfig.coverage) -> dict[str, float]:
    """Mean masked-region PSNR/SSIM of inpainting random rectangles."""
    scenes = list(scenes)
    if not scenes:
        raise ParameterError("evaluation dataset is empty")
    ps, ss = [], []
    for i, x in enumerate(scenes):
        m = random_rect_mask(derive_seed(seed, i), x.shape[-1], coverage)
        r = predict(model, x, m)
        ps.append(metrics.psnr(r, x, m).value)
        ss.append(metrics.ssim(r, x, m).value)
    return {"psnr_mean": float(np.mean(ps)), "ssim_mean": float(np.mean(ss)), "count": len(scenes)}
