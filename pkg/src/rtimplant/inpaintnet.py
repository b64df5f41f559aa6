"""Encoder-decoder inpainting network and its checkpoint format.

Topology at width multiplier ``w`` (all kernels 3x3, leaky-ReLU slope 0.2)::

    concat(x * (1 - m), m)          4 channels, H x W
    enc1  stride-2 conv             16w, H/2
    enc2  stride-2 conv             32w, H/4
    mid1, mid2  conv                32w, H/4
    dec1  upsample x2 + conv        16w, H/2
    dec2  upsample x2 + conv        3,   H      -> sigmoid

The network prediction is spliced into the masked area only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import ParamSet, Tensor
from .errors import CheckpointError, ParameterError, ShapeError

IMAGE_CHANNELS = 3
LEAK = 0.2
CKPT_MAGIC = b"MGCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    name: str
    c_in: int
    c_out: int
    stride: int = 1
    upsample: bool = False
    kernel: int = 3


def architecture(width_multiplier: int = 1) -> list[LayerSpec]:
    w = width_multiplier
    return [
        LayerSpec("enc1", IMAGE_CHANNELS + 1, 16 * w, stride=2),
        LayerSpec("enc2", 16 * w, 32 * w, stride=2),
        LayerSpec("mid1", 32 * w, 32 * w),
        LayerSpec("mid2", 32 * w, 32 * w),
        LayerSpec("dec1", 32 * w, 16 * w, upsample=True),
        LayerSpec("dec2", 16 * w, IMAGE_CHANNELS, upsample=True),
    ]


BOTTLENECK = "mid2"


@dataclass
class InpaintModel:
    params: ParamSet
    width_multiplier: int = 1
    train_steps: int = 0
    layers: list[LayerSpec] = field(init=False)

    def __post_init__(self):
        self.layers = architecture(self.width_multiplier)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def trained(self) -> bool:
        return self.train_steps > 0

    def astype(self, dtype) -> InpaintModel:
        return InpaintModel(self.params.astype(dtype), self.width_multiplier, self.train_steps)

    def copy(self) -> InpaintModel:
        return InpaintModel(self.params.copy(), self.width_multiplier, self.train_steps)

    def frozen(self) -> InpaintModel:
        return InpaintModel(self.params.frozen(), self.width_multiplier, self.train_steps)

    def param_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(t.value, dtype="<f4").tobytes()
                        for t in self.params.values())


def init_model(seed: int = 0, width_multiplier: int = 1) -> InpaintModel:
    if width_multiplier < 1:
        raise ParameterError("width_multiplier must be >= 1")
    rng = np.random.default_rng(np.uint64(seed))
    params = ParamSet()
    for layer in architecture(width_multiplier):
        fan_in = layer.c_in * layer.kernel * layer.kernel
        bound = np.sqrt(6.0 / ((1 + LEAK**2) * fan_in))
        shape = (layer.c_out, layer.c_in, layer.kernel, layer.kernel)
        params.add(f"{layer.name}.weight", rng.uniform(-bound, bound, shape).astype(np.float32))
        params.add(f"{layer.name}.bias", np.zeros(layer.c_out, dtype=np.float32))
    return InpaintModel(params, width_multiplier)


def _as_batch(x, m, dtype) -> tuple[Tensor, np.ndarray]:
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))
    if xt.value.ndim == 3:
        raise ShapeError("batched helpers expect (N, C, H, W); use predict() for single images")
    m = np.asarray(m, dtype=xt.dtype)
    if m.ndim == 2:
        m = m[None, None]
    elif m.ndim == 3:
        m = m[:, None]
    n, c, h, w = xt.shape
    if c != IMAGE_CHANNELS:
        raise ShapeError(f"expected {IMAGE_CHANNELS} image channels, got {c}")
    if m.shape[1:] != (1, h, w) or m.shape[0] not in (1, n):
        raise ShapeError(f"mask {m.shape} incompatible with images {xt.shape}")
    if h % 4 or w % 4:
        raise ShapeError(f"image sides must be divisible by 4, got {h}x{w}")
    if m.shape[0] != n:
        m = np.broadcast_to(m, (n, 1, h, w))
    return xt, np.ascontiguousarray(m)


def _run_layers(model: InpaintModel, h: Tensor, stop_after: str | None = None) -> Tensor:
    p = model.params
    for layer in model.layers:
        if layer.upsample:
            h = dc.nearest_upsample2x(h)
        h = dc.conv2d(h, p[f"{layer.name}.weight"], p[f"{layer.name}.bias"],
                      stride=layer.stride, padding=layer.kernel // 2)
        if layer.name == stop_after:
            return dc.leaky_relu(h, LEAK)
        if layer is not model.layers[-1]:
            h = dc.leaky_relu(h, LEAK)
    return dc.sigmoid(h)


def generate(model: InpaintModel, x, m) -> Tensor:
    """Raw network output G(x, m) for a batch, before compositing."""
    xt, mb = _as_batch(x, m, model.dtype)
    hidden = dc.mul(xt, 1 - mb)
    return _run_layers(model, dc.concat_channels(hidden, mb))


def predict_batch(model: InpaintModel, x, m) -> Tensor:
    """Composited result m * G + (1 - m) * x, differentiable w.r.t. x and params."""
    xt, mb = _as_batch(x, m, model.dtype)
    g = _run_layers(model, dc.concat_channels(dc.mul(xt, 1 - mb), mb))
    return dc.add(dc.mul(g, mb), dc.mul(xt, 1 - mb))


def predict(model: InpaintModel, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Inpaint a single (C, H, W) image; returns a float64 image."""
    x = np.asarray(x)
    m = np.asarray(m)
    if x.ndim != 3:
        raise ShapeError(f"predict expects (C, H, W), got {x.shape}")
    if m.shape != x.shape[1:]:
        raise ShapeError(f"mask {m.shape} does not match image {x.shape}")
    out = predict_batch(model, x[None].astype(model.dtype), m).value[0]
    # exact passthrough outside the mask, independent of network precision
    return np.where(m.astype(bool), out.astype(np.float64), x)


def encode(model: InpaintModel, x, m) -> Tensor:
    """Bottleneck activations for a batch."""
    xt, mb = _as_batch(x, m, model.dtype)
    inp = dc.concat_channels(dc.mul(xt, 1 - mb), mb)
    return _run_layers(model, inp, stop_after=BOTTLENECK)


# --- checkpoints -----------------------------------------------------------
# Layout (little-endian):
#   "MGCK" | version u32 | width u32 | train_steps u32 | n_entries u32
#   per entry: name_len u16 | name utf-8 | ndim u8 | dims u32*ndim | offset u64
#   payload: float32 values, offsets counted in elements

def save_model(model: InpaintModel, path) -> None:
    header = bytearray(CKPT_MAGIC)
    header += struct.pack("<IIII", CKPT_VERSION, model.width_multiplier,
                          model.train_steps, len(model.params))
    offset = 0
    payload = []
    for name, t in model.params.items():
        raw = name.encode()
        header += struct.pack("<H", len(raw)) + raw
        header += struct.pack("<B", t.value.ndim)
        header += struct.pack(f"<{t.value.ndim}I", *t.value.shape)
        header += struct.pack("<Q", offset)
        payload.append(np.ascontiguousarray(t.value, dtype="<f4").tobytes())
        offset += t.value.size
    Path(path).write_bytes(bytes(header) + b"".join(payload))


def load_model(path) -> InpaintModel:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, width, steps, n_entries = struct.unpack_from("<IIII", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} "
                              f"(reader understands {CKPT_VERSION})")
    pos = 20
    table = []
    try:
        for _ in range(n_entries):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            (offset,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            table.append((name, dims, offset))
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated layer table") from exc
    payload = np.frombuffer(data, dtype="<f4", offset=pos) if len(data) > pos else np.zeros(0, "<f4")
    if (len(data) - pos) % 4:
        raise CheckpointError(f"{path}: truncated payload")
    params = ParamSet()
    for name, dims, offset in table:
        size = int(np.prod(dims))
        if offset + size > payload.size:
            raise CheckpointError(f"{path}: truncated payload for {name}")
        params.add(name, payload[offset:offset + size].reshape(dims).astype(np.float32))
    model = InpaintModel(params, width, steps)
    expected = {f"{l.name}.{k}" for l in model.layers for k in ("weight", "bias")}
    if set(params) != expected:
        raise CheckpointError(f"{path}: layer table does not match architecture")
    return model
