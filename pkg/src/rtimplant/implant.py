"""Protective-noise optimisation that plants a region-triggered backdoor.

Given a trained inpainter and a trigger region, ``optimize`` searches for an
l-infinity bounded perturbation such that

* inpainting the trigger region collapses to a backdoor target (implant term),
* inpainting a random partial cover of the dilated trigger does too (incomplete term),
* inpainting the dilation ring *outside* the trigger matches the clean image's
  result (hide term).

All three losses are mean squared errors restricted to the edited region.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .errors import CheckpointError, OptimizationError, ParameterError, ShapeError
from .imagecore import check_image, check_mask, expand_mask, sample_incomplete, subtract_trigger
from .inpaintnet import InpaintModel, predict, predict_batch
from .synthtrain import derive_seed

log = logging.getLogger(__name__)

PRIMARIES = np.eye(3)  # red, green, blue
TARGET_MODES = ("pure_color", "inverted")
DELTA_MAGIC = b"MGDL"
DELTA_VERSION = 1


@dataclass(frozen=True)
class ProtectionSpec:
    trigger: np.ndarray
    epsilon: float = 6 / 255
    iterations: int = 20
    hide_weight: float = 2.0
    kernel_side: int = 7
    fraction: float = 0.5
    target_mode: str = "pure_color"
    seed: int = 0
    use_incomplete: bool = True
    use_hide: bool = True
    sample_mode: str = "bernoulli"

    def __post_init__(self):
        trig = check_mask(self.trigger)
        if not trig.any():
            raise ParameterError("trigger mask is empty")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ParameterError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.hide_weight < 0:
            raise ParameterError("hide_weight must be >= 0")
        if self.kernel_side < 1 or self.kernel_side % 2 == 0:
            raise ParameterError("kernel_side must be odd and >= 1")
        if not 0.0 <= self.fraction <= 1.0:
            raise ParameterError("fraction must lie in [0, 1]")
        if self.target_mode not in TARGET_MODES:
            raise ParameterError(f"target_mode must be one of {TARGET_MODES}")
        object.__setattr__(self, "trigger", trig)

    def expanded(self) -> np.ndarray:
        return expand_mask(self.trigger, self.kernel_side)

    def hide_region(self) -> np.ndarray:
        return subtract_trigger(self.expanded(), self.trigger)

    def incomplete_region(self, iter_seed: int) -> np.ndarray:
        return sample_incomplete(self.expanded(), self.fraction, iter_seed, self.sample_mode)


@dataclass(frozen=True)
class BackdoorTarget:
    image: np.ndarray
    mode: str


@dataclass(frozen=True)
class Perturbation:
    delta: np.ndarray  # float32, (C, H, W)
    epsilon: float


@dataclass(frozen=True)
class LossParts:
    total: float
    implant: float
    incomplete: float
    hide: float
    hide_empty: bool = False


@dataclass
class ImplantResult:
    perturbation: Perturbation
    trace: list[LossParts] = field(default_factory=list)


def make_target(x: np.ndarray, mode: str = "pure_color") -> BackdoorTarget:
    """Pure primary colour farthest from the image's mean colour, or the inverted image."""
    x = check_image(x)
    if mode == "inverted":
        return BackdoorTarget(1.0 - x, mode)
    if mode != "pure_color":
        raise ParameterError(f"unknown target mode {mode!r}")
    if x.shape[0] != 3:
        raise ShapeError("pure_color targets need an RGB image")
    mu = x.reshape(3, -1).mean(axis=1)
    dist = np.linalg.norm(mu[None, :] - PRIMARIES, axis=1)
    color = PRIMARIES[int(np.argmax(dist))]  # argmax keeps the first of tied maxima
    return BackdoorTarget(np.broadcast_to(color[:, None, None], x.shape).copy(), mode)


def _float32_bound(epsilon: float) -> np.float32:
    e = np.float32(epsilon)
    if float(e) > epsilon:
        e = np.nextafter(e, np.float32(0))
    return e


def total_loss(model: InpaintModel, x_clean: np.ndarray, x_prot, spec: ProtectionSpec,
               target: BackdoorTarget, iter_seed: int,
               hide_reference: np.ndarray | None = None) -> tuple[dc.Tensor, LossParts]:
    """Weighted sum of the implant, incomplete and hide losses for one iteration.

    ``x_prot`` may be a Tensor (to obtain gradients) or an array. Disabled terms
    are not evaluated at all and report 0.
    """
    xt = x_prot if isinstance(x_prot, dc.Tensor) else dc.Tensor(np.asarray(x_prot, dtype=model.dtype))
    if xt.value.ndim == 3:
        raise ShapeError("x_prot must carry a batch axis: (1, C, H, W)")
    dtype = xt.dtype
    trig = spec.trigger
    hide_mask = spec.hide_region()
    hide_empty = spec.use_hide and not hide_mask.any()
    if hide_empty:
        log.warning("hide region is empty; hide loss set to 0")

    masks = [trig]
    if spec.use_incomplete:
        masks.append(spec.incomplete_region(iter_seed))
    use_hide = spec.use_hide and not hide_empty
    if use_hide:
        masks.append(hide_mask)
        if hide_reference is None:
            hide_reference = predict(model, x_clean, hide_mask)

    batch = dc.mul(xt, np.ones((len(masks), 1, 1, 1), dtype=dtype))
    out = predict_batch(model, batch, np.stack(masks).astype(dtype))
    phi = target.image[None].astype(dtype)

    l_imp = dc.masked_mse(dc.batch_item(out, 0), phi, trig[None, None])
    loss = l_imp
    l_inc_v = l_hide_v = 0.0
    k = 1
    if spec.use_incomplete:
        l_inc = dc.masked_mse(dc.batch_item(out, k), phi, masks[k][None, None])
        loss = dc.add(loss, l_inc)
        l_inc_v = l_inc.item()
        k += 1
    if use_hide:
        ref = np.asarray(hide_reference)[None].astype(dtype)
        l_hide = dc.masked_mse(dc.batch_item(out, k), ref, hide_mask[None, None])
        loss = dc.add(loss, dc.scale(l_hide, spec.hide_weight))
        l_hide_v = l_hide.item()
    parts = LossParts(loss.item(), l_imp.item(), l_inc_v, l_hide_v, hide_empty)
    return loss, parts


def optimize(model: InpaintModel, x: np.ndarray, spec: ProtectionSpec) -> ImplantResult:
    """Projected Adam on the perturbation, learning rate epsilon / 4."""
    x = check_image(x)
    check_mask(spec.trigger, like=x)
    if not model.trained:
        log.warning("optimizing against an untrained model")
    frozen = model.frozen()
    target = make_target(x, spec.target_mode)
    eps32 = _float32_bound(spec.epsilon)
    delta = np.zeros(x.shape, dtype=np.float32)
    trace: list[LossParts] = []
    hide_mask = spec.hide_region()
    hide_ref = predict(frozen, x, hide_mask) if (spec.use_hide and hide_mask.any()) else None
    opt = dc.Adam([delta], lr=spec.epsilon / 4) if spec.epsilon > 0 else None

    for k in range(1, spec.iterations + 1):
        x_prot = np.clip(x + delta, 0.0, 1.0)
        xt = dc.Tensor(x_prot[None].astype(frozen.dtype), requires_grad=True)
        loss, parts = total_loss(frozen, x, xt, spec, target, derive_seed(spec.seed, k), hide_ref)
        if not np.isfinite(parts.total):
            raise OptimizationError(f"non-finite loss at iteration {k}")
        trace.append(parts)
        if opt is None:
            continue
        loss.backward()
        opt.step([xt.grad[0].astype(np.float32)])
        # project onto the epsilon-ball, then keep x + delta inside [0, 1]
        np.clip(delta, -eps32, eps32, out=delta)
        delta[:] = np.clip(np.clip(x + delta, 0.0, 1.0) - x, -eps32, eps32)
    return ImplantResult(Perturbation(delta, spec.epsilon), trace)


def apply(x: np.ndarray, p: Perturbation) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != p.delta.shape:
        raise ShapeError(f"perturbation {p.delta.shape} does not match image {x.shape}")
    return np.clip(x + p.delta.astype(np.float64), 0.0, 1.0)


def save_delta(delta: np.ndarray, path) -> None:
    """Write ``delta`` as 16-byte header ("MGDL", version, H, W) + float32 payload."""
    delta = np.asarray(delta)
    if delta.ndim != 3:
        raise ShapeError("delta must be (C, H, W)")
    _, h, w = delta.shape
    header = DELTA_MAGIC + struct.pack("<III", DELTA_VERSION, h, w)
    Path(path).write_bytes(header + np.ascontiguousarray(delta, dtype="<f4").tobytes())


def load_delta(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != DELTA_MAGIC:
        raise CheckpointError(f"{path}: bad delta magic")
    version, h, w = struct.unpack_from("<III", data, 4)
    if version != DELTA_VERSION:
        raise CheckpointError(f"{path}: unsupported delta version {version}")
    payload = len(data) - 16
    if h == 0 or w == 0 or payload % (4 * h * w):
        raise CheckpointError(f"{path}: truncated delta payload")
    c = payload // (4 * h * w)
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(c, h, w).astype(np.float32)


def delta_path(image_path) -> Path:
    return Path(image_path).with_suffix(".delta")
