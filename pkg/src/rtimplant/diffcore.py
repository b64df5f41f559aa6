"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations needed by the inpainting network and the implant losses
are provided. Every op records a closure that pushes the upstream gradient to
its inputs; :meth:`Tensor.backward` replays them in reverse topological order.
Gradients of all ops are validated against central finite differences by
:func:`grad_check`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import kernels
from .errors import ContractViolation, NumericError, ParameterError, ShapeError


class Tensor:
    """An array value plus (optionally) an accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value)
        if not np.issubdtype(self.value.dtype, np.floating):
            self.value = self.value.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.value)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar tensor into every leaf that requires grad."""
        if self.value.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        # interior nodes hold transient grads; leaves accumulate across calls
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(np.ones_like(self.value))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(*ts: Tensor) -> None:
    for t in ts:
        if not np.all(np.isfinite(t.value)):
            raise NumericError("non-finite value in operand")


def _result(value: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    _check_finite(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.value + b.value, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    _check_finite(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))

    return _result(a.value - b.value, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    _check_finite(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape))

    return _result(a.value * b.value, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    _check_finite(a)
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return _result(a.value * a.value.dtype.type(c), (a,), backward)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    _check_finite(x)
    pos = x.value > 0
    factor = np.where(pos, 1.0, slope).astype(x.dtype)

    def backward(g):
        x._accumulate(g * factor)

    return _result(x.value * factor, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    _check_finite(x)
    half = x.dtype.type(0.5)
    y = half * (np.tanh(half * x.value) + 1)

    def backward(g):
        x._accumulate(g * y * (1 - y))

    return _result(y, (x,), backward)


def total(x) -> Tensor:
    x = as_tensor(x)
    _check_finite(x)

    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(np.asarray(x.value.sum()), (x,), backward)


# --- structural ------------------------------------------------------------

def concat_channels(*ts) -> Tensor:
    ts = tuple(as_tensor(t) for t in ts)
    if not ts:
        raise ShapeError("nothing to concatenate")
    ref = ts[0].shape
    for t in ts:
        if t.value.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: incompatible shapes {[t.shape for t in ts]}")
    _check_finite(*ts)
    bounds = np.cumsum([0] + [t.shape[1] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(g[:, lo:hi])

    return _result(np.concatenate([t.value for t in ts], axis=1), ts, backward)


def batch_item(x, i: int) -> Tensor:
    """Select sample ``i`` of a batched tensor, keeping the batch axis."""
    x = as_tensor(x)
    if not 0 <= i < x.shape[0]:
        raise ShapeError(f"batch index {i} out of range for shape {x.shape}")

    def backward(g):
        full = np.zeros_like(x.value)
        full[i:i + 1] = g
        x._accumulate(full)

    return _result(x.value[i:i + 1], (x,), backward)


def nearest_upsample2x(x) -> Tensor:
    x = as_tensor(x)
    if x.value.ndim != 4:
        raise ShapeError(f"nearest_upsample2x expects NCHW, got {x.shape}")
    _check_finite(x)
    n, c, h, w = x.shape

    def backward(g):
        x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _result(x.value.repeat(2, axis=2).repeat(2, axis=3), (x,), backward)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an (N, C, H, W) input with (F, C, kh, kw) filters."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.value.ndim != 4 or weight.value.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {cw}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({f},)")
    if stride < 1 or padding < 0:
        raise ParameterError("stride must be >= 1 and padding >= 0")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    parents = (x, weight) if bias is None else (x, weight, bias)
    _check_finite(*parents)

    dtype = np.result_type(x.value, weight.value)
    cols = kernels.im2col(x.value.astype(dtype, copy=False), kh, kw, stride, padding)
    wmat = weight.value.reshape(f, -1).astype(dtype, copy=False)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.value.astype(dtype, copy=False)
    value = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, f)
        if weight.requires_grad:
            weight._accumulate((gmat.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(gmat.sum(axis=0))
        if x.requires_grad:
            x._accumulate(kernels.col2im(gmat @ wmat, (n, c, h, w), kh, kw, stride, padding))

    return _result(np.ascontiguousarray(value), parents, backward)


# --- losses ----------------------------------------------------------------

def mse(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: {a.shape} vs {b.shape}")
    _check_finite(a, b)
    diff = a.value - b.value
    n = diff.size

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 2 * diff / n)
        if b.requires_grad:
            b._accumulate(-g * 2 * diff / n)

    return _result(np.asarray((diff * diff).sum() / n), (a, b), backward)


def masked_mse(a, b, mask) -> Tensor:
    """Mean squared error over the elements selected by ``mask``.

    ``mask`` broadcasts against ``a``; the denominator counts selected elements
    after broadcasting (so a 1-channel mask over RGB counts 3 per pixel). An
    empty mask yields 0 with zero gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    m = np.asarray(mask.value if isinstance(mask, Tensor) else mask, dtype=a.dtype)
    if a.shape != b.shape:
        raise ShapeError(f"masked_mse: {a.shape} vs {b.shape}")
    try:
        m = np.broadcast_to(m, a.shape)
    except ValueError as exc:
        raise ShapeError(f"masked_mse: mask {m.shape} does not broadcast to {a.shape}") from exc
    _check_finite(a, b)
    count = float(m.sum())
    diff = (a.value - b.value) * m
    denom = count if count > 0 else 1.0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 2 * diff / denom)
        if b.requires_grad:
            b._accumulate(-g * 2 * diff / denom)

    return _result(np.asarray((diff * diff).sum() / denom, dtype=a.dtype), (a, b), backward)


# --- parameters ------------------------------------------------------------

class ParamSet:
    """Named, ordered collection of trainable tensors."""

    def __init__(self, items: dict[str, np.ndarray] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, value in (items or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ParameterError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, copy=True), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def count(self) -> int:
        return sum(t.value.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def astype(self, dtype) -> ParamSet:
        return ParamSet({k: t.value.astype(dtype) for k, t in self._params.items()})

    def copy(self) -> ParamSet:
        return ParamSet({k: t.value for k, t in self._params.items()})

    def frozen(self) -> ParamSet:
        """Constant view sharing the same arrays; no parameter gradients are built."""
        out = ParamSet()
        for k, t in self._params.items():
            out._params[k] = Tensor(t.value)
        return out


# --- gradient checking -----------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_elements: int
    epsilon: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "max_abs_error": self.max_abs_error,
            "n_elements": self.n_elements,
            "epsilon": self.epsilon,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, epsilon: float = 1e-4,
               tolerance: float = 1e-3, floor: float = 1e-7) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``fn`` at ``x`` with central differences.

    The relative error of element i is ``|a_i - n_i| / max(|a_i|, |n_i|, floor)``;
    ``floor`` keeps exactly-zero gradients from dividing by zero.
    """
    if not 1e-6 <= epsilon <= 1e-2:
        raise ParameterError(f"epsilon {epsilon} outside [1e-6, 1e-2]")
    if x.dtype != np.float64:
        raise ParameterError("grad_check requires float64 inputs")

    base = x.value.copy()

    def evaluate(v: np.ndarray) -> float:
        return float(fn(Tensor(v)).value)

    f0 = evaluate(base)
    if evaluate(base) != f0:
        raise ContractViolation("function under check is not deterministic")

    probe = Tensor(base.copy(), requires_grad=True)
    out = fn(probe)
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = evaluate(base)
        flat[i] = orig - epsilon
        fm = evaluate(base)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2 * epsilon)

    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = float((abs_err / denom).max()) if abs_err.size else 0.0
    return GradCheckReport(
        max_rel_error=rel,
        max_abs_error=float(abs_err.max()) if abs_err.size else 0.0,
        n_elements=int(base.size),
        epsilon=epsilon,
        tolerance=tolerance,
        passed=rel < tolerance,
    )


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ParameterError("learning rate must be positive")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray | None]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            if g is None:
                continue
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
