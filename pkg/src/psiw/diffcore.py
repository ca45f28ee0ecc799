"""Reverse-mode differentiation surface used by training and fitting.

Tensors, graph construction and the backward sweep are provided by torch
(CPU, float64 by default, define-by-run).  This module pins the pieces the
rest of the package relies on: shape-checked primitive ops, a scalar-only
``backward`` that returns zero gradients for unreachable parameters, a
hand-written Adam step that refuses non-finite gradients, a central
finite-difference checker, and the PSIW checkpoint format.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from psiw._binary import FormatError, Reader, Writer

DTYPE = torch.float64
LEAKY_SLOPE = 0.01
CHECKPOINT_MAGIC = b"PSIW"
CHECKPOINT_VERSION = 1

Tensor = torch.Tensor


class ShapeError(ValueError):
    """An op received operands of incompatible shape."""

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class NonFiniteGradientError(FloatingPointError):
    pass


def tensor(values, requires_grad: bool = False, dtype=DTYPE) -> Tensor:
    t = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=dtype).clone()
    t.requires_grad_(requires_grad)
    return t


# --------------------------------------------------------------------------
# shape-checked primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError("matmul", f"cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return a @ b


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2D cross-correlation, NCHW input and OIHW kernel."""
    if x.dim() != 4 or weight.dim() != 4:
        raise ShapeError("conv2d", f"expected 4D input and kernel, got {tuple(x.shape)} and {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    if stride < 1:
        raise ShapeError("conv2d", f"stride must be >= 1, got {stride}")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def leaky_relu(x: Tensor) -> Tensor:
    return F.leaky_relu(x, LEAKY_SLOPE)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcastable("add", a, b)
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcastable("subtract", a, b)
    return a - b


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcastable("multiply", a, b)
    return a * b


def cat(tensors: Sequence[Tensor], dim: int = -1) -> Tensor:
    try:
        return torch.cat(list(tensors), dim=dim)
    except RuntimeError as exc:
        raise ShapeError("concatenate", str(exc)) from None


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        return x.reshape(*shape)
    except RuntimeError as exc:
        raise ShapeError("reshape", str(exc)) from None


def _broadcastable(op: str, a, b):
    try:
        torch.broadcast_shapes(torch.as_tensor(a).shape, torch.as_tensor(b).shape)
    except RuntimeError:
        raise ShapeError(op, f"shapes {tuple(torch.as_tensor(a).shape)} and {tuple(torch.as_tensor(b).shape)} do not broadcast") from None


# --------------------------------------------------------------------------
# backward

def backward(loss: Tensor, params: Sequence[Tensor], retain_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``loss`` w.r.t. each of ``params``.

    Parameters with no path to the loss get a zero tensor rather than None.
    """
    if loss.numel() != 1:
        raise ShapeError("backward", f"loss must be a scalar, got shape {tuple(loss.shape)}")
    params = list(params)
    if not loss.requires_grad:
        return [torch.zeros_like(p) for p in params]
    grads = torch.autograd.grad(loss.reshape(()), params, allow_unused=True, retain_graph=retain_graph)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


# --------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[Tensor] = field(default_factory=list)
    second_moment: list[Tensor] = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@torch.no_grad()
def adam_step(params: Sequence[Tensor], grads: Sequence[Tensor], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Raises NonFiniteGradientError (leaving params and state untouched) if
    any gradient entry is NaN or infinite.
    """
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ShapeError("adam_step", f"{len(params)} params but {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError("adam_step", f"param {i} has shape {tuple(p.shape)}, grad {tuple(g.shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient for parameter {i}; step rejected")
    if not state.first_moment:
        state.first_moment = [torch.zeros_like(p) for p in params]
        state.second_moment = [torch.zeros_like(p) for p in params]

    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step_count
    c2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / c2).sqrt_().add_(state.epsilon)
        p.addcdiv_(m, denom, value=-state.learning_rate / c1)
    return state


class Adam:
    """Convenience wrapper holding a parameter list and its AdamState."""

    def __init__(self, params: Iterable[Tensor], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def step(self, loss: Tensor) -> None:
        grads = backward(loss, self.params)
        adam_step(self.params, grads, self.state)


# --------------------------------------------------------------------------
# finite differences

def numerical_grad(fn: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> Tensor:
    """Central differences of scalar ``fn`` at ``x`` (64-bit)."""
    x = x.detach().to(DTYPE).clone()
    flat = x.reshape(-1)
    out = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            hi = float(fn(x))
            flat[i] = orig - step
            lo = float(fn(x))
            flat[i] = orig
            out[i] = (hi - lo) / (2.0 * step)
    return out.reshape(x.shape)


def relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-8) -> float:
    """max |a - n| scaled by the larger of max |n| and max |a| (and ``floor``)."""
    a = analytic.detach().reshape(-1).to(DTYPE)
    n = numeric.detach().reshape(-1).to(DTYPE)
    scale = max(a.abs().max().item() if a.numel() else 0.0, n.abs().max().item() if n.numel() else 0.0, floor)
    return (a - n).abs().max().item() / scale if a.numel() else 0.0


def gradcheck(fn: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Relative error between reverse-mode and central-difference gradients."""
    xg = x.detach().to(DTYPE).clone().requires_grad_(True)
    (g,) = backward(fn(xg), [xg])
    return relative_error(g, numerical_grad(fn, x, step))


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, tensors: Mapping[str, Tensor | np.ndarray], float32: bool = False) -> None:
    """Write named arrays in the PSIW format.

    Layout: magic ``PSIW``, u16 version, u32 count, then per entry a
    u32-length-prefixed UTF-8 name and a typed array record.
    """
    w = Writer()
    w.raw(CHECKPOINT_MAGIC)
    w.pack("H", CHECKPOINT_VERSION)
    w.pack("I", len(tensors))
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        if float32 and arr.dtype == np.float64:
            arr = arr.astype(np.float32)
        w.string(name)
        w.array(arr)
    Path(path).write_bytes(w.getvalue())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    r = Reader(Path(path).read_bytes(), "PSIW checkpoint")
    r.expect_magic(CHECKPOINT_MAGIC)
    r.expect_version(CHECKPOINT_VERSION)
    (count,) = r.unpack("I")
    out = {}
    for _ in range(count):
        name = r.string()
        out[name] = r.array()
    r.finish()
    return out


__all__ = [
    "DTYPE", "Tensor", "ShapeError", "NonFiniteGradientError", "FormatError", "tensor",
    "matmul", "conv2d", "leaky_relu", "add", "sub", "mul", "cat", "reshape",
    "backward", "AdamState", "adam_step", "Adam",
    "numerical_grad", "relative_error", "gradcheck", "save_checkpoint", "load_checkpoint",
]
