"""Dense float64 tensor helpers with reverse-mode differentiation.

Backed by torch on CPU. Everything downstream goes through ``as_tensor`` so
dtype is pinned to float64, and ``grad`` wraps ``torch.autograd.grad`` with
the error contract the rest of the package relies on.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

DTYPE = torch.float64

torch.set_default_dtype(DTYPE)
torch.use_deterministic_algorithms(True)

Tensor = torch.Tensor


class DimensionError(ValueError):
    pass


class UnknownVariableError(KeyError):
    pass


@dataclass(frozen=True)
class Gradient:
    with_respect_to: str
    value: Tensor


def as_tensor(data, requires_grad: bool = False) -> Tensor:
    t = torch.as_tensor(data, dtype=DTYPE).clone()
    if requires_grad:
        t.requires_grad_(True)
    return t


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dim() != 2 or b.dim() != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax, stabilised by subtracting each row's max."""
    if x.dim() < 1:
        raise DimensionError("softmax_rows needs at least one dimension")
    shifted = x - x.amax(dim=-1, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def grad(loss: Tensor, wrt: Tensor | dict[str, Tensor], name: str | None = None) -> Gradient:
    """Reverse-mode derivative of a scalar ``loss`` with respect to one tensor.

    ``wrt`` is either the tensor itself or a registry dict, in which case
    ``name`` selects the entry.
    """
    if isinstance(wrt, dict):
        if name not in wrt:
            raise UnknownVariableError(name)
        target = wrt[name]
    else:
        target = wrt
        name = name or "x"
    if loss.numel() != 1:
        raise DimensionError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    if not (target.requires_grad and loss.requires_grad):
        raise UnknownVariableError(f"{name} is not part of the recorded graph")
    (g,) = torch.autograd.grad(loss, target, allow_unused=True, retain_graph=False)
    if g is None:
        raise UnknownVariableError(f"{name} is not part of the recorded graph")
    return Gradient(with_respect_to=name, value=g.detach())


def central_difference(fn, x: Tensor, h: float = 1e-5) -> Tensor:
    """Finite-difference gradient of scalar ``fn`` at ``x``. Slow; test oracle only."""
    x = x.detach().clone()
    out = torch.empty_like(x)
    flat = x.view(-1)
    oflat = out.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            fp = float(fn(x))
            flat[i] = orig - h
            fm = float(fn(x))
            flat[i] = orig
            oflat[i] = (fp - fm) / (2 * h)
    return out


def relative_error(a: Tensor, b: Tensor) -> float:
    num = torch.linalg.vector_norm(a - b).item()
    den = max(torch.linalg.vector_norm(a).item(), torch.linalg.vector_norm(b).item(), 1e-30)
    return num / den
