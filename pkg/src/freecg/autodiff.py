"""Differentiable dense-tensor ops used by the model.

Values are ``torch.Tensor``; torch autograd records the tape.  This module
fixes the op set, checks shapes with readable errors, and pins the
behaviour the rest of the package relies on (deterministic segment sums,
smallest-index argmax routing, float64 by default).
"""

from __future__ import annotations

import os
from collections.abc import Sequence

import torch

__all__ = [
    "ShapeError",
    "set_precision",
    "get_dtype",
    "configure_threads",
    "tensor",
    "add",
    "sub",
    "scale",
    "mul",
    "linear",
    "sum_axis",
    "segment_sum",
    "dot",
    "max_over_axis",
    "silu",
    "cosine",
    "sqrt",
    "norm",
    "concat",
    "split",
    "gather_rows",
    "broadcast",
    "backward",
]

_DTYPE = torch.float64


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = " vs ".join(str(list(s)) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


def set_precision(bits: int) -> None:
    global _DTYPE
    if bits == 64:
        _DTYPE = torch.float64
    elif bits == 32:
        _DTYPE = torch.float32
    else:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    torch.set_default_dtype(_DTYPE)


def get_dtype() -> torch.dtype:
    return _DTYPE


def configure_threads(n: int | None = None) -> int:
    """Cap torch worker threads; defaults to ``FREECG_THREADS`` or all cores."""
    if n is None:
        env = os.environ.get("FREECG_THREADS")
        n = int(env) if env else (os.cpu_count() or 1)
    n = max(1, int(n))
    torch.set_num_threads(n)
    return n


def tensor(values, requires_grad: bool = False) -> torch.Tensor:
    return torch.as_tensor(values, dtype=_DTYPE).clone().requires_grad_(requires_grad)


def _same(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def add(a, b):
    _same("add", a, b)
    return a + b


def sub(a, b):
    _same("subtract", a, b)
    return a - b


def scale(a, s: float):
    return a * s


def mul(a, b):
    """Elementwise product; ``b`` may broadcast against ``a``."""
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError("multiply", a.shape, b.shape) from None
    return a * b


def linear(x, weight, bias=None, axis: int = -1):
    """Map axis ``axis`` of ``x`` (size ``n_in``) through ``weight (n_out, n_in)``."""
    axis = axis % x.dim()
    if weight.dim() != 2 or x.shape[axis] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError("linear(bias)", weight.shape, bias.shape)
    xt = x.movedim(axis, -1)
    out = xt @ weight.T
    if bias is not None:
        out = out + bias
    return out.movedim(-1, axis)


def sum_axis(x, axis: int | None = None):
    if axis is None:
        return x.sum()
    return x.sum(dim=axis)


def segment_sum(values, index, num_segments: int):
    """Sum rows of ``values`` into ``num_segments`` buckets given by ``index``.

    Rows are accumulated in their stored order, so callers that sort edges by
    (receiver, sender) get a fixed ascending-neighbour summation order.  Empty
    segments yield zero rows.
    """
    if index.dim() != 1 or index.shape[0] != values.shape[0]:
        raise ShapeError("segment_sum", values.shape, index.shape)
    out = values.new_zeros((num_segments,) + tuple(values.shape[1:]))
    return out.index_add(0, index, values)


def dot(a, b, axis: int = -1):
    _same("dot", a, b)
    return (a * b).sum(dim=axis)


def max_over_axis(x, axis: int = -1):
    """Maximum along ``axis`` and its index (first index on ties).

    The gradient is routed entirely to the selected element.
    """
    idx = torch.argmax(x.detach(), dim=axis, keepdim=True)
    return x.gather(axis, idx).squeeze(axis), idx.squeeze(axis)


def silu(x):
    return torch.nn.functional.silu(x)


def cosine(x):
    return torch.cos(x)


def sqrt(x):
    return torch.sqrt(x)


def norm(x, axis: int = -1, eps: float = 0.0):
    """Euclidean norm; ``eps`` is added under the root to keep gradients finite at 0."""
    return torch.sqrt((x * x).sum(dim=axis) + eps)


def concat(parts: Sequence[torch.Tensor], axis: int = -1):
    ref = list(parts[0].shape)
    ax = axis % len(ref)
    for p in parts[1:]:
        s = list(p.shape)
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", parts[0].shape, p.shape)
    return torch.cat(list(parts), dim=axis)


def split(x, sizes: Sequence[int], axis: int = -1):
    if sum(sizes) != x.shape[axis]:
        raise ShapeError("split", x.shape, tuple(sizes))
    return torch.split(x, list(sizes), dim=axis)


def gather_rows(x, index):
    if index.dim() != 1:
        raise ShapeError("gather_rows", x.shape, index.shape)
    return x.index_select(0, index)


def broadcast(x, shape: Sequence[int]):
    try:
        return x.expand(*shape)
    except RuntimeError:
        raise ShapeError("broadcast", x.shape, tuple(shape)) from None


def backward(root, leaves: Sequence[torch.Tensor], create_graph: bool = False):
    """Gradients of a scalar ``root`` with respect to each of ``leaves``.

    Leaves the root does not depend on get zero gradients.
    """
    if root.dim() != 0 and root.numel() != 1:
        raise ValueError(f"backward: root must be scalar, got shape {list(root.shape)}")
    if not root.requires_grad:
        raise ValueError("backward: root is not attached to the tape")
    grads = torch.autograd.grad(
        root.reshape(()), list(leaves), create_graph=create_graph, allow_unused=True
    )
    return [torch.zeros_like(l) if g is None else g for l, g in zip(leaves, grads)]
