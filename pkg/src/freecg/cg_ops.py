"""CG transform kernels: channelwise CG, group CG with learnable weights, shuffling.

Irreps channel tensors have shape ``(..., T, 8)`` in the fixed layout.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import torch
from torch import nn

from .irreps import LAYOUT_DIM, Path, PathMode, block_slice, build_cg_table, enumerate_paths

__all__ = [
    "ConfigError",
    "OpCounter",
    "OpCount",
    "ShuffleSpec",
    "GroupCG",
    "cg_transform",
    "group_cg",
    "count_basic_ops",
    "shuffle",
    "path_name",
]


class ConfigError(ValueError):
    pass


def path_name(path: Path) -> str:
    return f"{path.l1}x{path.l2}to{path.lo}"


@functools.lru_cache(maxsize=None)
def _coefficient_block(key: tuple[int, int, int], dtype: torch.dtype) -> torch.Tensor:
    return torch.tensor(build_cg_table().block(*key), dtype=dtype)


def _coefficients(path: Path, like: torch.Tensor) -> torch.Tensor:
    return _coefficient_block(path.key, like.dtype)


@functools.lru_cache(maxsize=None)
def _sparse_entries(key: tuple[int, int, int]):
    return tuple(e[3:] for e in build_cg_table().entries if e[:3] == key)


def cg_transform(A: torch.Tensor, B: torch.Tensor, path: Path) -> torch.Tensor:
    """Channelwise, unweighted CG product of ``A`` and ``B`` along ``path``.

    Returns only the ``lo`` block, shape ``(..., T, 2lo+1)``.
    """
    if Path(*path) not in enumerate_paths(PathMode.SO3_FULL):
        raise KeyError(f"path {path} is not in the CG table")
    if A.shape != B.shape or A.shape[-1] != LAYOUT_DIM:
        raise ValueError(f"cg_transform: expected matching (..., T, 8) inputs, got {list(A.shape)} and {list(B.shape)}")
    a = A[..., block_slice(path.l1)]
    b = B[..., block_slice(path.l2)]
    return torch.einsum("oab,...a,...b->...o", _coefficients(path, A), a, b)


class OpCounter:
    """Accumulates scalar multiplies/adds executed by the instrumented kernel."""

    def __init__(self):
        self.mults = 0
        self.adds = 0
        self.mix_mults = 0
        self.mix_adds = 0

    def as_count(self) -> "OpCount":
        return OpCount(self.mults, self.adds, self.mix_mults, self.mix_adds)


@dataclass(frozen=True)
class OpCount:
    """Basic-operation counts for one group-CG evaluation on one atom.

    ``mults``/``adds`` cover the CG contraction itself: one multiplication per
    nonzero coefficient applied to a channel pair, one addition per term
    accumulated onto an already-started output component.  ``mix_*`` cover
    the contraction with the learnable weights and the merge of paths that
    share an output degree.
    """

    mults: int
    adds: int
    mix_mults: int = 0
    mix_adds: int = 0

    @property
    def total(self) -> int:
        return self.mults + self.adds


def _check_groups(T: int, G: int) -> int:
    if G < 1 or T % G:
        raise ConfigError(f"number of groups G={G} must divide channel count T={T}")
    return T // G


def count_basic_ops(mode: PathMode | str, T: int, G: int) -> OpCount:
    """Closed-form operation count of :func:`group_cg` for a single atom."""
    n = _check_groups(T, G)
    table = build_cg_table()
    paths = enumerate_paths(mode)
    mults = adds = mix_mults = mix_adds = 0
    per_lo: dict[int, int] = {}
    for p in paths:
        nz = table.nonzero_count(*p.key)
        do = 2 * p.lo + 1
        mults += nz * G * n * n
        adds += (nz - do) * G * n * n
        mix_mults += G * n * n * n * do
        mix_adds += G * n * do * (n * n - 1)
        per_lo[p.lo] = per_lo.get(p.lo, 0) + 1
    for lo, k in per_lo.items():
        mix_adds += (k - 1) * T * (2 * lo + 1)
    return OpCount(mults, adds, mix_mults, mix_adds)


def _pair_products_sparse(a, b, path: Path, counter: OpCounter | None):
    """``P[..., t1, t2, mo] = sum C[mo, m1, m2] a[t1, m1] b[t2, m2]`` term by term."""
    do = 2 * path.lo + 1
    batch = a.shape[:-2]
    n = a.shape[-2]
    cols: list = [None] * do
    pairs = math.prod(batch) * n * n
    for mo, m1, m2, c in _sparse_entries(path.key):
        term = c * (a[..., :, None, m1] * b[..., None, :, m2])
        if cols[mo] is None:
            cols[mo] = term
        else:
            cols[mo] = cols[mo] + term
            if counter is not None:
                counter.adds += pairs
        if counter is not None:
            counter.mults += pairs
    zero = a.new_zeros(batch + (n, n))
    return torch.stack([zero if col is None else col for col in cols], dim=-1)


def _pair_products_dense(a, b, path: Path):
    return torch.einsum("oab,...ia,...jb->...ijo", _coefficients(path, a), a, b)


def group_cg(
    A: torch.Tensor,
    B: torch.Tensor,
    weights: dict[Path, torch.Tensor],
    num_groups: int,
    mode: PathMode | str = PathMode.O3_SPARSE,
    kernel: str = "dense",
    counter: OpCounter | None = None,
) -> torch.Tensor:
    """Grouped, weighted CG transform.

    For each group ``g``, path ``l1 (x) l2 -> lo`` and output channel
    ``to`` in the group::

        out[to, mo] = sum_{m1 m2} C[mo m1 m2] sum_{t1 t2 in g} W[g, to, t1, t2] A[t1, m1] B[t2, m2]

    ``weights[path]`` has shape ``(G, n, n, n)`` with ``n = T / G``.  Paths with
    the same output degree are summed.  ``kernel="sparse"`` walks the nonzero
    coefficients explicitly and reports into ``counter``.
    """
    if A.shape != B.shape or A.shape[-1] != LAYOUT_DIM:
        raise ValueError(f"group_cg: expected matching (..., T, 8) inputs, got {list(A.shape)} and {list(B.shape)}")
    T = A.shape[-2]
    n = _check_groups(T, num_groups)
    batch = A.shape[:-2]
    out_blocks: dict[int, torch.Tensor] = {}
    for path in enumerate_paths(mode):
        W = weights[path]
        if W.shape != (num_groups, n, n, n):
            raise ValueError(f"weights for {path_name(path)} have shape {list(W.shape)}, expected {[num_groups, n, n, n]}")
        a = A[..., block_slice(path.l1)].reshape(batch + (num_groups, n, 2 * path.l1 + 1))
        b = B[..., block_slice(path.l2)].reshape(batch + (num_groups, n, 2 * path.l2 + 1))
        if kernel == "sparse":
            P = _pair_products_sparse(a, b, path, counter)
        elif kernel == "dense":
            P = _pair_products_dense(a, b, path)
        else:
            raise ValueError(f"unknown kernel {kernel!r}")
        do = 2 * path.lo + 1
        P = P.reshape(batch + (num_groups, n * n, do))
        out = torch.matmul(W.reshape(num_groups, n, n * n), P)  # (..., G, n, do)
        out = out.reshape(batch + (T, do))
        if counter is not None:
            counter.mix_mults += math.prod(batch) * num_groups * n * n * n * do
            counter.mix_adds += math.prod(batch) * num_groups * n * do * (n * n - 1)
        if path.lo in out_blocks:
            out_blocks[path.lo] = out_blocks[path.lo] + out
            if counter is not None:
                counter.mix_adds += math.prod(batch) * T * do
        else:
            out_blocks[path.lo] = out
    parts = []
    for lo in (1, 2):
        blk = out_blocks.get(lo)
        parts.append(A.new_zeros(batch + (T, 2 * lo + 1)) if blk is None else blk)
    return torch.cat(parts, dim=-1)


class GroupCG(nn.Module):
    """Learnable weight blocks for :func:`group_cg`."""

    def __init__(self, channels: int, num_groups: int, mode: PathMode | str = PathMode.O3_SPARSE,
                 kernel: str = "dense"):
        super().__init__()
        self.n = _check_groups(channels, num_groups)
        self.channels = channels
        self.num_groups = num_groups
        self.mode = PathMode(mode)
        self.kernel = kernel
        self.paths = enumerate_paths(self.mode)
        self.weights = nn.ParameterDict(
            {path_name(p): nn.Parameter(torch.empty(num_groups, self.n, self.n, self.n)) for p in self.paths}
        )
        self.reset_parameters()

    def reset_parameters(self):
        per_lo: dict[int, int] = {}
        for p in self.paths:
            per_lo[p.lo] = per_lo.get(p.lo, 0) + 1
        for p in self.paths:
            std = 1.0 / math.sqrt(per_lo[p.lo] * self.n * self.n)
            nn.init.normal_(self.weights[path_name(p)], mean=0.0, std=std)

    def weight_map(self) -> dict[Path, torch.Tensor]:
        return {p: self.weights[path_name(p)] for p in self.paths}

    def forward(self, A, B, counter: OpCounter | None = None):
        return group_cg(A, B, self.weight_map(), self.num_groups, self.mode, self.kernel, counter)


@dataclass(frozen=True)
class ShuffleSpec:
    """Cyclic channel shift ``t -> (t + floor(multiplier * T / G)) mod T``."""

    channels: int
    num_groups: int
    multiplier: float = 1.5

    @property
    def shift(self) -> int:
        return math.floor(self.multiplier * self.channels / self.num_groups)

    def permutation(self) -> list[int]:
        T = self.channels
        return [(t + self.shift) % T for t in range(T)]


def shuffle(X: torch.Tensor, spec: ShuffleSpec) -> torch.Tensor:
    """Move channel ``t`` to ``pi(t)``; all 8 components travel together."""
    if X.shape[-2] != spec.channels:
        raise ValueError(f"shuffle: spec built for T={spec.channels}, got {X.shape[-2]} channels")
    return torch.roll(X, shifts=spec.shift % spec.channels, dims=-2)
