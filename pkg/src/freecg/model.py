"""FreeCG network: attention message passing over abstract edges with group CG.

Atoms of several frames are processed together as one disconnected graph.
Edges ``(i, j)`` point from the central atom ``i`` to its neighbour ``j``
and are stored sorted by ``(i, j)``; every aggregation therefore sums
neighbours in ascending index order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
import torch
from torch import nn

from . import autodiff as ad
from .cg_ops import ConfigError, GroupCG, ShuffleSpec, shuffle
from .irreps import LAYOUT, LAYOUT_DIM, PathMode, block_slice, spherical_harmonics

__all__ = [
    "MoleculeFrame",
    "NeighborList",
    "Batch",
    "ModelConfig",
    "FreeCG",
    "build_neighbor_list",
    "cosine_cutoff",
    "radial_features",
    "attention_enhancer",
    "collate",
    "energy_and_forces",
    "dipole_and_extent",
]

MAX_Z = 118
COINCIDENT = 1e-8
NORM_EPS = 1e-12


@dataclass
class MoleculeFrame:
    atomic_numbers: np.ndarray
    positions: np.ndarray
    energy: float | None = None
    forces: np.ndarray | None = None
    masses: np.ndarray | None = None

    def __post_init__(self):
        self.atomic_numbers = np.asarray(self.atomic_numbers, dtype=np.int64).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.atomic_numbers)
        if n < 1:
            raise ValueError("a frame needs at least one atom")
        if self.positions.shape[0] != n:
            raise ValueError(f"{n} atomic numbers but {self.positions.shape[0]} positions")
        if self.atomic_numbers.min() < 1 or self.atomic_numbers.max() > MAX_Z:
            raise ValueError("atomic numbers must lie in 1..118")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions must be finite")
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64).reshape(n, 3)
        if self.masses is not None:
            self.masses = np.asarray(self.masses, dtype=np.float64).reshape(n)
        if self.energy is not None:
            self.energy = float(self.energy)

    @property
    def n_atoms(self) -> int:
        return len(self.atomic_numbers)


@dataclass
class NeighborList:
    """Directed pairs ``(i, j)``, sorted by ``(i, j)``, with ``|r_j - r_i| <= cutoff``."""

    receivers: np.ndarray
    senders: np.ndarray
    distances: np.ndarray
    unit_vectors: np.ndarray
    cutoff: float

    def __len__(self):
        return len(self.receivers)


def build_neighbor_list(positions, cutoff: float) -> NeighborList:
    if cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(pos)
    recv, send, dist, unit = [], [], [], []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            r = pos[j] - pos[i]
            d = math.sqrt(float(r @ r))
            if d < COINCIDENT:
                raise ValueError(f"atoms {i} and {j} coincide (distance {d:.3e} A)")
            if d <= cutoff:
                recv.append(i)
                send.append(j)
                dist.append(d)
                unit.append(r / d)
    return NeighborList(
        np.asarray(recv, dtype=np.int64),
        np.asarray(send, dtype=np.int64),
        np.asarray(dist, dtype=np.float64),
        np.asarray(unit, dtype=np.float64).reshape(-1, 3),
        float(cutoff),
    )


def cosine_cutoff(r, cutoff: float):
    """``0.5 (cos(pi r / rc) + 1)`` inside the cutoff, zero beyond it."""
    if isinstance(r, torch.Tensor):
        w = 0.5 * (torch.cos(math.pi * r / cutoff) + 1.0)
        return w * (r <= cutoff).to(r.dtype)
    r = np.asarray(r, dtype=np.float64)
    return np.where(r <= cutoff, 0.5 * (np.cos(np.pi * r / cutoff) + 1.0), 0.0)


class ExpNormalRBF(nn.Module):
    """``exp(-beta_k (exp(-alpha r) - mu_k)^2)`` with trainable ``mu`` and ``beta``.

    Means start evenly spaced on ``[exp(-rc), 1]``.  Outputs are multiplied by
    the cosine cutoff, so every feature vanishes at ``r = rc``.
    """

    def __init__(self, num_rbf: int, cutoff: float):
        super().__init__()
        self.cutoff = cutoff
        self.alpha = 5.0 / cutoff
        start = math.exp(-cutoff)
        self.means = nn.Parameter(torch.linspace(start, 1.0, num_rbf))
        self.betas = nn.Parameter(torch.full((num_rbf,), (2.0 / num_rbf * (1.0 - start)) ** -2))

    def forward(self, r):
        w = cosine_cutoff(r, self.cutoff)
        expanded = torch.exp(-self.betas * (torch.exp(-self.alpha * r)[..., None] - self.means) ** 2)
        return expanded * w[..., None], w


def radial_features(r, rbf: ExpNormalRBF):
    """RBF expansion and cutoff weight of distances ``0 < r <= rc``."""
    rt = torch.as_tensor(r, dtype=rbf.means.dtype)
    if rt.numel() and (rt.detach().min() <= 0 or rt.detach().max() > rbf.cutoff):
        raise ValueError(f"radial_features: distances must lie in (0, {rbf.cutoff}]")
    return rbf(rt)


def attention_enhancer(E_bar, E_edge):
    """``max_t <E_bar[t], E_edge>`` over channels, full 8-component dot product.

    ``E_bar`` has shape ``(..., T, 8)`` and ``E_edge`` shape ``(..., 8)``.
    """
    dots = (E_bar * E_edge[..., None, :]).sum(dim=-1)
    return ad.max_over_axis(dots, axis=-1)[0]


class DegreeLinear(nn.Module):
    """Channel mixing applied separately to each degree block, shared over ``m``."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.weights = nn.ParameterList(
            [nn.Parameter(torch.empty(c_out, c_in)) for _ in LAYOUT]
        )
        for w in self.weights:
            nn.init.kaiming_uniform_(w, a=math.sqrt(5))

    def forward(self, x):
        parts = [
            torch.einsum("kc,...cm->...km", w, x[..., block_slice(ir.degree)])
            for w, ir in zip(self.weights, LAYOUT)
        ]
        return torch.cat(parts, dim=-1)


def _rejection(a, linear: DegreeLinear, sh):
    """Remove from each degree block of ``a`` its projection onto ``sh``.

    ``a``: ``(E, C, 8)``; ``sh``: ``(E, 8)`` (unit norm per degree block).
    """
    la = linear(a)
    parts = []
    for ir in LAYOUT:
        s = block_slice(ir.degree)
        y = sh[:, None, s]
        proj = (la[..., s] * y).sum(dim=-1, keepdim=True)
        parts.append(a[..., s] - proj * y)
    return torch.cat(parts, dim=-1)


@dataclass
class ModelConfig:
    channels: int = 64
    num_layers: int = 2
    cutoff: float = 5.0
    num_groups: int = 8
    shuffle_multiplier: float = 1.5
    num_heads: int = 8
    num_rbf: int = 32
    head: str = "equivariant"
    path_mode: str = "sparse"
    enhancer: bool = True
    enhancer_source: str = "neighbor"
    rej_source: str = "center"
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.channels < 1 or self.num_layers < 1:
            raise ConfigError("channels and num_layers must be positive")
        if self.channels % self.num_heads:
            raise ConfigError(f"channels={self.channels} must be divisible by num_heads={self.num_heads}")
        if self.num_groups < 1 or self.channels % self.num_groups:
            raise ConfigError(f"num_groups={self.num_groups} must divide channels={self.channels}")
        if self.head not in ("equivariant", "scalar"):
            raise ConfigError(f"head must be 'equivariant' or 'scalar', got {self.head!r}")
        if self.head == "equivariant" and self.channels < 2:
            raise ConfigError("the equivariant head needs channels >= 2")
        PathMode(self.path_mode)
        if self.enhancer_source not in ("neighbor", "center"):
            raise ConfigError(f"enhancer_source must be 'neighbor' or 'center', got {self.enhancer_source!r}")
        if self.rej_source not in ("neighbor", "center"):
            raise ConfigError(f"rej_source must be 'neighbor' or 'center', got {self.rej_source!r}")
        if self.cutoff <= 0:
            raise ConfigError("cutoff must be positive")
        return self

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Batch:
    """Several frames flattened into one graph."""

    atomic_numbers: torch.Tensor  # (N,)
    positions: torch.Tensor  # (N, 3)
    frame_index: torch.Tensor  # (N,)
    receivers: torch.Tensor  # (E,)
    senders: torch.Tensor  # (E,)
    n_frames: int
    frames: list = field(default_factory=list, repr=False)

    @property
    def n_atoms(self) -> int:
        return self.atomic_numbers.shape[0]


def collate(frames, cutoff: float, requires_grad: bool = True) -> Batch:
    z, pos, fidx, recv, send = [], [], [], [], []
    offset = 0
    for k, fr in enumerate(frames):
        nl = build_neighbor_list(fr.positions, cutoff)
        z.append(fr.atomic_numbers)
        pos.append(fr.positions)
        fidx.append(np.full(fr.n_atoms, k, dtype=np.int64))
        recv.append(nl.receivers + offset)
        send.append(nl.senders + offset)
        offset += fr.n_atoms
    positions = ad.tensor(np.concatenate(pos), requires_grad=requires_grad)
    return Batch(
        atomic_numbers=torch.as_tensor(np.concatenate(z)),
        positions=positions,
        frame_index=torch.as_tensor(np.concatenate(fidx)),
        receivers=torch.as_tensor(np.concatenate(recv)),
        senders=torch.as_tensor(np.concatenate(send)),
        n_frames=len(frames),
        frames=list(frames),
    )


@dataclass
class EdgeGeometry:
    sh: torch.Tensor  # (E, 8)
    distance: torch.Tensor  # (E,)
    cutoff: torch.Tensor  # (E,)
    rbf: torch.Tensor  # (E, num_rbf)


@dataclass
class NodeState:
    h: torch.Tensor  # (N, C)
    E_bar: torch.Tensor  # (N, C, 8)


class FreeCGLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, last: bool = False):
        super().__init__()
        C = cfg.channels
        self.cfg = cfg
        self.last = last
        self.f_q = nn.Linear(C, C)
        self.f_k = nn.Linear(C, C)
        self.f_v = nn.Linear(C, C)
        # edge-side maps carry no bias so every edge term vanishes at the cutoff
        self.f_dk = nn.Linear(C, C, bias=False)
        self.f_dv = nn.Linear(C, C, bias=False)
        self.s1 = nn.Linear(C, C, bias=False)
        self.s2 = nn.Linear(C, C, bias=False)
        self.o_proj = nn.Linear(C, 3 * C)
        self.e_linear = DegreeLinear(C, C)
        self.group_cg = GroupCG(C, cfg.num_groups, cfg.path_mode)
        self.shuffle_spec = ShuffleSpec(C, cfg.num_groups, cfg.shuffle_multiplier)
        self.h_linear1 = DegreeLinear(C, C)
        self.h_linear2 = DegreeLinear(C, C)
        if not last:
            self.rej_trg = DegreeLinear(C, C)
            self.rej_src = DegreeLinear(C, C)
            self.f_linear = nn.Linear(C, C, bias=False)

    def attention(self, state: NodeState, f, geom: EdgeGeometry, recv, send):
        cfg = self.cfg
        C, H = cfg.channels, cfg.num_heads
        q = self.f_q(state.h)
        k = self.f_k(state.h)
        dk = self.f_dk(f)
        qk = (ad.gather_rows(q, recv) * ad.gather_rows(k, send) * dk).reshape(-1, H, C // H).sum(-1)
        logits = geom.cutoff[:, None] * qk
        if cfg.enhancer:
            src = send if cfg.enhancer_source == "neighbor" else recv
            enh = attention_enhancer(ad.gather_rows(state.E_bar, src), geom.sh)
            logits = logits + enh[:, None]
        return ad.silu(logits)

    def forward(self, state: NodeState, f, geom: EdgeGeometry, recv, send):
        cfg = self.cfg
        C, H = cfg.channels, cfg.num_heads
        N = state.h.shape[0]
        E_bar = state.E_bar

        a = self.attention(state, f, geom, recv, send).repeat_interleave(C // H, dim=1)
        v = self.f_v(state.h)
        dv = self.f_dv(f)
        v_msg = ad.gather_rows(v, send) * dv * a  # (E, C)
        s1 = self.s1(v_msg)
        s2 = self.s2(v_msg)
        e_msg = ad.gather_rows(E_bar, recv) * s1[..., None] + geom.sh[:, None, :] * s2[..., None]
        E_hat = ad.segment_sum(e_msg, recv, N)
        v_hat = ad.segment_sum(v_msg, recv, N)
        o1, o2, o3 = ad.split(self.o_proj(v_hat), [C, C, C])

        A = o1[..., None] * self.e_linear(E_bar)
        dE_prime = self.group_cg(A, E_hat)
        dE = shuffle(dE_prime, self.shuffle_spec) + E_hat
        E_new = E_bar + dE

        inner = (self.h_linear1(E_bar) * self.h_linear2(E_bar)).sum(-1)
        h_new = state.h + inner * o2 + o3

        if self.last:
            f_new = f
        else:
            trg_src = send if cfg.rej_source == "neighbor" else recv
            w_trg = _rejection(ad.gather_rows(E_bar, trg_src), self.rej_trg, geom.sh)
            w_src = _rejection(ad.gather_rows(E_bar, recv), self.rej_src, geom.sh)
            f_new = f + (w_trg * w_src).sum(-1) * ad.silu(self.f_linear(f))
        return NodeState(h_new, E_new), f_new


class GatedEquivariantBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, scalar_activation: bool):
        super().__init__()
        self.c_out = c_out
        self.vec1 = DegreeLinear(c_in, c_in)
        self.vec2 = DegreeLinear(c_in, c_out)
        self.mlp = nn.Sequential(nn.Linear(2 * c_in, c_in), nn.SiLU(), nn.Linear(c_in, 2 * c_out))
        self.scalar_activation = scalar_activation

    def forward(self, h, E_bar):
        n1 = ad.norm(self.vec1(E_bar), axis=-1, eps=NORM_EPS)
        h_out, gate = ad.split(self.mlp(ad.concat([h, n1], axis=-1)), [self.c_out, self.c_out])
        E_out = self.vec2(E_bar) * gate[..., None]
        if self.scalar_activation:
            h_out = ad.silu(h_out)
        return h_out, E_out


class FreeCG(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = (cfg or ModelConfig()).validate()
        self.cfg = cfg
        C = cfg.channels
        gen_state = torch.random.get_rng_state()
        prev_dtype = torch.get_default_dtype()
        torch.set_default_dtype(ad.get_dtype())
        torch.manual_seed(cfg.seed)
        try:
            self.embedding = nn.Embedding(MAX_Z + 1, C)
            self.rbf = ExpNormalRBF(cfg.num_rbf, cfg.cutoff)
            self.rbf_proj = nn.Linear(cfg.num_rbf, C, bias=False)
            self.layers = nn.ModuleList(
                [FreeCGLayer(cfg, last=(k == cfg.num_layers - 1)) for k in range(cfg.num_layers)]
            )
            if cfg.head == "equivariant":
                self.head = nn.ModuleList(
                    [GatedEquivariantBlock(C, C // 2, True), GatedEquivariantBlock(C // 2, 1, False)]
                )
            else:
                self.head = nn.Sequential(nn.Linear(C, C // 2), nn.SiLU(), nn.Linear(C // 2, 1))
            # output standardisation, set from training data
            self.register_buffer("energy_scale", torch.ones(()))
            self.register_buffer("energy_shift", torch.zeros(()))
        finally:
            torch.random.set_rng_state(gen_state)
            torch.set_default_dtype(prev_dtype)

    # -- building blocks -------------------------------------------------

    def edge_geometry(self, batch: Batch) -> EdgeGeometry:
        pos = batch.positions
        rvec = ad.gather_rows(pos, batch.senders) - ad.gather_rows(pos, batch.receivers)
        dist = ad.norm(rvec, axis=-1)
        unit = rvec / dist[:, None]
        sh = spherical_harmonics(unit, check=False)
        rbf, w = self.rbf(dist)
        return EdgeGeometry(sh=sh, distance=dist, cutoff=w, rbf=rbf)

    def initial_state(self, batch: Batch) -> NodeState:
        h = self.embedding(batch.atomic_numbers)
        E_bar = h.new_zeros(h.shape + (LAYOUT_DIM,))
        return NodeState(h, E_bar)

    def representation(self, batch: Batch, return_trace: bool = False):
        geom = self.edge_geometry(batch)
        state = self.initial_state(batch)
        f = self.rbf_proj(geom.rbf)
        trace = [state]
        for layer in self.layers:
            state, f = layer(state, f, geom, batch.receivers, batch.senders)
            trace.append(state)
        if return_trace:
            return state, trace
        return state

    def readout(self, state: NodeState):
        """Per-atom scalar ``h`` and (equivariant head only) 1-channel ``E_bar``."""
        if self.cfg.head == "equivariant":
            h, E = state.h, state.E_bar
            for block in self.head:
                h, E = block(h, E)
            return h[:, 0], E[:, 0, :]
        return self.head(state.h)[:, 0], None

    def atom_energies(self, batch: Batch):
        h, _ = self.readout(self.representation(batch))
        return self.energy_scale * h + self.energy_shift

    def forward(self, batch: Batch):
        """Total energy of every frame in the batch, shape ``(n_frames,)``."""
        return ad.segment_sum(self.atom_energies(batch), batch.frame_index, batch.n_frames)

    def energy_and_forces(self, batch: Batch, create_graph: bool = False):
        energy = self(batch)
        (grad,) = ad.backward(energy.sum(), [batch.positions], create_graph=create_graph)
        return energy, -grad


def energy_and_forces(frame: MoleculeFrame, model: FreeCG, create_graph: bool = False):
    """Energy (kcal/mol) and forces ``-dy/dr`` (kcal/mol/A) for one frame."""
    batch = collate([frame], model.cfg.cutoff)
    energy, forces = model.energy_and_forces(batch, create_graph=create_graph)
    return energy[0], forces


def dipole_and_extent(frame: MoleculeFrame, model: FreeCG):
    """Dipole magnitude and spatial extent about the centre of mass.

    ``mu = |sum_i E_i(l=1) + h_i (r_i - r_c)|`` and
    ``R2 = sum_i h_i |r_i - r_c|`` using the final per-atom head outputs.
    """
    if frame.masses is None:
        raise ValueError("dipole_and_extent needs atomic masses")
    if model.cfg.head != "equivariant":
        raise ConfigError("dipole_and_extent needs the equivariant head")
    batch = collate([frame], model.cfg.cutoff)
    h, E = model.readout(model.representation(batch))
    m = torch.as_tensor(frame.masses, dtype=batch.positions.dtype)
    pos = batch.positions
    center = (m[:, None] * pos).sum(0) / m.sum()
    rel = pos - center
    vec = E[:, block_slice(1)] + h[:, None] * rel
    mu = ad.norm(vec.sum(0), axis=-1)
    extent = (h * ad.norm(rel, axis=-1, eps=0.0)).sum()
    return mu, extent
