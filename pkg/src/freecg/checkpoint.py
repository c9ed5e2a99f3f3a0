"""Binary checkpoints (``FCG1``).

Layout, all little-endian::

    b"FCG1"  u32 version  u32 n_arrays
    n_arrays x { u32 name_len, name (utf-8), u32 rank, u64 dims[rank], f64 data[prod(dims)] }

Data is row-major.  Besides the model's state dict, ``meta.*`` scalars record
the architecture so a checkpoint can be inspected or reloaded on its own.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .cg_ops import ConfigError
from .model import FreeCG, ModelConfig

__all__ = [
    "MAGIC",
    "VERSION",
    "CheckpointError",
    "write_arrays",
    "read_arrays",
    "save_model",
    "load_model",
    "config_from_arrays",
    "parameter_count",
]

MAGIC = b"FCG1"
VERSION = 1

_ENUMS = {
    "head": ("equivariant", "scalar"),
    "path_mode": ("sparse", "full"),
    "enhancer_source": ("neighbor", "center"),
    "rej_source": ("neighbor", "center"),
}
_META_KEYS = [
    "channels",
    "num_layers",
    "cutoff",
    "num_groups",
    "shuffle_multiplier",
    "num_heads",
    "num_rbf",
    "head",
    "path_mode",
    "enhancer",
    "enhancer_source",
    "rej_source",
    "seed",
]


class CheckpointError(ValueError):
    pass


def write_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8", order="C")  # keeps rank-0 arrays rank 0
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_arrays(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an FCG1 checkpoint")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, off)
            off += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if off + 8 * size > len(buf):
                raise CheckpointError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
    except struct.error:
        raise CheckpointError(f"{path}: truncated checkpoint") from None
    return arrays


def _meta(cfg: ModelConfig) -> dict[str, np.ndarray]:
    out = {}
    for key in _META_KEYS:
        v = getattr(cfg, key)
        if key in _ENUMS:
            v = _ENUMS[key].index(v)
        out[f"meta.{key}"] = np.asarray(float(v))
    return out


def config_from_arrays(arrays: dict[str, np.ndarray]) -> ModelConfig:
    kw = {}
    defaults = ModelConfig()
    for key in _META_KEYS:
        name = f"meta.{key}"
        if name not in arrays:
            raise CheckpointError(f"checkpoint lacks {name}")
        v = float(arrays[name])
        if key in _ENUMS:
            kw[key] = _ENUMS[key][int(v)]
        else:
            kw[key] = type(getattr(defaults, key))(v)
    return ModelConfig(**kw)


def save_model(path, model: FreeCG) -> None:
    arrays = {name: t.detach().cpu().double().numpy() for name, t in model.state_dict().items()}
    arrays.update(_meta(model.cfg))
    write_arrays(path, arrays)


def load_model(path, cfg: ModelConfig | None = None) -> FreeCG:
    """Rebuild a model; if ``cfg`` is given it must match the stored architecture."""
    arrays = read_arrays(path)
    stored = config_from_arrays(arrays)
    if cfg is not None:
        diffs = [
            f"{k}: config={getattr(cfg, k)!r} checkpoint={getattr(stored, k)!r}"
            for k in _META_KEYS
            if k != "seed" and getattr(cfg, k) != getattr(stored, k)
        ]
        if diffs:
            raise ConfigError("checkpoint/config mismatch: " + "; ".join(diffs))
    model = FreeCG(cfg or stored)
    state = model.state_dict()
    missing = sorted(set(state) - {k for k in arrays if not k.startswith("meta.")})
    if missing:
        raise ConfigError(f"checkpoint lacks parameters: {', '.join(missing[:5])}")
    new_state = {}
    for name, ref in state.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise ConfigError(f"{name}: checkpoint shape {list(arr.shape)} != model shape {list(ref.shape)}")
        new_state[name] = torch.as_tensor(arr, dtype=ref.dtype)
    model.load_state_dict(new_state)
    return model


def parameter_count(model: FreeCG) -> dict[str, int]:
    groups: dict[str, int] = {}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        if top == "layers":
            top = "layers." + name.split(".")[1]
        groups[top] = groups.get(top, 0) + p.numel()
    groups["total"] = sum(p.numel() for p in model.parameters())
    return groups
