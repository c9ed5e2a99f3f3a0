"""Desk-scale training: weighted energy/force loss, AdamW, warmup, plateau decay, EMA."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import FreeCG, MoleculeFrame, collate

__all__ = [
    "TrainConfig",
    "TrainingError",
    "TrainResult",
    "loss_fn",
    "EMA",
    "fit_output_scale",
    "evaluate",
    "train",
    "METRICS_HEADER",
]

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "lr", "train_loss", "val_energy_mae", "val_force_mae", "val_loss"]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-4
    warmup_steps: int = 100
    decay_factor: float = 0.8
    decay_patience: int = 5
    force_weight: float = 0.95
    energy_weight: float = 0.05
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    ema_rate: float = 0.999
    batch_size: int = 4
    max_epochs: int = 1000
    max_steps: int = 2000
    early_stop_patience: int = 30
    grad_clip: float = 10.0
    split_seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if not math.isclose(self.force_weight + self.energy_weight, 1.0, abs_tol=1e-12):
            raise ValueError("force_weight + energy_weight must equal 1")
        for name in ("decay_factor", "ema_rate"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not all(0 <= b < 1 for b in self.betas) or len(self.betas) != 2:
            raise ValueError(f"betas must be two numbers in [0, 1), got {self.betas}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        return self


def _labels(frames: list[MoleculeFrame], dtype):
    for k, fr in enumerate(frames):
        if fr.energy is None or fr.forces is None:
            raise ValueError(f"frame {k} lacks energy/force labels")
    energy = torch.tensor([fr.energy for fr in frames], dtype=dtype)
    forces = torch.as_tensor(np.concatenate([fr.forces for fr in frames]), dtype=dtype)
    return energy, forces


def loss_fn(pred_energy, pred_forces, energy, forces, force_weight=0.95, energy_weight=0.05):
    """``wF * mean((F - F_hat)^2) + wE * mean((E - E_hat)^2)``.

    The force mean runs over every Cartesian component, the energy mean over frames.
    """
    if energy is None or forces is None:
        raise ValueError("loss needs energy and force labels")
    f_err = ((pred_forces - forces) ** 2).mean()
    e_err = ((pred_energy - energy) ** 2).mean()
    return force_weight * f_err + energy_weight * e_err


class EMA:
    """Shadow copy of parameters: ``s <- rate * s + (1 - rate) * p``."""

    def __init__(self, model: torch.nn.Module, rate: float):
        self.rate = rate
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    @torch.no_grad()
    def update(self, model: torch.nn.Module):
        for k, v in model.state_dict().items():
            if v.dtype.is_floating_point:
                self.shadow[k].mul_(self.rate).add_(v.detach(), alpha=1 - self.rate)
            else:
                self.shadow[k].copy_(v)

    def copy_to(self, model: torch.nn.Module):
        model.load_state_dict(self.shadow)


def fit_output_scale(model: FreeCG, frames: list[MoleculeFrame]) -> None:
    """Per-atom energy shift = mean(E/N); scale = RMS of force components."""
    per_atom = np.array([fr.energy / fr.n_atoms for fr in frames])
    forces = np.concatenate([fr.forces for fr in frames])
    rms = float(np.sqrt(np.mean(forces**2)))
    with torch.no_grad():
        model.energy_shift.fill_(float(per_atom.mean()))
        model.energy_scale.fill_(rms if rms > 0 else 1.0)


def _batches(n: int, size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for s in range(0, n, size):
        yield order[s : s + size]


def evaluate(model: FreeCG, frames: list[MoleculeFrame], batch_size: int = 16,
             force_weight: float = 0.95, energy_weight: float = 0.05) -> dict[str, float]:
    """Energy MAE (per frame), force MAE (per component) and loss."""
    e_abs = f_abs = 0.0
    e_sq = f_sq = 0.0
    n_e = n_f = 0
    for idx in _batches(len(frames), batch_size, None):
        sub = [frames[i] for i in idx]
        batch = collate(sub, model.cfg.cutoff)
        energy, forces = model.energy_and_forces(batch)
        e_lab, f_lab = _labels(sub, energy.dtype)
        de = (energy.detach() - e_lab)
        df = (forces.detach() - f_lab)
        e_abs += float(de.abs().sum())
        f_abs += float(df.abs().sum())
        e_sq += float((de**2).sum())
        f_sq += float((df**2).sum())
        n_e += de.numel()
        n_f += df.numel()
    return {
        "energy_mae": e_abs / n_e,
        "force_mae": f_abs / n_f,
        "loss": force_weight * f_sq / n_f + energy_weight * e_sq / n_e,
    }


@dataclass
class TrainResult:
    model: FreeCG
    best_state: dict
    best_val_loss: float
    best_epoch: int
    steps: int
    history: list[dict] = field(default_factory=list)


def _nonfinite_frames(idx, energy, forces, e_lab, f_lab, frame_index) -> list[int]:
    """Dataset indices of frames whose prediction or label is not finite."""
    ok_e = torch.isfinite(energy.detach()) & torch.isfinite(e_lab)
    bad_f = (~(torch.isfinite(forces.detach()) & torch.isfinite(f_lab)).all(dim=1)).long()
    bad_count = torch.zeros(len(ok_e), dtype=torch.long).index_add_(0, frame_index, bad_f)
    return [int(i) for i, ok, nb in zip(idx, ok_e, bad_count) if not ok or nb > 0]


def _clip(params, max_norm: float):
    grads = [p.grad for p in params if p.grad is not None]
    if not grads or max_norm <= 0:
        return 0.0
    total = float(torch.sqrt(sum((g.detach() ** 2).sum() for g in grads)))
    if total > max_norm:
        for g in grads:
            g.mul_(max_norm / (total + 1e-12))
    return total


def train(
    train_frames: list[MoleculeFrame],
    val_frames: list[MoleculeFrame],
    model: FreeCG,
    cfg: TrainConfig,
    metrics_path=None,
) -> TrainResult:
    """Train ``model`` in place; returns it loaded with the best EMA weights."""
    cfg.validate()
    if not train_frames or not val_frames:
        raise ValueError("train and validation splits must be nonempty")
    for split, frames in (("training", train_frames), ("validation", val_frames)):
        bad = [k for k, fr in enumerate(frames)
               if fr.energy is not None and fr.forces is not None
               and not (math.isfinite(fr.energy) and np.isfinite(fr.forces).all())]
        if bad:
            raise TrainingError(f"non-finite label in {split} frame(s) {bad}")
    fit_output_scale(model, train_frames)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay)
    ema = EMA(model, cfg.ema_rate)
    base_lr = cfg.lr
    best_loss = math.inf
    best_state = copy.deepcopy(ema.shadow)
    best_epoch = -1
    bad_epochs = plateau_epochs = 0
    step = 0
    history = []
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
    try:
        for epoch in range(cfg.max_epochs):
            if step >= cfg.max_steps:
                break
            model.train()
            losses = []
            for idx in _batches(len(train_frames), cfg.batch_size, rng):
                if step >= cfg.max_steps:
                    break
                lr = base_lr * min(1.0, (step + 1) / max(1, cfg.warmup_steps))
                for g in opt.param_groups:
                    g["lr"] = lr
                sub = [train_frames[i] for i in idx]
                batch = collate(sub, model.cfg.cutoff)
                e_lab, f_lab = _labels(sub, batch.positions.dtype)
                energy, forces = model.energy_and_forces(batch, create_graph=True)
                loss = loss_fn(energy, forces, e_lab, f_lab, cfg.force_weight, cfg.energy_weight)
                if not torch.isfinite(loss):
                    bad = _nonfinite_frames(idx, energy, forces, e_lab, f_lab, batch.frame_index)
                    where = f"frame(s) {bad}" if bad else f"batch frames {[int(i) for i in idx]}"
                    raise TrainingError(f"non-finite loss at step {step}, training {where}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                _clip(params, cfg.grad_clip)
                opt.step()
                ema.update(model)
                losses.append(float(loss.detach()))
                step += 1

            live = copy.deepcopy(model.state_dict())
            ema.copy_to(model)
            metrics = evaluate(model, val_frames, force_weight=cfg.force_weight, energy_weight=cfg.energy_weight)
            model.load_state_dict(live)

            row = {
                "epoch": epoch,
                "lr": opt.param_groups[0]["lr"],
                "train_loss": float(np.mean(losses)) if losses else float("nan"),
                "val_energy_mae": metrics["energy_mae"],
                "val_force_mae": metrics["force_mae"],
                "val_loss": metrics["loss"],
            }
            history.append(row)
            if writer is not None:
                writer.writerow([row[k] for k in METRICS_HEADER])
                fh.flush()
            log.info("epoch %d step %d val force MAE %.4f", epoch, step, metrics["force_mae"])

            if metrics["loss"] < best_loss:
                best_loss = metrics["loss"]
                best_state = copy.deepcopy(ema.shadow)
                best_epoch = epoch
                bad_epochs = plateau_epochs = 0
            else:
                bad_epochs += 1
                plateau_epochs += 1
                if plateau_epochs >= cfg.decay_patience:
                    base_lr *= cfg.decay_factor
                    plateau_epochs = 0
                if bad_epochs >= cfg.early_stop_patience:
                    break
    finally:
        if fh is not None:
            fh.close()
    model.load_state_dict(best_state)
    return TrainResult(model, best_state, best_loss, best_epoch, step, history)
