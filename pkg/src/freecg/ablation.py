"""Shuffle-multiplier ablation: train one model per multiplier and compare."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

from .cg_ops import ShuffleSpec
from .data import Dataset
from .model import FreeCG, ModelConfig
from .train import TrainConfig, evaluate, train
from .verify import suite_equivariance

__all__ = ["AblationRow", "ABLATION_HEADER", "shuffle_ablation"]

ABLATION_HEADER = [
    "multiplier",
    "shift",
    "steps",
    "best_epoch",
    "val_force_mae",
    "test_energy_mae",
    "test_force_mae",
    "equivariance_pass",
    "max_energy_dev",
    "max_force_dev",
]


@dataclass
class AblationRow:
    multiplier: float
    shift: int
    steps: int
    best_epoch: int
    val_force_mae: float
    test_energy_mae: float
    test_force_mae: float
    equivariance_pass: bool
    max_energy_dev: float
    max_force_dev: float


def shuffle_ablation(
    dataset: Dataset,
    multipliers=(0.5, 1.0, 1.5),
    model_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
    csv_path=None,
    equivariance_frames: int = 100,
) -> list[AblationRow]:
    """Same data, seed and schedule for every multiplier; only the shuffle shift differs."""
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    train_frames = dataset.subset("train")
    val_frames = dataset.subset("val")
    test_frames = dataset.subset("test")
    rows = []
    for mult in multipliers:
        cfg = dataclasses.replace(model_cfg, shuffle_multiplier=float(mult))
        model = FreeCG(cfg)
        result = train(train_frames, val_frames, model, train_cfg)
        val = evaluate(model, val_frames)
        test = evaluate(model, test_frames)
        checks = suite_equivariance(model, seed=train_cfg.seed, n_frames=equivariance_frames)
        rows.append(AblationRow(
            multiplier=float(mult),
            shift=ShuffleSpec(cfg.channels, cfg.num_groups, float(mult)).shift,
            steps=result.steps,
            best_epoch=result.best_epoch,
            val_force_mae=val["force_mae"],
            test_energy_mae=test["energy_mae"],
            test_force_mae=test["force_mae"],
            equivariance_pass=all(c.passed for c in checks),
            max_energy_dev=checks[0].value,
            max_force_dev=checks[1].value,
        ))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ABLATION_HEADER)
            for r in rows:
                w.writerow([getattr(r, k) for k in ABLATION_HEADER])
    return rows
