"""Checkpoint save/load with an architecture hash guard."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
from torch.optim import Optimizer

from config_io.config import ExperimentConfig, config_hash
from config_io.schema import IncompatibleCheckpointError
from model.tokenizer import DriveTokenizer

logger = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    model_state: dict[str, torch.Tensor]
    optimizer_state: dict[str, Any] | None
    config: ExperimentConfig
    config_hash: str
    step: int
    class_weights: list[float] | None = None


def save_checkpoint(
    path: str | Path,
    model: DriveTokenizer,
    config: ExperimentConfig,
    step: int,
    optimizer: Optimizer | None = None,
    class_weights: list[float] | None = None,
) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "config": config.model_dump(mode="json"),
        "config_hash": config_hash(config),
        "step": step,
        "class_weights": class_weights,
    }, p)
    logger.info(f"Checkpoint saved to {p} (step {step})")
    return p


def load_checkpoint(path: str | Path, expected: ExperimentConfig | None = None,
                    map_location: str | torch.device = "cpu") -> Checkpoint:
    """Read a checkpoint; when `expected` is given its architecture hash must match."""
    raw = torch.load(Path(path), map_location=map_location, weights_only=False)
    cfg = ExperimentConfig(**raw["config"])
    stored = raw["config_hash"]
    if expected is not None and config_hash(expected) != stored:
        raise IncompatibleCheckpointError(
            f"checkpoint {path} was trained with config hash {stored[:12]}, "
            f"current config hashes to {config_hash(expected)[:12]}"
        )
    if config_hash(cfg) != stored:
        raise IncompatibleCheckpointError(f"checkpoint {path} is internally inconsistent")
    return Checkpoint(
        model_state=raw["model"],
        optimizer_state=raw.get("optimizer"),
        config=cfg,
        config_hash=stored,
        step=int(raw["step"]),
        class_weights=raw.get("class_weights"),
    )


def restore_model(ckpt: Checkpoint, config: ExperimentConfig | None = None,
                  dtype: torch.dtype | None = None) -> DriveTokenizer:
    model = DriveTokenizer(config or ckpt.config)
    if dtype is not None:
        model = model.to(dtype)
    model.load_state_dict(ckpt.model_state)
    return model
