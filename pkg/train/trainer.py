"""Training loop for the scene tokenizer."""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

import torch
from torch import Tensor, nn
from torch.utils.data import DataLoader

from config_io.config import ExperimentConfig, config_hash
from config_io.schema import MissingDatasetError, RunMode, Split, Task, TrainingDivergedError
from config_io.utils import ensure_dir, resolve_device, save_json, seed_everything
from eval.metrics import EvalReport
from eval.runner import evaluate_model, model_dtype
from model.tokenizer import DriveTokenizer, TokenizerOutput
from objectives.labels import bev_reg_labels
from objectives.losses import (
    LossReport,
    LossTerm,
    RandomFeaturePerceptual,
    depth_loss,
    occ_loss,
    reg_loss,
    rgb_loss,
    sem_loss,
    total_loss,
)
from sim.dataset import SceneDataset
from train.checkpoint import Checkpoint, save_checkpoint
from train.logger import MetricsLogger
from train.schedule import build_scheduler

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    checkpoint_path: Path
    step: int
    last_report: dict[str, Any] | None
    eval_report: EvalReport | None
    log_path: Path
    losses: list[float]


def configure_determinism(config: ExperimentConfig) -> None:
    seed_everything(config.train.seed)
    if config.train.mode == RunMode.DETERMINISTIC:
        torch.use_deterministic_algorithms(True, warn_only=True)


def build_model(config: ExperimentConfig, device: torch.device | None = None) -> DriveTokenizer:
    torch.manual_seed(config.train.seed)
    model = DriveTokenizer(config).to(model_dtype(config))
    return model.to(device) if device is not None else model


def make_loader(dataset: SceneDataset, config: ExperimentConfig) -> DataLoader:
    """Serial, unshuffled order in deterministic mode; seeded shuffling in fast mode."""
    shuffle = config.train.mode == RunMode.FAST
    gen = torch.Generator().manual_seed(config.train.seed)
    return DataLoader(
        dataset,
        batch_size=config.train.batch_size,
        shuffle=shuffle,
        generator=gen,
        num_workers=config.data.num_workers if shuffle else 0,
        drop_last=False,
    )


def _cycle(loader: DataLoader) -> Iterator[dict[str, Any]]:
    while True:
        yield from loader


def to_model(batch: dict[str, Any], device: torch.device, dtype: torch.dtype) -> dict[str, Any]:
    out = {}
    for k, v in batch.items():
        if isinstance(v, Tensor):
            v = v.to(device)
            if v.is_floating_point():
                v = v.to(dtype)
        out[k] = v
    return out


def compute_losses(
    model: DriveTokenizer,
    out: TokenizerOutput,
    batch: dict[str, Any],
    tasks: list[Task],
    class_weights: Tensor,
    perceptual: nn.Module | None = None,
) -> dict[Task, LossTerm]:
    """One LossTerm per enabled task."""
    cfg = model.config
    w = cfg.loss
    terms: dict[Task, LossTerm] = {}
    if Task.RECON in tasks:
        terms[Task.RECON] = rgb_loss(out.rgb, batch["images"], w, perceptual)
    if Task.DEPTH in tasks:
        terms[Task.DEPTH] = depth_loss(out.depth, batch["depth"], batch["depth_valid"], w)
    if Task.SEM in tasks:
        terms[Task.SEM] = sem_loss(out.sem, batch["semantics"])
    if Task.OCC in tasks:
        terms[Task.OCC] = occ_loss(out.occ.logits, batch["occupancy"], w)
    if Task.REG in tasks:
        labels = bev_reg_labels(
            batch["occupancy"], class_weights.to(batch["occupancy"].device),
            model.decoder.scene_grid(), cfg.heads.num_occ_classes,
        )
        terms[Task.REG] = reg_loss(out.aux_logits, labels, w)
    return terms


def _divergence(out_dir: Path, step: int, report: LossReport, lr: float) -> TrainingDivergedError:
    diag = {"step": step, "lr": lr, **report.to_dict()}
    save_json(diag, out_dir / "divergence.json")
    return TrainingDivergedError(f"non-finite loss at step {step}: {report.terms}", diagnostics=diag)


def run_training(
    config: ExperimentConfig,
    data_root: str | Path | None = None,
    out_dir: str | Path | None = None,
    init: Checkpoint | None = None,
    train_heads: list[Task] | None = None,
    lr: float | None = None,
    tag: str = "train",
    resume: bool = False,
) -> TrainResult:
    """Train from scratch (or from `init`) for config.train.steps optimizer steps.

    `train_heads` restricts the optimizer to those task heads and freezes the rest.
    `resume` appends to an existing metrics log instead of starting a new one.
    """
    configure_determinism(config)
    device = resolve_device(config.train.device)
    out = ensure_dir(out_dir or config.paths.out_dir)
    root = data_root or config.data.root

    train_set = SceneDataset(root, Split.TRAIN, depth_target=config.data.depth_target)
    val_set = SceneDataset(root, Split.VAL, depth_target=config.data.depth_target)
    if len(train_set) == 0:
        raise MissingDatasetError(f"training split of {root} is empty")
    rig = train_set.rig
    class_weights = train_set.class_weights

    model = build_model(config, device)
    if init is not None:
        model.load_state_dict(init.model_state)
    if train_heads is None:
        params = [p for p in model.parameters() if p.requires_grad]
    else:
        params = freeze_all_but(model, [m for t in train_heads for m in model.head_modules(t)])

    opt_cfg = config.optim
    optimizer = torch.optim.AdamW(params, lr=lr or opt_cfg.lr, betas=tuple(opt_cfg.betas),
                                  weight_decay=opt_cfg.weight_decay)
    steps = config.train.steps
    scheduler = build_scheduler(optimizer, opt_cfg, steps)
    tasks = config.tasks.enabled()
    dtype = model_dtype(config)
    perceptual = None
    if config.loss.perceptual_enabled and Task.RECON in tasks:
        perceptual = RandomFeaturePerceptual().to(device, dtype)

    log_path = out / f"{tag}_metrics.jsonl"
    mlog = MetricsLogger(log_path, run_meta={
        "tag": tag, "config_hash": config_hash(config), "tasks": [t.value for t in tasks],
        "steps": steps, "mode": config.train.mode.value,
    }, resume=resume)
    autocast = (
        torch.autocast(device_type="cuda", dtype=torch.bfloat16)
        if config.train.mode == RunMode.FAST and device.type == "cuda"
        else contextlib.nullcontext()
    )

    logger.info(f"Training {tag}: {steps} steps, tasks={[t.value for t in tasks]}, "
                f"{sum(p.numel() for p in params)} trainable params, {len(train_set)} train samples")
    model.train()
    batches = _cycle(make_loader(train_set, config))
    losses: list[float] = []
    last: dict[str, Any] | None = None
    eval_report: EvalReport | None = None
    cw = class_weights.to(device)

    for step in range(steps):
        batch = to_model(next(batches), device, dtype)
        with autocast:
            pred = model(batch["images"], rig, tasks)
            terms = compute_losses(model, pred, batch, tasks, cw, perceptual)
            report = total_loss(terms, config.loss, step)
        cur_lr = scheduler.get_last_lr()[0]
        total = float(report.total.detach())
        if not math.isfinite(total):
            raise _divergence(out, step, report, cur_lr)

        optimizer.zero_grad(set_to_none=True)
        report.total.backward()
        torch.nn.utils.clip_grad_norm_(params, opt_cfg.grad_clip)
        optimizer.step()
        scheduler.step()

        losses.append(total)
        last = report.to_dict()
        if step % config.train.log_every == 0 or step == steps - 1:
            mlog.log_train(report, cur_lr)
            logger.info(f"[{tag}] step {step}: total={total:.5f} " +
                        " ".join(f"{k}={v:.4f}" for k, v in report.terms.items()))
        done = step + 1
        if config.train.eval_every and done % config.train.eval_every == 0 and done < steps and len(val_set):
            eval_report = evaluate_model(model, val_set, tasks, config.train.max_eval_samples, step=done)
            mlog.log_eval(done, eval_report)
        if config.train.ckpt_every and done % config.train.ckpt_every == 0 and done < steps:
            save_checkpoint(out / f"{tag}_step{done}.pt", model, config, done, optimizer, class_weights.tolist())

    if len(val_set):
        eval_report = evaluate_model(model, val_set, tasks, config.train.max_eval_samples, step=steps)
        mlog.log_eval(steps, eval_report)
    ckpt_path = save_checkpoint(out / f"{tag}_final.pt", model, config, steps, optimizer, class_weights.tolist())
    return TrainResult(ckpt_path, steps, last, eval_report, log_path, losses)


def freeze_all_but(model: nn.Module, keep: list[nn.Module]) -> list[nn.Parameter]:
    """Disable gradients everywhere except in `keep`; returns the trainable parameters."""
    model.requires_grad_(False)
    params: list[nn.Parameter] = []
    for m in keep:
        m.requires_grad_(True)
        params.extend(m.parameters())
    return params
