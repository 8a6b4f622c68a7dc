"""Evaluation runner: score a tokenizer on a dataset split and write the report."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import numpy as np
import torch

from config_io.config import ExperimentConfig, config_hash
from config_io.schema import RunMode, Split, Task
from config_io.utils import ensure_dir, load_json, resolve_device, save_json
from eval.metrics import EvalReport, MetricAccumulator
from model.tokenizer import DriveTokenizer, TokenizerOutput
from render.figures import dump_qualitative
from sim.dataset import SceneDataset
from train.checkpoint import load_checkpoint, restore_model

logger = logging.getLogger(__name__)


def model_dtype(config: ExperimentConfig) -> torch.dtype:
    return torch.float64 if config.train.mode == RunMode.DETERMINISTIC else torch.float32


def prediction_arrays(out: TokenizerOutput, index: int = 0) -> dict[str, np.ndarray]:
    """Numpy predictions for one batch element."""
    pred: dict[str, np.ndarray] = {}
    if out.rgb is not None:
        pred["rgb"] = out.rgb[index].clamp(0.0, 1.0).double().cpu().numpy()
    if out.depth is not None:
        pred["depth"] = out.depth[index].double().cpu().numpy()
    if out.sem is not None:
        pred["sem"] = out.sem[index].argmax(dim=1).cpu().numpy()
    if out.occ is not None:
        pred["occ"] = out.occ.labels()[index].cpu().numpy()
    return pred


@torch.no_grad()
def evaluate_model(
    model: DriveTokenizer,
    dataset: SceneDataset,
    tasks: list[Task] | None = None,
    max_samples: int | None = None,
    step: int | None = None,
    split: str = Split.VAL.value,
    dump_dir: str | Path | None = None,
    dump_count: int = 4,
) -> EvalReport:
    """Run the model over `dataset` one sample at a time, in order."""
    cfg = model.config
    tasks = cfg.tasks.enabled() if tasks is None else tasks
    p = next(model.parameters())
    was_training = model.training
    model.eval()
    acc = MetricAccumulator(cfg.heads.num_occ_classes)
    n = len(dataset) if max_samples is None else min(len(dataset), max_samples)
    for i in range(n):
        item = dataset[i]
        images = item["images"][None].to(p.device, p.dtype)
        out = model(images, dataset.rig, tasks)
        pred = prediction_arrays(out)
        target_rgb = item["images"].double().numpy()
        acc.add(
            item["name"],
            rgb=(pred["rgb"], target_rgb) if "rgb" in pred else None,
            depth=(pred["depth"], item["depth_gt"].double().numpy(), item["depth_valid"].numpy())
            if "depth" in pred else None,
            sem=(pred["sem"], item["semantics"].numpy()) if "sem" in pred else None,
            occ=(pred["occ"], item["occupancy"].numpy()) if "occ" in pred else None,
        )
        if dump_dir is not None and i < dump_count:
            dump_qualitative(Path(dump_dir) / item["name"], item, pred, out, cfg)
    if was_training:
        model.train()
    report = acc.report(split=split, step=step, config_hash=config_hash(cfg))
    logger.info(_summary_line(report))
    return report


def _summary_line(r: EvalReport) -> str:
    parts = [f"{r.split} n={r.num_samples}"]
    for key in ("psnr", "ssim", "absrel", "delta_1_25", "sem_accuracy", "iou", "miou"):
        v = getattr(r, key)
        if v is not None:
            parts.append(f"{key}={v:.4f}")
    return "Eval: " + " ".join(parts)


def run_eval(
    checkpoint: str | Path,
    data_root: str | Path | None = None,
    split: str = Split.VAL.value,
    out_dir: str | Path | None = None,
    config: ExperimentConfig | None = None,
    dump: bool = False,
    max_samples: int | None = None,
) -> EvalReport:
    """Load a checkpoint, evaluate it on a split and write `eval_<split>.json`."""
    ckpt = load_checkpoint(checkpoint, expected=config)
    cfg = config or ckpt.config
    device = resolve_device(cfg.train.device)
    model = restore_model(ckpt, cfg, model_dtype(cfg)).to(device)
    root = data_root or cfg.data.root
    dataset = SceneDataset(root, split, depth_target=cfg.data.depth_target)
    out = ensure_dir(out_dir or Path(checkpoint).parent)
    report = evaluate_model(
        model, dataset, max_samples=max_samples, step=ckpt.step, split=split,
        dump_dir=out / f"qualitative_{split}" if dump else None,
    )
    path = out / f"eval_{split}.json"
    save_json(report.model_dump(mode="json"), path)
    logger.info(f"Report written to {path}")
    return report


def load_report(path: str | Path) -> EvalReport:
    data: dict[str, Any] = load_json(path)
    return EvalReport(**data)
