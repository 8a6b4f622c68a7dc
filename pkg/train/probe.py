"""Two-stage probe: pretrain tokens on a task subset, then fit only the occupancy head on frozen tokens."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field

from config_io.config import ExperimentConfig, ProbeVariant, merge_overrides
from config_io.schema import Task
from config_io.utils import ensure_dir, save_json
from eval.metrics import EvalReport
from train.checkpoint import load_checkpoint
from train.trainer import run_training

logger = logging.getLogger(__name__)

STAGE2_TASKS: dict[str, Any] = {t.value: t == Task.OCC for t in Task}


class ProbeResult(BaseModel):
    name: str
    stage1_tasks: list[str]
    stage1: EvalReport | None = None
    stage2: EvalReport | None = None
    stage1_checkpoint: str = ""
    stage2_checkpoint: str = ""


class ProbeReport(BaseModel):
    config_name: str
    variants: list[ProbeResult] = Field(default_factory=list)

    def table(self) -> list[dict[str, Any]]:
        """Texture metrics from stage 1 beside occupancy metrics from stage 2."""
        rows = []
        for v in self.variants:
            s1, s2 = v.stage1, v.stage2
            rows.append({
                "variant": v.name,
                "tasks": "+".join(v.stage1_tasks),
                "psnr": s1.psnr if s1 else None,
                "ssim": s1.ssim if s1 else None,
                "iou": s2.iou if s2 else None,
                "miou": s2.miou if s2 else None,
            })
        return rows


def stage_configs(config: ExperimentConfig, variant: ProbeVariant) -> tuple[ExperimentConfig, ExperimentConfig]:
    base = merge_overrides(config, variant.overrides)
    stage1 = merge_overrides(base, {"train": {"steps": config.probe.stage1_steps}})
    stage2 = merge_overrides(base, {
        "train": {"steps": config.probe.stage2_steps},
        "tasks": STAGE2_TASKS,
        "optim": {"lr": config.probe.stage2_lr},
    })
    return stage1, stage2


def run_two_stage_probe(
    config: ExperimentConfig,
    data_root: str | Path | None = None,
    out_dir: str | Path | None = None,
) -> ProbeReport:
    """Run every configured variant through both stages and write `probe_report.json`."""
    out = ensure_dir(out_dir or config.paths.out_dir)
    report = ProbeReport(config_name=config.name)
    for variant in config.probe.variants:
        stage1, stage2 = stage_configs(config, variant)
        vdir = out / variant.name
        logger.info(f"Probe variant '{variant.name}': stage 1 on {[t.value for t in stage1.tasks.enabled()]}")
        first = run_training(stage1, data_root, vdir, tag="stage1")

        logger.info(f"Probe variant '{variant.name}': stage 2 (occupancy head only)")
        ckpt = load_checkpoint(first.checkpoint_path, expected=stage2)
        second = run_training(stage2, data_root, vdir, init=ckpt, train_heads=[Task.OCC],
                              lr=config.probe.stage2_lr, tag="stage2")

        report.variants.append(ProbeResult(
            name=variant.name,
            stage1_tasks=[t.value for t in stage1.tasks.enabled()],
            stage1=first.eval_report,
            stage2=second.eval_report,
            stage1_checkpoint=str(first.checkpoint_path),
            stage2_checkpoint=str(second.checkpoint_path),
        ))
        save_json(report.model_dump(mode="json"), out / "probe_report.json")
    return report
