"""CLI command: compare finished runs."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from rich.console import Console
from rich.table import Table

from cli.probe import probe_table
from config_io.utils import load_json, save_json
from render.figures import plot_loss_curves, plot_per_class_iou
from train.logger import MetricsLogger
from train.probe import ProbeReport

METRICS = ("psnr", "ssim", "absrel", "delta_1_25", "sem_accuracy", "iou", "miou")


def collect_run(run_dir: Path) -> dict[str, Any]:
    """Latest eval report and training curve of one run directory."""
    run: dict[str, Any] = {"name": run_dir.name, "eval": None, "train": [], "probe": None}
    evals = sorted(run_dir.glob("eval_*.json"))
    if evals:
        run["eval"] = load_json(evals[-1])
    for log in sorted(run_dir.glob("*_metrics.jsonl")):
        run["train"].extend(MetricsLogger.load(log, kind="train"))
        if run["eval"] is None:
            evs = MetricsLogger.load(log, kind="eval")
            if evs:
                run["eval"] = evs[-1]["report"]
    probe = run_dir / "probe_report.json"
    if probe.exists():
        run["probe"] = load_json(probe)
    return run


def comparison_table(runs: list[dict[str, Any]]) -> Table:
    table = Table(title="Run comparison")
    table.add_column("run")
    for m in METRICS:
        table.add_column(m)
    for run in runs:
        ev = run["eval"] or {}
        table.add_row(run["name"], *("-" if ev.get(m) is None else f"{ev[m]:.4f}" for m in METRICS))
    return table


def main() -> None:
    parser = argparse.ArgumentParser(description="Compare DriveTok runs")
    parser.add_argument("--runs", type=str, nargs="+", required=True, help="Run directories")
    parser.add_argument("--output", type=str, default="runs/report", help="Output directory")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    runs = [collect_run(Path(r)) for r in args.runs]
    console = Console()
    console.print(comparison_table(runs))
    for run in runs:
        if run["probe"]:
            console.print(probe_table(ProbeReport(**run["probe"])))

    out = Path(args.output)
    summary = {r["name"]: {m: (r["eval"] or {}).get(m) for m in METRICS} for r in runs}
    save_json(summary, out / "report.json")
    plot_loss_curves({r["name"]: r["train"] for r in runs}, out / "loss_curves.png")
    plot_per_class_iou({r["name"]: (r["eval"] or {}).get("per_class_iou", {}) for r in runs},
                       out / "per_class_iou.png")
    logging.info(f"Report written to {out}")


if __name__ == "__main__":
    main()
