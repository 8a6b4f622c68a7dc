"""CLI command: two-stage probe over the configured variants."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from rich.console import Console
from rich.table import Table

from config_io.config import load_config
from train.probe import ProbeReport, run_two_stage_probe


def _fmt(v: float | None) -> str:
    return "-" if v is None else f"{v:.4f}"


def probe_table(report: ProbeReport) -> Table:
    table = Table(title=f"Two-stage probe: {report.config_name}")
    for col in ("variant", "stage-1 tasks", "PSNR", "SSIM", "probe IoU", "probe mIoU"):
        table.add_column(col)
    for row in report.table():
        table.add_row(row["variant"], row["tasks"], _fmt(row["psnr"]), _fmt(row["ssim"]),
                      _fmt(row["iou"]), _fmt(row["miou"]))
    return table


def main() -> None:
    parser = argparse.ArgumentParser(description="Pretrain tokens, freeze them, probe occupancy")
    parser.add_argument("--config", type=str, required=True, help="Path to YAML config file")
    parser.add_argument("--data-root", type=str, default=None)
    parser.add_argument("--out-dir", type=str, default=None)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    config = load_config(args.config)
    report = run_two_stage_probe(config, args.data_root, args.out_dir)
    Console().print(probe_table(report))


if __name__ == "__main__":
    main()
