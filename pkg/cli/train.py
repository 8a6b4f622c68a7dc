"""CLI command: train the tokenizer."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config_io.config import load_config
from config_io.schema import TrainingDivergedError
from train.trainer import run_training


def main() -> None:
    parser = argparse.ArgumentParser(description="Train the DriveTok scene tokenizer")
    parser.add_argument("--config", type=str, required=True, help="Path to YAML config file")
    parser.add_argument("--data-root", type=str, default=None, help="Override data.root")
    parser.add_argument("--out-dir", type=str, default=None, help="Override paths.out_dir")
    parser.add_argument("--steps", type=int, default=None, help="Override train.steps")
    parser.add_argument("--mode", type=str, default=None, choices=["deterministic", "fast"])
    parser.add_argument("--device", type=str, default=None, help="cpu, cuda or auto")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    train: dict = {}
    if args.steps is not None:
        train["steps"] = args.steps
    if args.mode is not None:
        train["mode"] = args.mode
    if args.device is not None:
        train["device"] = args.device
    config = load_config(args.config, {"train": train} if train else None)

    try:
        result = run_training(config, args.data_root, args.out_dir)
    except TrainingDivergedError as e:
        logging.error(f"{e}; diagnostics written to divergence.json")
        sys.exit(2)

    print("\n=== Training Summary ===")
    print(f"  Steps: {result.step}")
    print(f"  Checkpoint: {result.checkpoint_path}")
    print(f"  Metrics log: {result.log_path}")
    if result.last_report:
        print(f"  Final loss: {result.last_report['total']:.5f}")
    if result.eval_report is not None:
        r = result.eval_report
        for key in ("psnr", "ssim", "absrel", "delta_1_25", "sem_accuracy", "iou", "miou"):
            v = getattr(r, key)
            if v is not None:
                print(f"  {key}: {v:.4f}")


if __name__ == "__main__":
    main()
