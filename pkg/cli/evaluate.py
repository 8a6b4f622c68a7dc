"""CLI command: evaluate a checkpoint on a dataset split."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config_io.config import load_config
from config_io.schema import IncompatibleCheckpointError
from eval.runner import run_eval


def main() -> None:
    parser = argparse.ArgumentParser(description="Evaluate a DriveTok checkpoint")
    parser.add_argument("--ckpt", type=str, required=True, help="Checkpoint path")
    parser.add_argument("--split", type=str, default="val", choices=["train", "val"])
    parser.add_argument("--config", type=str, default=None,
                        help="Config to check the checkpoint against (default: the stored one)")
    parser.add_argument("--data-root", type=str, default=None)
    parser.add_argument("--output", type=str, default=None, help="Output directory")
    parser.add_argument("--max-samples", type=int, default=None)
    parser.add_argument("--dump", action="store_true", help="Write qualitative images")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    config = load_config(args.config) if args.config else None
    try:
        report = run_eval(args.ckpt, args.data_root, args.split, args.output, config,
                          dump=args.dump, max_samples=args.max_samples)
    except IncompatibleCheckpointError as e:
        logging.error(str(e))
        sys.exit(2)

    print("\n=== Evaluation Summary ===")
    print(f"  Split: {report.split} ({report.num_samples} samples)")
    for key in ("psnr", "ssim", "absrel", "delta_1_25", "sem_accuracy", "iou", "miou"):
        v = getattr(report, key)
        if v is not None:
            print(f"  {key}: {v:.4f}")
    for name, v in report.per_class_iou.items():
        print(f"    {name}: {v:.4f}")


if __name__ == "__main__":
    main()
