"""CLI command: render a synthetic multi-camera dataset."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config_io.config import load_config
from sim.dataset import build_dataset


def parse_resolution(text: str) -> list[int]:
    """Parse 'HxW' like '64x176'."""
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"resolution must look like 64x176, got {text!r}") from e
    return [h, w]


def main() -> None:
    parser = argparse.ArgumentParser(description="Generate a synthetic DriveTok dataset")
    parser.add_argument("--config", type=str, default=None, help="Path to YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="Base scene seed")
    parser.add_argument("--num-samples", type=int, default=None)
    parser.add_argument("--rig-preset", type=str, default=None, choices=["stereo2", "surround6"])
    parser.add_argument("--resolution", type=parse_resolution, default=None, help="Image size HxW")
    parser.add_argument("--sparsity", type=float, default=None,
                        help="Fraction of semantic labels kept (1.0 = dense)")
    parser.add_argument("--out-dir", type=str, default=None, help="Dataset root")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    data: dict = {}
    for key, value in (("seed", args.seed), ("num_samples", args.num_samples), ("rig_preset", args.rig_preset),
                       ("resolution", args.resolution), ("semantic_keep", args.sparsity),
                       ("root", args.out_dir)):
        if value is not None:
            data[key] = value
    config = load_config(args.config, {"data": data} if data else None)

    logging.info(f"Generating {config.data.num_samples} samples: rig={config.data.rig_preset}, "
                 f"resolution={config.data.resolution[0]}x{config.data.resolution[1]}, root={config.data.root}")
    manifest = build_dataset(config)

    n_val = sum(1 for s in manifest["samples"] if s["split"] == "val")
    print("\n=== Dataset ===")
    print(f"  Root: {config.data.root}")
    print(f"  Samples: {len(manifest['samples'])} ({n_val} val)")
    print(f"  Rig: {manifest['rig_preset']} ({manifest['rig_hash']})")
    print(f"  Class weights: {[round(w, 3) for w in manifest['class_weights']]}")


if __name__ == "__main__":
    main()
