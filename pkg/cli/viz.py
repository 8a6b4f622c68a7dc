"""CLI command: visibility masks, BEV-token PCA and qualitative grids for a checkpoint."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config_io.utils import ensure_dir, resolve_device
from eval.runner import evaluate_model, model_dtype
from geometry.visibility import compute_visibility_mask, pool_mask_to_patches
from model.tokenizer import grid_spec
from render.figures import save_png, tile, upscale, visibility_mask_image
from render.palettes import mask_color
from sim.dataset import SceneDataset
from train.checkpoint import load_checkpoint, restore_model


def main() -> None:
    parser = argparse.ArgumentParser(description="Render DriveTok visualizations")
    parser.add_argument("--ckpt", type=str, required=True, help="Checkpoint path")
    parser.add_argument("--split", type=str, default="val", choices=["train", "val"])
    parser.add_argument("--data-root", type=str, default=None)
    parser.add_argument("--output", type=str, default=None, help="Output directory")
    parser.add_argument("--samples", type=int, default=4, help="Samples with qualitative dumps")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    out = ensure_dir(args.output or Path(args.ckpt).parent / "viz")
    dataset = SceneDataset(args.data_root or cfg.data.root, args.split, depth_target=cfg.data.depth_target)

    grid = grid_spec(cfg)
    mask = compute_visibility_mask(dataset.rig, grid)
    save_png(out / "visibility_cells.png", visibility_mask_image(mask, grid))
    patches = pool_mask_to_patches(mask, grid, cfg.decoder.bev_patch)
    gh, gw = grid.H_b // cfg.decoder.bev_patch, grid.W_b // cfg.decoder.bev_patch
    panels = [upscale(mask_color(p.reshape(gh, gw)[::-1]), 8) for p in patches]
    save_png(out / "visibility_patches.png", tile(panels))
    logging.info(f"Visibility masks written to {out}")

    model = restore_model(ckpt, cfg, model_dtype(cfg)).to(resolve_device(cfg.train.device))
    evaluate_model(model, dataset, max_samples=args.samples, step=ckpt.step, split=args.split,
                   dump_dir=out / "samples", dump_count=args.samples)
    logging.info(f"Qualitative dumps written to {out / 'samples'}")


if __name__ == "__main__":
    main()
