"""Qualitative images: reconstructions, depth, semantics, occupancy slices, masks and token PCA.

PNG output goes through imageio. Metric plots need matplotlib (the `viz` extra).
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import imageio.v3 as iio
import numpy as np

from config_io.config import ExperimentConfig
from config_io.schema import SemanticClass
from geometry.cameras import BevGridSpec
from geometry.visibility import VisibilityMask
from render.palettes import colorize_labels, depth_color, mask_color

logger = logging.getLogger(__name__)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def tile(images: list[np.ndarray], cols: int | None = None, pad: int = 2) -> np.ndarray:
    """Lay equally sized (H, W, 3) uint8 images on a grid."""
    if not images:
        raise ValueError("nothing to tile")
    h, w = images[0].shape[:2]
    cols = cols or len(images)
    rows = (len(images) + cols - 1) // cols
    canvas = np.full((rows * (h + pad) - pad, cols * (w + pad) - pad, 3), 255, dtype=np.uint8)
    for k, im in enumerate(images):
        r, c = divmod(k, cols)
        canvas[r * (h + pad): r * (h + pad) + h, c * (w + pad): c * (w + pad) + w] = im
    return canvas


def save_png(path: str | Path, image: np.ndarray) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    iio.imwrite(p, image)
    return p


def upscale(image: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(image, factor, axis=0), factor, axis=1)


# ── Scene tokens ───────────────────────────────────────────────────────────

def bev_token_pca(tokens: np.ndarray) -> np.ndarray:
    """Project (H, W, C) tokens on their top 3 principal components -> (H, W, 3) uint8."""
    h, w, c = tokens.shape
    x = np.asarray(tokens, dtype=np.float64).reshape(-1, c)
    x = x - x.mean(axis=0)
    eigval, eigvec = np.linalg.eigh(x.T @ x)
    # largest to smallest
    comps = eigvec[:, np.argsort(eigval)[::-1][:3]]
    if comps.shape[1] < 3:
        comps = np.pad(comps, ((0, 0), (0, 3 - comps.shape[1])))
    # fix the sign so the largest loading is positive
    signs = np.sign(comps[np.abs(comps).argmax(axis=0), np.arange(3)])
    signs[signs == 0] = 1.0
    proj = x @ (comps * signs)
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    proj = (proj - lo) / np.where(hi > lo, hi - lo, 1.0)
    return to_uint8(proj.reshape(h, w, 3))


def visibility_mask_image(mask: VisibilityMask, grid: BevGridSpec, scale: int = 4) -> np.ndarray:
    """One top-down panel per camera, x (forward) pointing up."""
    panels = [upscale(mask_color(m[::-1]), scale) for m in mask.as_grid(grid)]
    return tile(panels)


# ── Occupancy ──────────────────────────────────────────────────────────────

def occupancy_top_down(labels: np.ndarray, empty: int = int(SemanticClass.EMPTY)) -> np.ndarray:
    """Highest non-empty class per column -> (X, Y, 3), x pointing up."""
    occupied = labels != empty
    z = labels.shape[-1]
    top = np.where(occupied.any(axis=-1), z - 1 - np.argmax(occupied[..., ::-1], axis=-1), 0)
    picked = np.take_along_axis(labels, top[..., None], axis=-1)[..., 0]
    picked = np.where(occupied.any(axis=-1), picked, empty)
    return colorize_labels(picked[::-1])


def occupancy_slices(labels: np.ndarray, scale: int = 2) -> np.ndarray:
    """Every height slice of an (X, Y, Z) label grid, bottom slice first."""
    return tile([upscale(colorize_labels(labels[:, :, k][::-1]), scale) for k in range(labels.shape[-1])],
                cols=min(8, labels.shape[-1]))


# ── Per-sample dump ────────────────────────────────────────────────────────

def dump_qualitative(out_dir: str | Path, item: dict[str, Any], pred: dict[str, np.ndarray],
                     out: Any, config: ExperimentConfig) -> None:
    """Write side-by-side prediction / target images for one sample."""
    out_dir = Path(out_dir)
    gt_rgb = item["images"].double().numpy().transpose(0, 2, 3, 1)
    if "rgb" in pred:
        rows = [to_uint8(im) for im in gt_rgb] + [to_uint8(im) for im in pred["rgb"].transpose(0, 2, 3, 1)]
        save_png(out_dir / "rgb.png", tile(rows, cols=len(gt_rgb)))
    if "depth" in pred:
        valid = item["depth_valid"].numpy()
        gt = item["depth_gt"].double().numpy()
        rows = [depth_color(d, valid=v) for d, v in zip(gt, valid)] + [depth_color(d) for d in pred["depth"]]
        save_png(out_dir / "depth.png", tile(rows, cols=len(gt)))
    if "sem" in pred:
        gt = item["semantics"].numpy()
        rows = [colorize_labels(s) for s in gt] + [colorize_labels(s) for s in pred["sem"]]
        save_png(out_dir / "semantics.png", tile(rows, cols=len(gt)))
    if "occ" in pred:
        gt = item["occupancy"].numpy()
        save_png(out_dir / "occupancy_top.png",
                 tile([upscale(occupancy_top_down(gt), 4), upscale(occupancy_top_down(pred["occ"]), 4)]))
        save_png(out_dir / "occupancy_slices_pred.png", occupancy_slices(pred["occ"]))
        save_png(out_dir / "occupancy_slices_gt.png", occupancy_slices(gt))
    tokens = out.scene.tokens[0].detach().double().cpu().numpy()
    save_png(out_dir / "bev_pca.png", upscale(bev_token_pca(tokens[::-1]), 4))


# ── Metric plots ───────────────────────────────────────────────────────────

def _pyplot():
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib not installed; skipping plots (pip install '.[viz]')")
        return None
    return plt


def plot_loss_curves(runs: dict[str, list[dict[str, Any]]], path: str | Path, smooth: int = 20) -> Path | None:
    """runs: name -> train records from MetricsLogger.load(kind="train")."""
    plt = _pyplot()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(8, 5))
    for name, recs in runs.items():
        if not recs:
            continue
        steps = np.array([r["step"] for r in recs])
        total = np.array([r["total"] for r in recs], dtype=np.float64)
        k = max(1, min(smooth, len(total)))
        smoothed = np.convolve(total, np.ones(k) / k, mode="valid")
        ax.plot(steps[k - 1:], smoothed, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=150)
    plt.close(fig)
    return p


def plot_per_class_iou(reports: dict[str, dict[str, float]], path: str | Path) -> Path | None:
    """reports: run name -> per-class IoU dict."""
    plt = _pyplot()
    if plt is None:
        return None
    classes = sorted({c for r in reports.values() for c in r})
    if not classes:
        return None
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(classes)), 4))
    width = 0.8 / max(1, len(reports))
    x = np.arange(len(classes))
    for k, (name, per_class) in enumerate(reports.items()):
        ax.bar(x + k * width, [per_class.get(c, 0.0) for c in classes], width, label=name)
    ax.set_xticks(x + width * (len(reports) - 1) / 2)
    ax.set_xticklabels(classes)
    ax.set_ylim(0, 1)
    ax.set_ylabel("IoU")
    ax.legend()
    fig.tight_layout()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=150)
    plt.close(fig)
    return p
