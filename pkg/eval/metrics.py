"""Evaluation metrics: PSNR, SSIM, depth errors, occupancy IoU/mIoU, semantic accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, Field

from config_io.schema import IGNORE_LABEL, RejectedInputError, SemanticClass, ShapeMismatchError

PSNR_CAP: float = 99.0
SSIM_C1: float = 0.01 ** 2
SSIM_C2: float = 0.03 ** 2


# ── Image quality ──────────────────────────────────────────────────────────

def psnr(pred: np.ndarray, target: np.ndarray, cap: float = PSNR_CAP) -> float:
    """10*log10(1/MSE) for images in [0, 1]; identical images return `cap`."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"psnr shapes differ: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse <= 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable Gaussian filter over the last two axes, valid windows only."""
    k = g.shape[0]
    rows = sliding_window_view(img, k, axis=-2) @ g
    return sliding_window_view(rows, k, axis=-1) @ g


def ssim(pred: np.ndarray, target: np.ndarray, window: int = 11, sigma: float = 1.5,
         channel_axis: int | None = None) -> float:
    """Mean local SSIM over valid windows.

    Images are (..., H, W) planes in [0, 1]; every leading plane (or every channel
    when `channel_axis` is given) is scored separately and the results averaged.
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"ssim shapes differ: {x.shape} vs {y.shape}")
    if channel_axis is not None:
        x = np.moveaxis(x, channel_axis, 0)
        y = np.moveaxis(y, channel_axis, 0)
    if x.ndim < 2 or x.shape[-2] < window or x.shape[-1] < window:
        raise RejectedInputError(f"image {x.shape[-2:]} is smaller than the {window}x{window} SSIM window")
    g = gaussian_window(window, sigma)
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x ** 2
    syy = _filter_valid(y * y, g) - mu_y ** 2
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


# ── Depth ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DepthScores:
    absrel: float
    delta_1_25: float
    count: int


def _depth_terms(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"depth shapes differ: {pred.shape} vs {target.shape}")
    m = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != pred.shape:
        raise ShapeMismatchError(f"depth mask {m.shape} vs depth {pred.shape}")
    if not m.any():
        raise RejectedInputError("depth metrics need at least one valid pixel")
    p, t = pred[m], target[m]
    if np.any(p <= 0) or np.any(t <= 0):
        raise RejectedInputError("depth metrics need positive depths on the mask")
    rel = np.abs(p - t) / t
    ratio_ok = np.maximum(p / t, t / p) < 1.25
    return rel, ratio_ok


def depth_metrics(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> DepthScores:
    rel, ok = _depth_terms(pred, target, mask)
    return DepthScores(absrel=float(rel.mean()), delta_1_25=float(ok.mean()), count=int(rel.size))


# ── Semantics ──────────────────────────────────────────────────────────────

def semantic_accuracy(pred_labels: np.ndarray, gt_labels: np.ndarray, ignore: int = IGNORE_LABEL) -> float:
    """Pixel accuracy on supervised pixels."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ShapeMismatchError(f"label shapes differ: {pred_labels.shape} vs {gt_labels.shape}")
    sup = gt_labels != ignore
    if not sup.any():
        raise RejectedInputError("no supervised pixels")
    return float(np.mean(pred_labels[sup] == gt_labels[sup]))


# ── Occupancy ──────────────────────────────────────────────────────────────

def class_name(c: int) -> str:
    try:
        return SemanticClass(c).name.lower()
    except ValueError:
        return f"class_{c}"


@dataclass(frozen=True)
class OccupancyScores:
    iou: float
    miou: float
    per_class: dict[str, float]


@dataclass
class OccupancyConfusion:
    """Confusion counts accumulated over a split; rows are GT, columns prediction."""
    num_classes: int
    empty_class: int = int(SemanticClass.EMPTY)
    ignore: int = IGNORE_LABEL
    counts: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)

    def update(self, pred_labels: np.ndarray, gt_labels: np.ndarray) -> None:
        pred_labels = np.asarray(pred_labels)
        gt_labels = np.asarray(gt_labels)
        if pred_labels.shape != gt_labels.shape:
            raise ShapeMismatchError(f"occupancy grids differ: {pred_labels.shape} vs {gt_labels.shape}")
        keep = gt_labels != self.ignore
        gt = gt_labels[keep].astype(np.int64)
        pr = pred_labels[keep].astype(np.int64)
        if gt.size and (gt.max() >= self.num_classes or pr.max() >= self.num_classes or min(gt.min(), pr.min()) < 0):
            raise RejectedInputError(f"occupancy labels outside [0, {self.num_classes})")
        np.add.at(self.counts, (gt, pr), 1)

    def scores(self) -> OccupancyScores:
        cm = self.counts
        e = self.empty_class
        total = cm.sum()
        # occupied vs empty
        pred_occupied = total - cm[:, e].sum()
        both = total - cm[e].sum() - cm[:, e].sum() + cm[e, e]
        union = total - cm[e, e]
        iou = 1.0 if union == 0 else float(both / union)

        per_class: dict[str, float] = {}
        for c in range(self.num_classes):
            if c == e or cm[c].sum() == 0:
                continue
            inter = cm[c, c]
            u = cm[c].sum() + cm[:, c].sum() - inter
            per_class[class_name(c)] = float(inter / u)
        if per_class:
            miou = float(np.mean(list(per_class.values())))
        else:
            # nothing occupied in GT: perfect only if nothing is predicted either
            miou = 1.0 if pred_occupied == 0 else 0.0
        return OccupancyScores(iou=iou, miou=miou, per_class=per_class)


def occupancy_metrics(
    pred_labels: np.ndarray,
    gt_labels: np.ndarray,
    empty_class: int = int(SemanticClass.EMPTY),
    num_classes: int | None = None,
) -> OccupancyScores:
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ShapeMismatchError(f"occupancy grids differ: {pred_labels.shape} vs {gt_labels.shape}")
    if num_classes is None:
        valid = gt_labels[gt_labels != IGNORE_LABEL]
        hi = max(int(pred_labels.max(initial=0)), int(valid.max(initial=0)), empty_class)
        num_classes = hi + 1
    conf = OccupancyConfusion(num_classes, empty_class)
    conf.update(pred_labels, gt_labels)
    return conf.scores()


# ── Report ─────────────────────────────────────────────────────────────────

class EvalReport(BaseModel):
    """Split-level metrics. Fields are None for tasks that were not evaluated."""
    split: str = "val"
    step: int | None = None
    config_hash: str | None = None
    psnr: float | None = None
    ssim: float | None = Field(default=None, ge=-1.0, le=1.0)
    absrel: float | None = Field(default=None, ge=0.0)
    delta_1_25: float | None = Field(default=None, ge=0.0, le=1.0)
    iou: float | None = Field(default=None, ge=0.0, le=1.0)
    miou: float | None = Field(default=None, ge=0.0, le=1.0)
    per_class_iou: dict[str, float] = Field(default_factory=dict)
    sem_accuracy: float | None = Field(default=None, ge=0.0, le=1.0)
    num_samples: int = 0
    num_images: int = 0
    num_depth_pixels: int = 0
    num_sem_pixels: int = 0
    num_voxels: int = 0
    per_sample: list[dict[str, Any]] = Field(default_factory=list)


class MetricAccumulator:
    """Feed per-sample predictions, then `report()`.

    Image metrics average over images; depth and semantic metrics pool pixels;
    occupancy accumulates one confusion matrix over the whole split.
    """

    def __init__(self, num_occ_classes: int, empty_class: int = int(SemanticClass.EMPTY)):
        self.confusion = OccupancyConfusion(num_occ_classes, empty_class)
        self._psnr: list[float] = []
        self._ssim: list[float] = []
        self._rel_sum = 0.0
        self._ok_sum = 0
        self._depth_n = 0
        self._sem_hit = 0
        self._sem_n = 0
        self._voxels = 0
        self.per_sample: list[dict[str, Any]] = []

    def add(
        self,
        name: str,
        rgb: tuple[np.ndarray, np.ndarray] | None = None,
        depth: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
        sem: tuple[np.ndarray, np.ndarray] | None = None,
        occ: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> dict[str, Any]:
        """rgb (pred, target) as (N, 3, H, W); depth (pred, target, mask) as (N, H, W);
        sem (pred labels, gt labels) as (N, H, W); occ (pred, gt) as (X, Y, Z)."""
        row: dict[str, Any] = {"name": name}
        if rgb is not None:
            pred, target = rgb
            ps = [psnr(p, t) for p, t in zip(pred, target)]
            ss = [ssim(p, t, channel_axis=0) for p, t in zip(pred, target)]
            self._psnr.extend(ps)
            self._ssim.extend(ss)
            row["psnr"] = float(np.mean(ps))
            row["ssim"] = float(np.mean(ss))
        if depth is not None and np.asarray(depth[2]).any():
            rel, ok = _depth_terms(*depth)
            self._rel_sum += float(rel.sum())
            self._ok_sum += int(ok.sum())
            self._depth_n += rel.size
            row["absrel"] = float(rel.mean())
            row["delta_1_25"] = float(ok.mean())
        if sem is not None:
            pred, gt = (np.asarray(a) for a in sem)
            sup = gt != IGNORE_LABEL
            if sup.any():
                self._sem_hit += int(np.sum(pred[sup] == gt[sup]))
                self._sem_n += int(sup.sum())
                row["sem_accuracy"] = semantic_accuracy(pred, gt)
        if occ is not None:
            pred, gt = occ
            self.confusion.update(pred, gt)
            self._voxels += int(np.asarray(gt).size)
            s = occupancy_metrics(pred, gt, self.confusion.empty_class, self.confusion.num_classes)
            row["iou"] = s.iou
            row["miou"] = s.miou
        self.per_sample.append(row)
        return row

    def report(self, split: str = "val", step: int | None = None, config_hash: str | None = None) -> EvalReport:
        r = EvalReport(split=split, step=step, config_hash=config_hash,
                       num_samples=len(self.per_sample), num_images=len(self._psnr),
                       num_depth_pixels=self._depth_n, num_sem_pixels=self._sem_n,
                       num_voxels=self._voxels, per_sample=list(self.per_sample))
        if self._psnr:
            r.psnr = float(np.mean(self._psnr))
            r.ssim = float(np.clip(np.mean(self._ssim), -1.0, 1.0))
        if self._depth_n:
            r.absrel = self._rel_sum / self._depth_n
            r.delta_1_25 = self._ok_sum / self._depth_n
        if self._sem_n:
            r.sem_accuracy = self._sem_hit / self._sem_n
        if self._voxels:
            s = self.confusion.scores()
            r.iou, r.miou, r.per_class_iou = s.iou, s.miou, s.per_class
        return r
