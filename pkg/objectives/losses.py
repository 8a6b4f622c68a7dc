"""Joint training objective: reconstruction, depth, semantics, occupancy and BEV regularization.

Dense predictions are channel-first: images (..., 3, H, W), logits (..., C, H, W),
occupancy logits (B, C, X, Y, Z).
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from config_io.config import LossWeights
from config_io.schema import IGNORE_LABEL, RejectedInputError, ShapeMismatchError, Task
from objectives.lovasz import lovasz_softmax

logger = logging.getLogger(__name__)


@dataclass
class LossTerm:
    value: Tensor
    empty: bool = False


@dataclass
class LossReport:
    total: Tensor
    terms: dict[str, float] = field(default_factory=dict)
    weighted: dict[str, float] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)
    step: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "total": float(self.total.detach()),
            "terms": self.terms,
            "weighted": self.weighted,
            "flags": self.flags,
        }


def _zero(like: Tensor) -> Tensor:
    return like.sum() * 0.0


def charbonnier(r: Tensor, eps: float) -> Tensor:
    return torch.sqrt(r * r + eps * eps)


# ── RGB ────────────────────────────────────────────────────────────────────

class Discriminator(nn.Module, ABC):
    """Adversarial critic for reconstructions. No implementation is bundled."""

    @abstractmethod
    def generator_loss(self, fake: Tensor) -> Tensor:
        """Non-negative loss the generator minimizes on its reconstructions."""


class RandomFeaturePerceptual(nn.Module):
    """Feature-space L1 under a frozen, randomly initialized conv stack."""

    def __init__(self, widths: tuple[int, ...] = (16, 32, 64), seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers: list[nn.Module] = []
        c_in = 3
        for c_out in widths:
            conv = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (9 * c_in)) ** 0.5)
                conv.bias.zero_()
            layers += [conv, nn.ReLU()]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.requires_grad_(False)

    def forward(self, pred: Tensor, target: Tensor) -> Tensor:
        p = pred.reshape(-1, *pred.shape[-3:])
        t = target.reshape(-1, *target.shape[-3:])
        loss = _zero(pred)
        x, y = p, t
        for layer in self.features:
            x, y = layer(x), layer(y)
            if isinstance(layer, nn.ReLU):
                loss = loss + (x - y).abs().mean()
        return loss


def rgb_loss(
    pred: Tensor,
    target: Tensor,
    weights: LossWeights,
    perceptual: nn.Module | None = None,
    discriminator: Discriminator | None = None,
) -> LossTerm:
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"rgb pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    loss = weights.pix * (pred - target).abs().mean()
    if perceptual is not None and weights.perc > 0:
        loss = loss + weights.perc * perceptual(pred, target)
    if discriminator is not None and weights.adv > 0:
        loss = loss + weights.adv * discriminator.generator_loss(pred)
    return LossTerm(loss)


# ── Depth ──────────────────────────────────────────────────────────────────

def depth_loss(pred: Tensor, target: Tensor, valid: Tensor, weights: LossWeights) -> LossTerm:
    """Charbonnier data term plus Charbonnier on forward-difference gradients.

    pred, target, valid: (..., H, W). Gradient pairs count only when both pixels are valid.
    """
    if pred.shape != target.shape or pred.shape != valid.shape:
        raise ShapeMismatchError(
            f"depth pred {tuple(pred.shape)}, target {tuple(target.shape)}, mask {tuple(valid.shape)}"
        )
    valid = valid.bool()
    if not valid.any():
        logger.warning("Depth supervision is empty for this batch")
        return LossTerm(_zero(pred), empty=True)
    eps = weights.charb_eps
    r = pred - target
    loss = charbonnier(r[valid], eps).mean()
    if weights.grad > 0:
        for dim in (-1, -2):
            n = r.shape[dim]
            if n < 2:
                continue
            dr = r.narrow(dim, 1, n - 1) - r.narrow(dim, 0, n - 1)
            pair = valid.narrow(dim, 1, n - 1) & valid.narrow(dim, 0, n - 1)
            if pair.any():
                loss = loss + weights.grad * charbonnier(dr[pair], eps).mean()
    return LossTerm(loss)


# ── Semantics ──────────────────────────────────────────────────────────────

def _flatten_channel_first(logits: Tensor, labels: Tensor) -> tuple[Tensor, Tensor]:
    """(B, C, *S) logits and (B, *S) labels -> (P, C), (P,)."""
    c = logits.shape[1]
    return logits.movedim(1, -1).reshape(-1, c), labels.reshape(-1)


def _check_labels(labels: Tensor, num_classes: int, ignore: int) -> None:
    bad = (labels != ignore) & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise RejectedInputError(f"labels outside [0, {num_classes}) and != {ignore}")


def sem_loss(logits: Tensor, labels: Tensor, ignore: int = IGNORE_LABEL) -> LossTerm:
    """Mean cross-entropy over pixels whose label is not `ignore`.

    logits: (..., C, H, W); labels: (..., H, W).
    """
    lg = logits.reshape(-1, *logits.shape[-3:])
    lb = labels.reshape(-1, *labels.shape[-2:]).long()
    if lg.shape[0] != lb.shape[0] or lg.shape[-2:] != lb.shape[-2:]:
        raise ShapeMismatchError(f"sem logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    _check_labels(lb, lg.shape[1], ignore)
    if not (lb != ignore).any():
        logger.warning("Semantic supervision is empty for this batch")
        return LossTerm(_zero(logits), empty=True)
    return LossTerm(F.cross_entropy(lg, lb, ignore_index=ignore, reduction="mean"))


# ── Occupancy / BEV regularization ─────────────────────────────────────────

def ce_lovasz(logits: Tensor, labels: Tensor, weights: LossWeights, ignore: int = IGNORE_LABEL) -> LossTerm:
    """Cross-entropy + lambda_lovasz * Lovász-Softmax on channel-first logits."""
    if logits.shape[0] != labels.shape[0] or logits.shape[2:] != labels.shape[1:]:
        raise ShapeMismatchError(f"logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    flat_logits, flat_labels = _flatten_channel_first(logits, labels.long())
    _check_labels(flat_labels, flat_logits.shape[1], ignore)
    if not (flat_labels != ignore).any():
        logger.warning(f"Label supervision is empty for logits {tuple(logits.shape)}")
        return LossTerm(_zero(logits), empty=True)
    ce = F.cross_entropy(flat_logits, flat_labels, ignore_index=ignore, reduction="mean")
    if weights.lovasz > 0:
        ce = ce + weights.lovasz * lovasz_softmax(flat_logits.softmax(dim=-1), flat_labels, ignore)
    return LossTerm(ce)


def occ_loss(occ_logits: Tensor, occ_labels: Tensor, weights: LossWeights) -> LossTerm:
    """occ_logits (B, C, X, Y, Z); occ_labels (B, X, Y, Z)."""
    return ce_lovasz(occ_logits, occ_labels, weights)


def reg_loss(token_logits: Tensor, bev_labels: Tensor, weights: LossWeights) -> LossTerm:
    """token_logits (B, C, h, w) from the auxiliary classifier; bev_labels (B, h, w)."""
    return ce_lovasz(token_logits, bev_labels, weights)


# ── Total ──────────────────────────────────────────────────────────────────

TASK_WEIGHT_FIELD: dict[Task, str] = {
    Task.RECON: "rgb",
    Task.DEPTH: "depth",
    Task.SEM: "sem",
    Task.OCC: "occ",
    Task.REG: "reg",
}


def total_loss(terms: dict[Task, LossTerm], weights: LossWeights, step: int | None = None) -> LossReport:
    """Weighted sum of task terms; missing tasks contribute nothing.

    With no terms at all the total is a zero leaf that still accepts backward().
    """
    total: Tensor | None = None
    report = LossReport(total=torch.zeros((), requires_grad=True), step=step)
    for task, term in terms.items():
        lam = getattr(weights, TASK_WEIGHT_FIELD[task])
        weighted = lam * term.value
        total = weighted if total is None else total + weighted
        report.terms[task.value] = float(term.value.detach())
        report.weighted[task.value] = float(weighted.detach())
        report.flags[f"{task.value}_empty"] = term.empty
    if total is not None:
        report.total = total
    return report
