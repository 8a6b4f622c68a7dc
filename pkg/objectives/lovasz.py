"""Lovász-Softmax: a convex surrogate of per-class Jaccard loss."""

from __future__ import annotations

import torch
from torch import Tensor

from config_io.schema import IGNORE_LABEL


def lovasz_grad(gt_sorted: Tensor) -> Tensor:
    """Gradient of the Lovász extension of the Jaccard loss w.r.t. sorted errors."""
    gts = gt_sorted.sum()
    intersection = gts - gt_sorted.cumsum(0)
    union = gts + (1.0 - gt_sorted).cumsum(0)
    jaccard = 1.0 - intersection / union
    if gt_sorted.shape[0] > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1].clone()
    return jaccard


def lovasz_softmax(probs: Tensor, labels: Tensor, ignore: int = IGNORE_LABEL) -> Tensor:
    """Mean over classes present in `labels` of the Lovász extension of 1 - IoU.

    probs: (P, C) class probabilities; labels: (P,) integer class ids.
    Errors are sorted in descending order with a stable sort so ties keep index order.
    """
    probs = probs.reshape(-1, probs.shape[-1])
    labels = labels.reshape(-1)
    keep = labels != ignore
    probs, labels = probs[keep], labels[keep]
    if labels.numel() == 0:
        return probs.sum() * 0.0
    losses = []
    for c in torch.unique(labels).tolist():
        fg = (labels == c).to(probs.dtype)
        errors = (fg - probs[:, c]).abs()
        errors_sorted, perm = torch.sort(errors, descending=True, stable=True)
        losses.append(torch.dot(errors_sorted, lovasz_grad(fg[perm])))
    return torch.stack(losses).mean()
