"""BEV regularization targets derived from occupancy labels."""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor

from config_io.schema import SemanticClass


def inverse_frequency_weights(counts: np.ndarray) -> np.ndarray:
    """Per-class weights proportional to 1 / frequency, mean 1 over observed classes.

    Classes never observed get weight 0.
    """
    counts = np.asarray(counts, dtype=np.float64)
    weights = np.zeros_like(counts)
    seen = counts > 0
    if not seen.any():
        return weights
    weights[seen] = counts[seen].sum() / counts[seen]
    weights[seen] /= weights[seen].mean()
    return weights


def _block_index(size: int, blocks: int, device: torch.device) -> Tensor:
    """Block id of each index when [0, size) is cut at floor(k * size / blocks)."""
    bounds = torch.tensor([(k * size) // blocks for k in range(1, blocks)], device=device)
    return torch.bucketize(torch.arange(size, device=device), bounds, right=True)


def column_labels(occ: Tensor, class_weights: Tensor, empty_class: int = int(SemanticClass.EMPTY)) -> Tensor:
    """Per (x, y) column: the occupied class with the largest weight, else empty.

    occ: (..., X, Y, Z) integer labels.
    """
    w = class_weights.to(torch.float64)[occ.long()]
    w = torch.where(occ == empty_class, torch.full_like(w, -torch.inf), w)
    best = w.argmax(dim=-1, keepdim=True)
    picked = torch.gather(occ.long(), -1, best).squeeze(-1)
    any_occupied = (occ != empty_class).any(dim=-1)
    return torch.where(any_occupied, picked, torch.full_like(picked, empty_class))


def bev_reg_labels(
    occ: Tensor,
    class_weights: Tensor,
    bev_shape: tuple[int, int],
    num_classes: int,
    empty_class: int = int(SemanticClass.EMPTY),
) -> Tensor:
    """Importance-weighted column labels majority-voted down to the token grid.

    occ: (B, X, Y, Z) -> (B, h, w). Vote ties resolve to the smaller class id.
    """
    cols = column_labels(occ, class_weights, empty_class)
    b, X, Y = cols.shape
    h, w = bev_shape
    rows = _block_index(X, h, cols.device)
    colsi = _block_index(Y, w, cols.device)
    votes = torch.zeros(b, h, w, num_classes, dtype=torch.int64, device=cols.device)
    bi = torch.arange(b, device=cols.device)[:, None, None].expand(b, X, Y)
    ri = rows[None, :, None].expand(b, X, Y)
    ci = colsi[None, None, :].expand(b, X, Y)
    votes.index_put_((bi, ri, ci, cols), torch.ones_like(cols), accumulate=True)
    return votes.argmax(dim=-1)
