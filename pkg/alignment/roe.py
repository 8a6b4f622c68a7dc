"""Robust affine alignment of pseudo depth to sparse metric anchors.

The fit solves (a*, b*) = argmin sum_i rho(a * d~_i + b - d_i) over anchors by
iteratively reweighted least squares started from the plain LS solution. Robust
losses are followed by a trimmed LS refit on anchors whose residual stays within
trim_factor * delta.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from config_io.config import RobustFitConfig
from config_io.schema import InsufficientAnchorsError, RejectedInputError, RobustLoss

logger = logging.getLogger(__name__)

MIN_DEPTH: float = 1e-3
MIN_SCALE: float = 1e-6


@dataclass(frozen=True)
class SparseAnchors:
    """Metric depth at sparse integer pixel locations of one image."""
    uv: np.ndarray     # (K, 2) pixel (u, v)
    depth: np.ndarray  # (K,) meters
    valid: np.ndarray  # (K,) bool

    def __post_init__(self) -> None:
        uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
        depth = np.asarray(self.depth, dtype=np.float64).reshape(-1)
        valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if not (uv.shape[0] == depth.shape[0] == valid.shape[0]):
            raise RejectedInputError("anchor uv, depth and valid must have the same length")
        if np.any(valid & ~(depth > 0)):
            raise RejectedInputError("valid anchors must have positive depth")
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    def __len__(self) -> int:
        return self.depth.shape[0]

    @property
    def num_valid(self) -> int:
        return int(self.valid.sum())

    def gather(self, dense: np.ndarray) -> np.ndarray:
        """Values of an (H, W) map at the valid anchor pixels."""
        uv = np.rint(self.uv[self.valid]).astype(np.int64)
        return np.asarray(dense, dtype=np.float64)[uv[:, 1], uv[:, 0]]

    def to_array(self) -> np.ndarray:
        """(K, 4) rows of (u, v, depth, valid)."""
        return np.column_stack([self.uv, self.depth, self.valid.astype(np.float64)])

    @staticmethod
    def from_array(arr: np.ndarray) -> "SparseAnchors":
        arr = np.asarray(arr, dtype=np.float64)
        return SparseAnchors(arr[:, :2], arr[:, 2], arr[:, 3] > 0.5)


@dataclass(frozen=True)
class AffineFit:
    a_star: float
    b_star: float
    inlier_fraction: float
    iterations_used: int
    residuals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "a_star": self.a_star,
            "b_star": self.b_star,
            "inlier_fraction": self.inlier_fraction,
            "iterations_used": self.iterations_used,
        }


# ── Fitting ────────────────────────────────────────────────────────────────

def _weighted_lstsq(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, float] | None:
    """Closed-form weighted 2-parameter LS; None when the system is rank deficient."""
    sw = np.sqrt(w)
    A = np.column_stack([x * sw, sw])
    sol, _, rank, _ = np.linalg.lstsq(A, y * sw, rcond=None)
    if rank < 2:
        return None
    return float(sol[0]), float(sol[1])


def _robust_weights(r: np.ndarray, cfg: RobustFitConfig) -> np.ndarray:
    abs_r = np.abs(r)
    if cfg.loss == RobustLoss.HUBER:
        return np.where(abs_r <= cfg.delta, 1.0, cfg.delta / np.maximum(abs_r, 1e-300))
    if cfg.loss == RobustLoss.TUKEY:
        u = r / cfg.tukey_c
        return np.where(abs_r < cfg.tukey_c, (1.0 - u * u) ** 2, 0.0)
    return np.ones_like(r)


def _affine_map(x: np.ndarray, a: float, b: float) -> np.ndarray:
    return np.maximum(a * x + b, MIN_DEPTH)


def roe_fit(
    pseudo: np.ndarray,
    anchors: SparseAnchors,
    cfg: RobustFitConfig | None = None,
) -> AffineFit:
    """Fit d ~ a * pseudo + b on the valid anchors."""
    cfg = cfg or RobustFitConfig()
    x = anchors.gather(pseudo)
    y = anchors.depth[anchors.valid]
    if x.shape[0] < 2:
        raise InsufficientAnchorsError(f"need at least 2 valid anchors, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise RejectedInputError("pseudo depth and anchors must be finite at anchor pixels")
    if np.ptp(x) == 0.0:
        raise InsufficientAnchorsError("all anchors share the same pseudo depth value")

    init = _weighted_lstsq(x, y, np.ones_like(x))
    if init is None:
        raise InsufficientAnchorsError("anchor system is rank deficient")
    a, b = init
    iterations = 0

    if cfg.loss != RobustLoss.SQUARED:
        for iterations in range(1, cfg.max_iter + 1):
            w = _robust_weights(a * x + b - y, cfg)
            step = _weighted_lstsq(x, y, w) if np.count_nonzero(w) >= 2 else None
            if step is None:
                logger.warning("Robust refit became rank deficient; keeping previous iterate")
                break
            change = max(abs(step[0] - a), abs(step[1] - b))
            a, b = step
            if change < cfg.tol:
                break

        keep = np.abs(a * x + b - y) <= cfg.trim_factor * cfg.delta
        if keep.sum() >= 2 and np.ptp(x[keep]) > 0:
            refit = _weighted_lstsq(x[keep], y[keep], np.ones(int(keep.sum())))
            if refit is not None:
                a, b = refit

    a = max(a, MIN_SCALE)
    residuals = _affine_map(x, a, b) - y
    inliers = float(np.mean(np.abs(residuals) <= cfg.trim_factor * cfg.delta))
    return AffineFit(a_star=a, b_star=b, inlier_fraction=inliers,
                     iterations_used=iterations, residuals=residuals)


def align(pseudo: np.ndarray, fit: AffineFit) -> np.ndarray:
    """Dense metric depth a* * pseudo + b*, clamped to MIN_DEPTH."""
    return _affine_map(np.asarray(pseudo, dtype=np.float64), fit.a_star, fit.b_star)
