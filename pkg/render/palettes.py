"""Color palettes for semantic labels, depth and masks."""

from __future__ import annotations

import numpy as np

from config_io.schema import IGNORE_LABEL, SemanticClass

# RGB tuples for semantic classes
CLASS_COLORS: dict[SemanticClass, tuple[int, int, int]] = {
    SemanticClass.EMPTY:      (0, 0, 0),
    SemanticClass.ROAD:       (128, 64, 128),
    SemanticClass.CAR:        (0, 0, 142),
    SemanticClass.BUILDING:   (70, 70, 70),
    SemanticClass.VEGETATION: (107, 142, 35),
    SemanticClass.PEDESTRIAN: (220, 20, 60),
}

IGNORE_COLOR: tuple[int, int, int] = (40, 40, 40)


def class_lut(num_classes: int = 256) -> np.ndarray:
    """(num_classes, 3) uint8 lookup; ids without a named class get a hashed color."""
    lut = np.zeros((max(num_classes, IGNORE_LABEL + 1), 3), dtype=np.uint8)
    rng = np.random.default_rng(33)
    lut[:] = rng.integers(60, 230, size=lut.shape, dtype=np.uint8)
    for c, rgb in CLASS_COLORS.items():
        lut[int(c)] = rgb
    lut[IGNORE_LABEL] = IGNORE_COLOR
    return lut


def colorize_labels(labels: np.ndarray) -> np.ndarray:
    """Integer labels (...) -> uint8 RGB (..., 3)."""
    return class_lut()[np.asarray(labels, dtype=np.int64).clip(0, IGNORE_LABEL)]


def depth_color(depth: np.ndarray, max_depth: float = 60.0, valid: np.ndarray | None = None) -> np.ndarray:
    """Map depth to a near-warm / far-cool gradient. Invalid pixels are black."""
    f = np.clip(np.asarray(depth, dtype=np.float64) / max_depth, 0.0, 1.0)
    r = (1.0 - f) * 255
    g = (1.0 - np.abs(f - 0.5) * 2) * 160
    b = f * 255
    out = np.stack([r, g, b], axis=-1).astype(np.uint8)
    if valid is not None:
        out[~np.asarray(valid, dtype=bool)] = 0
    return out


def mask_color(mask: np.ndarray) -> np.ndarray:
    """Boolean mask -> white on dark gray."""
    m = np.asarray(mask, dtype=bool)
    out = np.full(m.shape + (3,), 30, dtype=np.uint8)
    out[m] = 235
    return out
