"""Enumerations and typed errors shared across the tokenizer."""

from __future__ import annotations

import enum
from typing import Any


# ── Enums ──────────────────────────────────────────────────────────────────

class SemanticClass(enum.IntEnum):
    EMPTY = 0
    ROAD = 1
    CAR = 2
    BUILDING = 3
    VEGETATION = 4
    PEDESTRIAN = 5


IGNORE_LABEL: int = 255

# Classes that can be placed as boxes in a synthetic scene
BOX_CLASSES: tuple[SemanticClass, ...] = (
    SemanticClass.CAR,
    SemanticClass.BUILDING,
    SemanticClass.VEGETATION,
    SemanticClass.PEDESTRIAN,
)


class Task(str, enum.Enum):
    RECON = "recon"
    DEPTH = "depth"
    SEM = "sem"
    OCC = "occ"
    REG = "reg"


class MaskMode(str, enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


class RobustLoss(str, enum.Enum):
    HUBER = "huber"
    TUKEY = "tukey"
    SQUARED = "squared"


class BackboneName(str, enum.Enum):
    TINY_CONV = "tiny-conv"
    TINY_PATCH = "tiny-patch"
    FOUNDATION = "foundation"


class RunMode(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    FAST = "fast"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"


# ── Errors ─────────────────────────────────────────────────────────────────

class RejectedInputError(ValueError):
    """Input values are non-finite or outside their documented domain."""


class InvalidCameraError(ValueError):
    """Camera intrinsics/extrinsics violate the pinhole model contract."""


class ConfigurationError(ValueError):
    """Configuration values are inconsistent with each other."""


class ShapeMismatchError(ValueError):
    """Tensor shapes disagree with the layout they are paired with."""


class InsufficientAnchorsError(ValueError):
    """Too few (or degenerate) anchors to fit an affine depth map."""


class SceneGenerationError(RuntimeError):
    """Procedural placement could not satisfy the scene constraints."""


class IncompatibleCheckpointError(RuntimeError):
    """Checkpoint was written by a model with a different architecture."""


class MissingDatasetError(FileNotFoundError):
    """Dataset directory or manifest does not exist."""


class TrainingDivergedError(RuntimeError):
    """A non-finite loss was produced during training."""

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
