"""Procedural driving scenes: a ground plane plus labeled axis-aligned boxes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator

from config_io.config import GridConfig, SceneConfig
from config_io.schema import BOX_CLASSES, SceneGenerationError, SemanticClass


# ── Class tables ───────────────────────────────────────────────────────────

# (length range, width range, height range) in meters
_CLASS_SIZE: dict[SemanticClass, tuple[tuple[float, float], tuple[float, float], tuple[float, float]]] = {
    SemanticClass.CAR:        ((3.8, 4.8), (1.7, 2.0), (1.4, 1.8)),
    SemanticClass.BUILDING:   ((6.0, 12.0), (6.0, 12.0), (3.5, 4.5)),
    SemanticClass.VEGETATION: ((1.0, 2.5), (1.0, 2.5), (1.5, 4.0)),
    SemanticClass.PEDESTRIAN: ((0.5, 0.7), (0.5, 0.7), (1.6, 1.9)),
}

CLASS_ALBEDO: dict[SemanticClass, tuple[float, float, float]] = {
    SemanticClass.EMPTY:      (0.0, 0.0, 0.0),
    SemanticClass.ROAD:       (0.42, 0.42, 0.45),
    SemanticClass.CAR:        (0.80, 0.20, 0.18),
    SemanticClass.BUILDING:   (0.76, 0.68, 0.55),
    SemanticClass.VEGETATION: (0.22, 0.55, 0.20),
    SemanticClass.PEDESTRIAN: (0.95, 0.80, 0.25),
}

_MIN_GAP = 0.5


@dataclass
class Box:
    center: np.ndarray
    size: np.ndarray
    cls: SemanticClass
    albedo: np.ndarray

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.size / 2.0

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.size / 2.0

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.all((points >= self.lo) & (points <= self.hi), axis=-1)

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "size": [float(v) for v in self.size],
            "class": self.cls.name,
            "albedo": [float(v) for v in self.albedo],
        }

    @staticmethod
    def from_dict(d: dict) -> "Box":
        return Box(np.array(d["center"], dtype=np.float64), np.array(d["size"], dtype=np.float64),
                   SemanticClass[d["class"]], np.array(d["albedo"], dtype=np.float64))


@dataclass
class SyntheticScene:
    ground_z: float
    boxes: list[Box] = field(default_factory=list)
    sky_color: np.ndarray = field(default_factory=lambda: np.array([0.55, 0.70, 0.92]))
    sun_direction: np.ndarray = field(default_factory=lambda: np.array([0.4, 0.3, 0.85]))
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ground_z": float(self.ground_z),
            "sky_color": [float(v) for v in self.sky_color],
            "sun_direction": [float(v) for v in self.sun_direction],
            "boxes": [b.to_dict() for b in self.boxes],
        }

    @staticmethod
    def from_dict(d: dict) -> "SyntheticScene":
        return SyntheticScene(
            ground_z=d["ground_z"],
            boxes=[Box.from_dict(b) for b in d["boxes"]],
            sky_color=np.array(d["sky_color"], dtype=np.float64),
            sun_direction=np.array(d["sun_direction"], dtype=np.float64),
            seed=d["seed"],
        )


# ── Generation ─────────────────────────────────────────────────────────────

def _class_probabilities(cfg: SceneConfig) -> np.ndarray:
    raw = np.array([cfg.class_freqs.get(c.name, 0.0) for c in BOX_CLASSES], dtype=np.float64)
    if raw.sum() <= 0:
        raise SceneGenerationError("scene.class_freqs must contain a positive weight")
    return raw / raw.sum()


def _overlaps(lo: np.ndarray, hi: np.ndarray, boxes: list[Box]) -> bool:
    for b in boxes:
        if (lo[0] < b.hi[0] + _MIN_GAP and hi[0] > b.lo[0] - _MIN_GAP
                and lo[1] < b.hi[1] + _MIN_GAP and hi[1] > b.lo[1] - _MIN_GAP):
            return True
    return False


def _place_box(cls: SemanticClass, cfg: SceneConfig, pc_range: list[float],
               boxes: list[Box], rng: Generator) -> Box | None:
    (l0, l1), (w0, w1), (h0, h1) = _CLASS_SIZE[cls]
    h_cap = pc_range[5] - cfg.ground_z
    for _ in range(cfg.max_retries):
        size = np.array([rng.uniform(l0, l1), rng.uniform(w0, w1), min(rng.uniform(h0, h1), h_cap)])
        if rng.random() < 0.5:
            size[[0, 1]] = size[[1, 0]]
        half = size / 2.0
        cx = rng.uniform(pc_range[0] + half[0], pc_range[3] - half[0])
        cy = rng.uniform(pc_range[1] + half[1], pc_range[4] - half[1])
        center = np.array([cx, cy, cfg.ground_z + half[2]])
        lo, hi = center - half, center + half
        # keep the ego vehicle and its cameras outside every box
        c = cfg.ego_clearance
        if lo[0] < c and hi[0] > -c and lo[1] < c and hi[1] > -c:
            continue
        if _overlaps(lo, hi, boxes):
            continue
        base = np.array(CLASS_ALBEDO[cls])
        albedo = np.clip(base + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)
        return Box(center, size, cls, albedo)
    return None


def generate_scene(seed: int, cfg: SceneConfig, grid: GridConfig) -> SyntheticScene:
    """Deterministically place a ground plane and k non-overlapping boxes."""
    if cfg.min_boxes < 0 or cfg.max_boxes < cfg.min_boxes:
        raise SceneGenerationError(f"invalid box-count range [{cfg.min_boxes}, {cfg.max_boxes}]")
    rng = np.random.default_rng(seed)
    probs = _class_probabilities(cfg)
    k = int(rng.integers(cfg.min_boxes, cfg.max_boxes + 1))
    boxes: list[Box] = []
    for _ in range(k):
        cls = BOX_CLASSES[int(rng.choice(len(BOX_CLASSES), p=probs))]
        box = _place_box(cls, cfg, grid.pc_range, boxes, rng)
        if box is None:
            raise SceneGenerationError(
                f"could not place a {cls.name} box after {cfg.max_retries} retries (seed {seed})"
            )
        boxes.append(box)
    return SyntheticScene(
        ground_z=cfg.ground_z,
        boxes=boxes,
        sky_color=np.array(cfg.sky_color, dtype=np.float64),
        sun_direction=np.array(cfg.sun_direction, dtype=np.float64),
        seed=seed,
    )
