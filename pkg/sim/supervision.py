"""Turn a rendered scene into a training sample: sparse labels, anchors, pseudo depth, occupancy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from alignment.roe import AffineFit, SparseAnchors, align, roe_fit
from config_io.config import DataConfig, GridConfig
from config_io.schema import IGNORE_LABEL, InsufficientAnchorsError, SemanticClass
from geometry.cameras import CameraRig
from sim.raycast import DEFAULT_FAR_PLANE, render_views
from sim.world import SyntheticScene

logger = logging.getLogger(__name__)


@dataclass
class SampleRecord:
    images: np.ndarray           # (N, H, W, 3) float in [0, 1]
    depth: np.ndarray            # (N, H, W) exact z-depth, far plane on sky
    depth_valid: np.ndarray      # (N, H, W) bool, False on sky
    semantics: np.ndarray        # (N, H, W) uint8, IGNORE_LABEL where unsupervised
    occupancy: np.ndarray        # (X, Y, Z) uint8
    anchors: list[SparseAnchors]
    rig: CameraRig
    pseudo_depth: np.ndarray | None = None   # (N, H, W)
    aligned_depth: np.ndarray | None = None  # (N, H, W)
    injected_affine: list[tuple[float, float]] = field(default_factory=list)
    fits: list[AffineFit | None] = field(default_factory=list)
    scene: SyntheticScene | None = None

    @property
    def num_cameras(self) -> int:
        return self.images.shape[0]

    def depth_target(self, kind: str = "aligned") -> np.ndarray:
        if kind == "aligned" and self.aligned_depth is not None:
            return self.aligned_depth
        return self.depth


# ── Occupancy ──────────────────────────────────────────────────────────────

def voxel_centers(pc_range: list[float], occ_shape: tuple[int, int, int]) -> np.ndarray:
    """Metric centers of the occupancy grid, shape (X, Y, Z, 3)."""
    axes = [
        pc_range[a] + (np.arange(n) + 0.5) * (pc_range[a + 3] - pc_range[a]) / n
        for a, n in enumerate(occ_shape)
    ]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def occupancy_labels(scene: SyntheticScene, grid: GridConfig) -> np.ndarray:
    """Class of the box containing each voxel center; road at or below the ground; else empty."""
    centers = voxel_centers(grid.pc_range, grid.occ_shape)
    labels = np.full(centers.shape[:-1], int(SemanticClass.EMPTY), dtype=np.uint8)
    labels[centers[..., 2] <= scene.ground_z] = int(SemanticClass.ROAD)
    for box in scene.boxes:
        labels[box.contains(centers)] = int(box.cls)
    return labels


# ── Image supervision ──────────────────────────────────────────────────────

def sparsify_semantics(dense: np.ndarray, keep: float, rng: np.random.Generator) -> np.ndarray:
    """Keep a random `keep` fraction of labels, set the rest to IGNORE_LABEL."""
    if keep >= 1.0:
        return dense.astype(np.uint8).copy()
    mask = rng.random(dense.shape) < keep
    return np.where(mask, dense, IGNORE_LABEL).astype(np.uint8)


def sample_anchors(depth: np.ndarray, hit: np.ndarray, count: int, rng: np.random.Generator) -> SparseAnchors:
    """Exact depth at up to `count` random non-sky pixels of one image."""
    vs, us = np.nonzero(hit)
    k = min(count, vs.shape[0])
    idx = np.sort(rng.choice(vs.shape[0], size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    uv = np.column_stack([us[idx], vs[idx]]).astype(np.float64)
    return SparseAnchors(uv=uv, depth=depth[vs[idx], us[idx]], valid=np.ones(k, dtype=bool))


def make_supervision(
    scene: SyntheticScene,
    rig: CameraRig,
    data_cfg: DataConfig,
    grid: GridConfig,
    seed: int | None = None,
    far_plane: float = DEFAULT_FAR_PLANE,
) -> SampleRecord:
    """Render all modalities for one scene and derive sparse and pseudo supervision."""
    rng = np.random.default_rng(scene.seed if seed is None else seed)
    views = render_views(scene, rig, far_plane)
    semantics = sparsify_semantics(views.semantics, data_cfg.semantic_keep, rng)
    anchors = [sample_anchors(views.depth[i], views.hit[i], data_cfg.anchors_per_camera, rng)
               for i in range(len(rig))]
    record = SampleRecord(
        images=views.rgb,
        depth=views.depth,
        depth_valid=views.hit,
        semantics=semantics,
        occupancy=occupancy_labels(scene, grid),
        anchors=anchors,
        rig=rig,
        scene=scene,
    )
    if data_cfg.pseudo_depth.enabled:
        _add_pseudo_depth(record, data_cfg, rng)
    return record


def _add_pseudo_depth(record: SampleRecord, data_cfg: DataConfig, rng: np.random.Generator) -> None:
    """Corrupt exact depth by a random per-image affine, then recover it with a robust fit."""
    pcfg = data_cfg.pseudo_depth
    pseudo = np.empty_like(record.depth)
    aligned = np.empty_like(record.depth)
    for i in range(record.num_cameras):
        a = rng.uniform(*pcfg.scale_range)
        b = rng.uniform(*pcfg.shift_range)
        noise = rng.normal(0.0, pcfg.noise_std, size=record.depth[i].shape) if pcfg.noise_std > 0 else 0.0
        pseudo[i] = np.maximum((record.depth[i] - b) / a + noise, 1e-3)
        record.injected_affine.append((float(a), float(b)))
        try:
            fit = roe_fit(pseudo[i], record.anchors[i], data_cfg.alignment)
            aligned[i] = align(pseudo[i], fit)
        except InsufficientAnchorsError as e:
            logger.warning(f"Camera {i}: {e}; falling back to exact depth")
            fit = None
            aligned[i] = record.depth[i]
        record.fits.append(fit)
    record.pseudo_depth = pseudo
    record.aligned_depth = aligned
