"""Analytic ray casting of a SyntheticScene through every pixel of a rig."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from config_io.schema import SemanticClass
from geometry.cameras import CameraModel, CameraRig
from geometry.projection import plucker_rays
from sim.world import CLASS_ALBEDO, SyntheticScene

DEFAULT_FAR_PLANE: float = 200.0
_AMBIENT = 0.3
_PARALLEL_EPS = 1e-12


@dataclass
class RayHits:
    """Nearest positive hit per ray. Misses carry t = inf and class EMPTY."""
    t: np.ndarray
    cls: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return np.isfinite(self.t)


@dataclass
class RenderedViews:
    rgb: np.ndarray        # (N, H, W, 3) in [0, 1]
    depth: np.ndarray      # (N, H, W) camera-frame z, far plane on misses
    semantics: np.ndarray  # (N, H, W) uint8 dense class ids
    hit: np.ndarray        # (N, H, W) bool


def _safe_dirs(dirs: np.ndarray) -> np.ndarray:
    d = dirs.copy()
    small = np.abs(d) < _PARALLEL_EPS
    d[small] = np.where(d[small] < 0, -_PARALLEL_EPS, _PARALLEL_EPS)
    return d


def cast_rays(scene: SyntheticScene, origin: np.ndarray, dirs: np.ndarray) -> RayHits:
    """Intersect rays (origin (3,), unit dirs (..., 3)) with the ground plane and every box."""
    shape = dirs.shape[:-1]
    t_best = np.full(shape, np.inf)
    cls = np.full(shape, int(SemanticClass.EMPTY), dtype=np.uint8)
    normal = np.zeros(shape + (3,))
    albedo = np.zeros(shape + (3,))

    # ground plane z = ground_z, seen from above
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = (scene.ground_z - origin[2]) / dz
    hit = (dz < -_PARALLEL_EPS) & (t_plane > 0)
    t_best = np.where(hit, t_plane, t_best)
    cls[hit] = int(SemanticClass.ROAD)
    normal[hit] = (0.0, 0.0, 1.0)
    albedo[hit] = CLASS_ALBEDO[SemanticClass.ROAD]

    # slab test per box
    inv = 1.0 / _safe_dirs(dirs)
    for box in scene.boxes:
        t0 = (box.lo - origin) * inv
        t1 = (box.hi - origin) * inv
        t_lo = np.minimum(t0, t1)
        t_hi = np.maximum(t0, t1)
        t_near = t_lo.max(axis=-1)
        t_far = t_hi.min(axis=-1)
        hit = (t_near <= t_far) & (t_near > 0) & (t_near < t_best)
        if not hit.any():
            continue
        t_best = np.where(hit, t_near, t_best)
        cls[hit] = int(box.cls)
        axis = t_lo.argmax(axis=-1)[hit]
        n = np.zeros((axis.shape[0], 3))
        n[np.arange(axis.shape[0]), axis] = -np.sign(dirs[hit][np.arange(axis.shape[0]), axis])
        normal[hit] = n
        albedo[hit] = box.albedo
    return RayHits(t=t_best, cls=cls, normal=normal, albedo=albedo)


def shade(hits: RayHits, scene: SyntheticScene) -> np.ndarray:
    """Lambertian shading under a fixed sun; misses get the sky color."""
    sun = scene.sun_direction / np.linalg.norm(scene.sun_direction)
    lambert = np.clip(hits.normal @ sun, 0.0, 1.0)
    rgb = hits.albedo * (_AMBIENT + (1.0 - _AMBIENT) * lambert)[..., None]
    rgb = np.where(hits.hit[..., None], rgb, scene.sky_color)
    return np.clip(rgb, 0.0, 1.0)


def render_camera(
    scene: SyntheticScene,
    camera: CameraModel,
    far_plane: float = DEFAULT_FAR_PLANE,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    h, w = camera.image_size
    vs, us = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    origin, dirs, _ = plucker_rays(camera, np.stack([us, vs], axis=-1))
    hits = cast_rays(scene, origin, dirs)
    # z-depth: distance along the optical axis
    forward = camera.R[2]
    z = hits.t * (dirs @ forward)
    hit = hits.hit & (z <= far_plane)
    hits.t = np.where(hit, hits.t, np.inf)
    hits.cls = np.where(hit, hits.cls, np.uint8(SemanticClass.EMPTY)).astype(np.uint8)
    depth = np.where(hit, z, far_plane)
    return shade(hits, scene), depth, hits.cls, hit


def render_views(scene: SyntheticScene, rig: CameraRig, far_plane: float = DEFAULT_FAR_PLANE) -> RenderedViews:
    """Render RGB, z-depth and dense semantics for every camera of the rig."""
    outs = [render_camera(scene, cam, far_plane) for cam in rig]
    return RenderedViews(
        rgb=np.stack([o[0] for o in outs]),
        depth=np.stack([o[1] for o in outs]),
        semantics=np.stack([o[2] for o in outs]).astype(np.uint8),
        hit=np.stack([o[3] for o in outs]),
    )
