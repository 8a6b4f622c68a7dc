"""Projection, viewing rays and bilinear sampling.

Pixel coordinates put pixel centers on integers: pixel (row v, col u) covers
[u - 0.5, u + 0.5) x [v - 0.5, v + 0.5).
"""

from __future__ import annotations

import numpy as np

from config_io.schema import InvalidCameraError, RejectedInputError
from geometry.cameras import CameraModel, PluckerRay

Z_EPS: float = 1e-4


def _affine(M: np.ndarray, X: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    """Row-wise M @ x (+ t) with a fixed left-to-right summation order."""
    out = np.empty(X.shape[:-1] + (3,), dtype=np.float64)
    for i in range(3):
        acc = M[i, 0] * X[..., 0] + M[i, 1] * X[..., 1] + M[i, 2] * X[..., 2]
        out[..., i] = acc + t[i] if t is not None else acc
    return out


def _check_intrinsics(camera: CameraModel) -> None:
    K = camera.K
    if K[0, 0] == 0 or K[1, 1] == 0 or not np.all(np.isfinite(K)):
        raise InvalidCameraError(f"camera {camera.camera_id}: degenerate intrinsics")


def project_points(
    points: np.ndarray,
    camera: CameraModel,
    z_eps: float = Z_EPS,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project ego-frame points (..., 3) with u~ = K [R|t] X.

    Returns (uv (..., 2), depth (...), valid (...)). A point is valid when it lies
    more than z_eps in front of the camera and inside [0, W) x [0, H).
    """
    X = np.asarray(points, dtype=np.float64)
    if X.shape[-1] != 3:
        raise RejectedInputError(f"points must have a trailing dimension of 3, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise RejectedInputError("points must be finite")
    _check_intrinsics(camera)

    cam = _affine(camera.R, X, camera.t)
    uvw = _affine(camera.K, cam)
    depth = uvw[..., 2]
    in_front = depth > z_eps
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(in_front, uvw[..., 0] / depth, np.nan)
        v = np.where(in_front, uvw[..., 1] / depth, np.nan)
    h, w = camera.image_size
    with np.errstate(invalid="ignore"):
        valid = in_front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    return np.stack([u, v], axis=-1), depth, valid


def plucker_rays(camera: CameraModel, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized viewing rays through pixels uv (..., 2).

    Returns (origin (3,), unit directions (..., 3), moments (..., 3)) in the ego frame.
    """
    K = camera.K
    _check_intrinsics(camera)
    if abs(np.linalg.det(K)) < 1e-12:
        raise InvalidCameraError(f"camera {camera.camera_id}: singular intrinsics")
    uv = np.asarray(uv, dtype=np.float64)
    pix = np.concatenate([uv, np.ones(uv.shape[:-1] + (1,))], axis=-1)
    rays_cam = _affine(np.linalg.inv(K), pix)
    dirs = _affine(camera.R.T, rays_cam)
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    origin = camera.center
    moments = np.cross(np.broadcast_to(origin, dirs.shape), dirs)
    return origin, dirs, moments


def compute_plucker_ray(camera: CameraModel, pixel: tuple[float, float]) -> PluckerRay:
    """Plücker ray (unit direction, moment o x d) through one pixel."""
    u, v = float(pixel[0]), float(pixel[1])
    h, w = camera.image_size
    if not (np.isfinite(u) and np.isfinite(v)) or not (0 <= u < w and 0 <= v < h):
        raise RejectedInputError(f"pixel ({u}, {v}) outside image bounds {w}x{h}")
    origin, d, m = plucker_rays(camera, np.array([u, v]))
    return PluckerRay(direction=d, moment=m, origin=origin)


def patch_centers(image_size: tuple[int, int], patch: int) -> np.ndarray:
    """Pixel centers of non-overlapping patches, shape (H/p, W/p, 2) as (u, v)."""
    h, w = image_size
    us = np.arange(w // patch) * patch + (patch - 1) / 2.0
    vs = np.arange(h // patch) * patch + (patch - 1) / 2.0
    gv, gu = np.meshgrid(vs, us, indexing="ij")
    return np.stack([gu, gv], axis=-1)


def bilinear_sample(feature_map: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Zero-padded bilinear interpolation of an (H, W, C) map at (..., 2) coordinates.

    Neighbours that fall outside the map contribute zero.
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim != 3 or fm.size == 0:
        raise RejectedInputError(f"feature_map must be a non-empty (H, W, C) array, got {fm.shape}")
    h, w, c = fm.shape
    uv = np.asarray(uv, dtype=np.float64)
    u, v = uv[..., 0], uv[..., 1]
    u0, v0 = np.floor(u), np.floor(v)
    du, dv = u - u0, v - v0
    out = np.zeros(uv.shape[:-1] + (c,), dtype=np.float64)
    for oy, ox, wt in ((0, 0, (1 - dv) * (1 - du)), (0, 1, (1 - dv) * du),
                       (1, 0, dv * (1 - du)), (1, 1, dv * du)):
        yy = (v0 + oy).astype(np.int64)
        xx = (u0 + ox).astype(np.int64)
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = fm[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        out += np.where(inside[..., None], vals * wt[..., None], 0.0)
    return out
