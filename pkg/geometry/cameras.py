"""Pinhole cameras, rigs, BEV grid specs, rig presets and rig files."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from config_io.schema import InvalidCameraError, RejectedInputError


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera. R and t map ego-frame points into the camera frame."""
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    image_size: tuple[int, int]  # (H, W)
    camera_id: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "K", np.asarray(self.K, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    @property
    def height(self) -> int:
        return self.image_size[0]

    @property
    def width(self) -> int:
        return self.image_size[1]

    @property
    def center(self) -> np.ndarray:
        """Camera center in the ego frame, o = -R^T t."""
        return -self.R.T @ self.t

    def validate(self, patch_size: int = 1) -> None:
        K, R = self.K, self.R
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(self.t))):
            raise InvalidCameraError(f"camera {self.camera_id}: non-finite parameters")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise InvalidCameraError(f"camera {self.camera_id}: focal lengths must be positive")
        if abs(K[1, 0]) > 0 or abs(K[2, 0]) > 0 or abs(K[2, 1]) > 0 or K[2, 2] != 1.0:
            raise InvalidCameraError(f"camera {self.camera_id}: K must be upper-triangular with K[2,2]=1")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise InvalidCameraError(f"camera {self.camera_id}: R must be a proper rotation")
        if self.height < patch_size or self.width < patch_size:
            raise InvalidCameraError(f"camera {self.camera_id}: image smaller than patch size {patch_size}")

    def with_image_size(self, image_size: tuple[int, int]) -> "CameraModel":
        return CameraModel(self.K, self.R, self.t, image_size, self.camera_id)

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "K": [float(v) for v in self.K.reshape(-1)],
            "R": [float(v) for v in self.R.reshape(-1)],
            "t": [float(v) for v in self.t],
            "H": self.height,
            "W": self.width,
        }

    @staticmethod
    def from_dict(d: dict) -> "CameraModel":
        return CameraModel(
            K=np.array(d["K"]).reshape(3, 3),
            R=np.array(d["R"]).reshape(3, 3),
            t=np.array(d["t"]),
            image_size=(d["H"], d["W"]),
            camera_id=d["camera_id"],
        )


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[CameraModel, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "cameras", tuple(self.cameras))
        ids = [c.camera_id for c in self.cameras]
        if sorted(ids) != list(range(len(ids))):
            raise InvalidCameraError(f"camera ids must be 0..N-1 and unique, got {ids}")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i: int) -> CameraModel:
        return self.cameras[i]

    @property
    def image_size(self) -> tuple[int, int]:
        return self.cameras[0].image_size

    def permuted(self, order: list[int]) -> "CameraRig":
        """Reorder cameras; ids are reassigned to the new positions."""
        cams = [self.cameras[j] for j in order]
        return CameraRig(tuple(CameraModel(c.K, c.R, c.t, c.image_size, i) for i, c in enumerate(cams)))

    def with_image_size(self, image_size: tuple[int, int]) -> "CameraRig":
        """Resize every camera, scaling intrinsics with the resolution."""
        h0, w0 = self.image_size
        h1, w1 = image_size
        sy, sx = h1 / h0, w1 / w0
        cams = []
        for c in self.cameras:
            K = c.K.copy()
            K[0, 0] *= sx
            K[0, 1] *= sx
            K[0, 2] = (K[0, 2] + 0.5) * sx - 0.5
            K[1, 1] *= sy
            K[1, 2] = (K[1, 2] + 0.5) * sy - 0.5
            cams.append(CameraModel(K, c.R, c.t, image_size, c.camera_id))
        return CameraRig(tuple(cams))

    def to_dict(self) -> dict:
        return {"cameras": [c.to_dict() for c in self.cameras]}

    @staticmethod
    def from_dict(d: dict) -> "CameraRig":
        return CameraRig(tuple(CameraModel.from_dict(c) for c in d["cameras"]))


@dataclass(frozen=True)
class BevGridSpec:
    pc_range: tuple[float, float, float, float, float, float]
    H_b: int
    W_b: int
    n_height_bins: int = 8

    def __post_init__(self) -> None:
        r = tuple(float(v) for v in self.pc_range)
        object.__setattr__(self, "pc_range", r)
        if any(r[i + 3] <= r[i] for i in range(3)):
            raise RejectedInputError(f"pc_range must satisfy max > min on every axis, got {r}")
        if min(self.H_b, self.W_b, self.n_height_bins) < 1:
            raise RejectedInputError("H_b, W_b and n_height_bins must be >= 1")

    @property
    def num_cells(self) -> int:
        return self.H_b * self.W_b

    @property
    def cell_size(self) -> tuple[float, float]:
        r = self.pc_range
        return ((r[3] - r[0]) / self.H_b, (r[4] - r[1]) / self.W_b)

    def cell_centers(self) -> np.ndarray:
        """Metric (x, y) centers, shape (H_b, W_b, 2). Rows run along x, columns along y."""
        r = self.pc_range
        dx, dy = self.cell_size
        xs = r[0] + (np.arange(self.H_b) + 0.5) * dx
        ys = r[1] + (np.arange(self.W_b) + 0.5) * dy
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def height_samples(self) -> np.ndarray:
        """Uniformly spaced bin-center heights across [z_min, z_max]."""
        z0, z1 = self.pc_range[2], self.pc_range[5]
        return z0 + (np.arange(self.n_height_bins) + 0.5) * (z1 - z0) / self.n_height_bins

    def reference_points(self) -> np.ndarray:
        """3D sample points per cell and height bin, shape (H_b*W_b, n_height_bins, 3)."""
        xy = self.cell_centers().reshape(-1, 2)
        zs = self.height_samples()
        pts = np.empty((xy.shape[0], zs.shape[0], 3), dtype=np.float64)
        pts[:, :, 0] = xy[:, None, 0]
        pts[:, :, 1] = xy[:, None, 1]
        pts[:, :, 2] = zs[None, :]
        return pts

    def to_dict(self) -> dict:
        return {"pc_range": list(self.pc_range), "H_b": self.H_b, "W_b": self.W_b,
                "n_height_bins": self.n_height_bins}


@dataclass(frozen=True)
class PluckerRay:
    direction: np.ndarray
    moment: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.direction, self.moment])


# ── Hashes ─────────────────────────────────────────────────────────────────

def rig_hash(rig: CameraRig) -> str:
    return hashlib.sha1(json.dumps(rig.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def grid_hash(grid: BevGridSpec) -> str:
    return hashlib.sha1(json.dumps(grid.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ── Presets ────────────────────────────────────────────────────────────────

def intrinsics_from_fov(image_size: tuple[int, int], hfov_deg: float) -> np.ndarray:
    """Square-pixel intrinsics with the principal point at the image center."""
    h, w = image_size
    f = w / (2.0 * math.tan(math.radians(hfov_deg) / 2.0))
    return np.array([[f, 0.0, (w - 1) / 2.0], [0.0, f, (h - 1) / 2.0], [0.0, 0.0, 1.0]])


def look_rotation(yaw_deg: float, pitch_deg: float = 0.0) -> np.ndarray:
    """Ego->camera rotation for a camera facing `yaw` (about +z) tilted down by `pitch`.

    Ego frame: x forward, y left, z up. Camera frame: x right, y down, z forward.
    """
    yaw, pitch = math.radians(yaw_deg), math.radians(pitch_deg)
    forward = np.array([math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), -math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def camera_from_pose(
    camera_id: int,
    image_size: tuple[int, int],
    center: np.ndarray,
    yaw_deg: float,
    pitch_deg: float,
    hfov_deg: float,
) -> CameraModel:
    R = look_rotation(yaw_deg, pitch_deg)
    t = -R @ np.asarray(center, dtype=np.float64)
    return CameraModel(intrinsics_from_fov(image_size, hfov_deg), R, t, image_size, camera_id)


RIG_PRESETS = ("stereo2", "surround6")


def make_rig(
    preset: str,
    image_size: tuple[int, int],
    mount_z: float = -0.3,
    hfov_deg: float = 70.0,
    pitch_deg: float = 5.0,
) -> CameraRig:
    """Build a desk-scale rig.

    stereo2: two forward cameras yawed +-20 deg with a 0.6 m baseline.
    surround6: six cameras at 60 deg spacing mounted 1 m from the ego center.
    """
    if preset == "stereo2":
        cams = [
            camera_from_pose(i, image_size, np.array([1.0, y, mount_z]), yaw, pitch_deg, hfov_deg)
            for i, (yaw, y) in enumerate(((20.0, 0.3), (-20.0, -0.3)))
        ]
    elif preset == "surround6":
        cams = []
        for i in range(6):
            yaw = 60.0 * i
            c = np.array([math.cos(math.radians(yaw)), math.sin(math.radians(yaw)), mount_z])
            cams.append(camera_from_pose(i, image_size, c, yaw, pitch_deg, hfov_deg))
    else:
        raise InvalidCameraError(f"Unknown rig preset: {preset}")
    return CameraRig(tuple(cams))


# ── Rig files ──────────────────────────────────────────────────────────────

def save_rig(rig: CameraRig, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w") as f:
        yaml.safe_dump(rig.to_dict(), f, sort_keys=False)


def load_rig(path: str | Path) -> CameraRig:
    with open(path) as f:
        rig = CameraRig.from_dict(yaml.safe_load(f))
    for cam in rig:
        cam.validate()
    return rig
