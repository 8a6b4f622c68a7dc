"""Camera-to-BEV-cell visibility masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from config_io.schema import ShapeMismatchError
from geometry.cameras import BevGridSpec, CameraRig, grid_hash, rig_hash
from geometry.projection import project_points


@dataclass(frozen=True)
class VisibilityMask:
    """Boolean (N, H_b*W_b): True where the camera sees any height sample of the cell."""
    values: np.ndarray
    rig_hash: str
    grid_hash: str

    @property
    def num_cameras(self) -> int:
        return self.values.shape[0]

    @property
    def num_cells(self) -> int:
        return self.values.shape[1]

    def as_grid(self, grid: BevGridSpec) -> np.ndarray:
        return self.values.reshape(self.num_cameras, grid.H_b, grid.W_b)


def compute_visibility_mask(rig: CameraRig, grid: BevGridSpec) -> VisibilityMask:
    """M[i, j] = 1 iff any of cell j's height samples projects validly into camera i."""
    pts = grid.reference_points()
    values = np.zeros((len(rig), grid.num_cells), dtype=bool)
    for i, cam in enumerate(rig):
        _, _, valid = project_points(pts, cam)
        values[i] = valid.any(axis=1)
    return VisibilityMask(values=values, rig_hash=rig_hash(rig), grid_hash=grid_hash(grid))


def pool_mask_to_patches(mask: VisibilityMask, grid: BevGridSpec, patch: int) -> np.ndarray:
    """Pool cell visibility to BEV patches: a patch is visible if any constituent cell is.

    Returns (N, (H_b/patch) * (W_b/patch)) in row-major patch order.
    """
    if grid.H_b % patch or grid.W_b % patch:
        raise ShapeMismatchError(f"BEV grid {grid.H_b}x{grid.W_b} not divisible by patch {patch}")
    if mask.num_cells != grid.num_cells:
        raise ShapeMismatchError(f"mask has {mask.num_cells} cells, grid has {grid.num_cells}")
    n = mask.num_cameras
    g = mask.values.reshape(n, grid.H_b // patch, patch, grid.W_b // patch, patch)
    return g.any(axis=(2, 4)).reshape(n, -1)
