"""End-to-end scene tokenizer: images + rig -> scene tokens -> decoded views and occupancy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from config_io.config import ExperimentConfig
from config_io.schema import ShapeMismatchError, Task
from geometry.cameras import BevGridSpec, CameraRig, rig_hash
from geometry.visibility import compute_visibility_mask, pool_mask_to_patches
from model.decoder import DecoderOutput, MultiViewDecoder, view_plucker
from model.encoder import (
    DeformableLifter,
    ImageEncoder,
    LiftGeometry,
    SceneQueryGrid,
    SceneTokenGrid,
    encode_images,
    lift_geometry,
    lift_to_bev,
)
from model.heads import (
    BevAuxClassifier,
    DenseDecoder,
    DepthAdaptor,
    DepthAdaptorParams,
    OccHead,
    OccupancyVolume,
    depth_head,
    rgb_head,
    sem_head,
)

logger = logging.getLogger(__name__)


def grid_spec(config: ExperimentConfig) -> BevGridSpec:
    g = config.grid
    return BevGridSpec(tuple(g.pc_range), g.bev_h, g.bev_w, g.n_height_bins)


@dataclass
class RigGeometry:
    """Everything the model derives from camera calibration alone."""
    lift: LiftGeometry
    plucker: np.ndarray     # (N, hp, wp, 6)
    patch_mask: np.ndarray  # (N, num_scene_patches) bool
    cell_mask: np.ndarray   # (N, H_b * W_b) bool


@dataclass
class TokenizerOutput:
    scene: SceneTokenGrid
    decoded: DecoderOutput
    rgb: Tensor | None = None          # (B, N, 3, H, W)
    depth: Tensor | None = None        # (B, N, H, W)
    depth_params: DepthAdaptorParams | None = None
    sem: Tensor | None = None          # (B, N, C_sem, H, W)
    occ: OccupancyVolume | None = None
    aux_logits: Tensor | None = None   # (B, C_occ, h', w')
    extras: dict = field(default_factory=dict)


class DriveTokenizer(nn.Module):
    def __init__(self, config: ExperimentConfig):
        super().__init__()
        self.config = config
        self.grid = grid_spec(config)
        enc, dec, heads = config.encoder, config.decoder, config.heads
        image_size = tuple(config.data.resolution)

        self.image_encoder = ImageEncoder(config.backbone)
        self.queries = SceneQueryGrid(self.grid, enc)
        self.lifter = DeformableLifter(config.backbone.channels, enc, config.backbone.levels)
        self.decoder = MultiViewDecoder(dec, enc.bev_channels, (self.grid.H_b, self.grid.W_b), image_size)

        d = dec.dim
        self.rgb_decoder = DenseDecoder(d, heads, 3, activation="sigmoid")
        self.depth_decoder = DenseDecoder(d, heads, 1, activation="softplus", scale=heads.depth_scale)
        self.depth_adaptor = DepthAdaptor(d)
        self.sem_decoder = DenseDecoder(d, heads, heads.num_sem_classes, activation="none")
        self.occ_head = OccHead(d, heads, tuple(config.grid.occ_shape), dec.bev_patch)
        self.aux_classifier = BevAuxClassifier(d, heads.num_occ_classes)

        self._geometry: dict[str, RigGeometry] = {}

    # ── geometry cache ──

    def rig_geometry(self, rig: CameraRig) -> RigGeometry:
        key = rig_hash(rig)
        if key not in self._geometry:
            cell = compute_visibility_mask(rig, self.grid)
            self._geometry[key] = RigGeometry(
                lift=lift_geometry(rig, self.grid),
                plucker=view_plucker(rig, self.config.decoder.view_patch),
                patch_mask=pool_mask_to_patches(cell, self.grid, self.config.decoder.bev_patch),
                cell_mask=cell.values,
            )
            logger.debug(f"Cached geometry for rig {key}")
        return self._geometry[key]

    # ── stages ──

    def encode(self, images: Tensor, rig: CameraRig) -> SceneTokenGrid:
        """images (B, N, 3, H, W) -> scene tokens (B, H_b, W_b, C_b)."""
        if images.shape[1] != len(rig):
            raise ShapeMismatchError(f"{images.shape[1]} images for a {len(rig)}-camera rig")
        if tuple(images.shape[-2:]) != rig.image_size:
            raise ShapeMismatchError(f"images {tuple(images.shape[-2:])} vs rig image size {rig.image_size}")
        pyramid = encode_images(images, self.image_encoder)
        return lift_to_bev(pyramid, self.queries, rig, self.lifter, self.rig_geometry(rig).lift)

    def decode(self, scene: SceneTokenGrid, rig: CameraRig, return_attn: bool = False) -> DecoderOutput:
        geom = self.rig_geometry(rig)
        p = self.queries.queries
        plucker = torch.as_tensor(geom.plucker, dtype=p.dtype, device=p.device)
        return self.decoder(scene.tokens, plucker, geom.patch_mask, return_attn=return_attn)

    def forward(
        self,
        images: Tensor,
        rig: CameraRig,
        tasks: list[Task] | None = None,
        return_attn: bool = False,
    ) -> TokenizerOutput:
        tasks = list(Task) if tasks is None else tasks
        scene = self.encode(images, rig)
        decoded = self.decode(scene, rig, return_attn)
        out = TokenizerOutput(scene=scene, decoded=decoded)
        size = tuple(images.shape[-2:])
        if Task.RECON in tasks:
            out.rgb = rgb_head(decoded.view, self.rgb_decoder, size)
        if Task.DEPTH in tasks:
            out.depth, out.depth_params = depth_head(decoded.view, self.depth_decoder, self.depth_adaptor, size)
        if Task.SEM in tasks:
            out.sem = sem_head(decoded.view, self.sem_decoder, size)
        if Task.OCC in tasks:
            out.occ = self.occ_head(decoded.scene)
        if Task.REG in tasks:
            out.aux_logits = self.aux_classifier(decoded.scene)
        return out

    def head_modules(self, task: Task) -> list[nn.Module]:
        return {
            Task.RECON: [self.rgb_decoder],
            Task.DEPTH: [self.depth_decoder, self.depth_adaptor],
            Task.SEM: [self.sem_decoder],
            Task.OCC: [self.occ_head],
            Task.REG: [self.aux_classifier],
        }[task]
