"""Scene encoder: image pyramid -> fixed-budget BEV scene tokens.

Each BEV query samples every camera at the projections of its cell's height
samples, shifted by learned offsets, across all pyramid levels. Attention
weights are normalized jointly over (cameras x levels x offsets); cameras that
see none of the cell's samples are excluded. Per-camera logits add a term
predicted from where the cell sits in that camera: its viewing direction in
the camera frame and its log range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from torch import Tensor, nn

from config_io.config import BackboneConfig, EncoderConfig
from config_io.schema import ConfigurationError, ShapeMismatchError
from geometry.cameras import BevGridSpec, CameraRig
from geometry.projection import project_points
from model.backbone import FPN, Backbone, build_backbone

_OUTSIDE = -2.0  # normalized coordinate that grid_sample pads with zeros
VIEW_DESC_DIM = 4


@dataclass
class FeaturePyramid:
    levels: list[Tensor]  # each (B, N, C, H_l, W_l)

    def __post_init__(self) -> None:
        if not self.levels:
            raise ShapeMismatchError("feature pyramid needs at least one level")
        c = self.levels[0].shape[2]
        for prev, cur in zip(self.levels, self.levels[1:]):
            if cur.shape[2] != c:
                raise ShapeMismatchError("all pyramid levels must share the channel width")
            if cur.shape[-2] * cur.shape[-1] >= prev.shape[-2] * prev.shape[-1]:
                raise ShapeMismatchError("pyramid levels must strictly decrease in size")

    @property
    def level_count(self) -> int:
        return len(self.levels)

    @property
    def num_cameras(self) -> int:
        return self.levels[0].shape[1]

    @property
    def channels(self) -> int:
        return self.levels[0].shape[2]


@dataclass
class SceneTokenGrid:
    tokens: Tensor  # (B, H_b, W_b, C_b)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.tokens.shape)


# ── Image encoding ─────────────────────────────────────────────────────────

class ImageEncoder(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.backbone: Backbone = build_backbone(cfg)
        self.fpn = FPN(cfg.channels, cfg.channels, cfg.levels)
        self.stride = cfg.stride

    def forward(self, images: Tensor) -> FeaturePyramid:
        """images (B, N, 3, H, W) in [0, 1]."""
        b, n, _, h, w = images.shape
        if h % self.stride or w % self.stride:
            raise ConfigurationError(f"resolution {h}x{w} not divisible by backbone stride {self.stride}")
        feats = self.fpn(self.backbone(rearrange(images, "b n c h w -> (b n) c h w")))
        return FeaturePyramid([rearrange(f, "(b n) c h w -> b n c h w", b=b, n=n) for f in feats])


def encode_images(images: Tensor, encoder: ImageEncoder) -> FeaturePyramid:
    return encoder(images)


# ── Positional encoding ────────────────────────────────────────────────────

def fourier_features(xy: Tensor, num_freqs: int, pos_scale: float) -> Tensor:
    """Sin/cos features of metric (x, y), periods log-spaced from pos_scale down to ~1 m."""
    k = torch.arange(num_freqs, dtype=xy.dtype, device=xy.device)
    omega = (2.0 * math.pi / pos_scale) * pos_scale ** (k / num_freqs)
    ang = xy[..., :, None] * omega  # (..., 2, F)
    return torch.cat([ang.sin(), ang.cos()], dim=-1).flatten(-2)


class BevPositionalEncoding(nn.Module):
    def __init__(self, bev_channels: int, num_freqs: int, pos_scale: float):
        super().__init__()
        if bev_channels % 2:
            raise ConfigurationError("BEV channel width must be even")
        self.num_freqs = num_freqs
        self.pos_scale = pos_scale
        self.proj = nn.Linear(4 * num_freqs, bev_channels)

    def forward(self, grid: BevGridSpec) -> Tensor:
        """(H_b, W_b, C_b) embedding of the metric cell centers."""
        p = self.proj.weight
        xy = torch.as_tensor(grid.cell_centers(), dtype=p.dtype, device=p.device)
        return self.proj(fourier_features(xy, self.num_freqs, self.pos_scale))


def bev_positional_encoding(grid: BevGridSpec, encoding: BevPositionalEncoding) -> Tensor:
    return encoding(grid)


class SceneQueryGrid(nn.Module):
    """Learnable per-cell content queries plus metric positional encodings."""

    def __init__(self, grid: BevGridSpec, cfg: EncoderConfig):
        super().__init__()
        self.grid = grid
        self.queries = nn.Parameter(torch.randn(grid.H_b, grid.W_b, cfg.bev_channels) * 0.02)
        self.pos = BevPositionalEncoding(cfg.bev_channels, cfg.num_freqs, cfg.pos_scale)

    def pos_embed(self) -> Tensor:
        return self.pos(self.grid)

    def forward(self) -> Tensor:
        """(H_b * W_b, C_b) queries in row-major cell order."""
        return (self.queries + self.pos_embed()).reshape(-1, self.queries.shape[-1])


# ── Lifting ────────────────────────────────────────────────────────────────

@dataclass
class LiftGeometry:
    """Reference sample locations of every (camera, cell, height bin)."""
    ref_grid: Tensor    # (N, Q, Z, 2) grid_sample coordinates, normalized by image size
    bin_valid: Tensor   # (N, Q, Z) bool
    cam_visible: Tensor  # (N, Q) bool
    view_desc: Tensor | None = None  # (N, Q, VIEW_DESC_DIM) camera-frame direction + log range

    def to(self, device: torch.device, dtype: torch.dtype) -> "LiftGeometry":
        desc = None if self.view_desc is None else self.view_desc.to(device, dtype)
        return LiftGeometry(self.ref_grid.to(device, dtype), self.bin_valid.to(device),
                            self.cam_visible.to(device), desc)


def lift_geometry(rig: CameraRig, grid: BevGridSpec) -> LiftGeometry:
    pts = grid.reference_points()
    mid = pts.mean(axis=1)  # (Q, 3) cell center at mid height
    refs, valids, descs = [], [], []
    for cam in rig:
        p_cam = mid @ cam.R.T + cam.t
        dist = np.linalg.norm(p_cam, axis=-1, keepdims=True)
        descs.append(np.concatenate([p_cam / np.maximum(dist, 1e-6), np.log1p(dist)], axis=-1))
        uv, _, valid = project_points(pts, cam)
        h, w = cam.image_size
        g = np.empty_like(uv)
        g[..., 0] = 2.0 * (uv[..., 0] + 0.5) / w - 1.0
        g[..., 1] = 2.0 * (uv[..., 1] + 0.5) / h - 1.0
        g[~valid] = _OUTSIDE
        refs.append(g)
        valids.append(valid)
    ref = torch.from_numpy(np.stack(refs))
    bin_valid = torch.from_numpy(np.stack(valids))
    return LiftGeometry(ref_grid=ref, bin_valid=bin_valid, cam_visible=bin_valid.any(dim=-1),
                        view_desc=torch.from_numpy(np.stack(descs)))


class DeformableLifter(nn.Module):
    """Geometry-guided deformable cross-attention from BEV queries to a multi-camera pyramid."""

    def __init__(self, in_channels: int, cfg: EncoderConfig, levels: int):
        super().__init__()
        c = cfg.bev_channels
        if c % cfg.num_heads:
            raise ConfigurationError("bev_channels must be divisible by num_heads")
        self.heads = cfg.num_heads
        self.levels = levels
        self.points = cfg.num_offsets
        self.value_proj = nn.Linear(in_channels, c)
        self.offset_proj = nn.Linear(c, self.heads * levels * self.points * 2)
        self.attn_proj = nn.Linear(c, self.heads * levels * self.points)
        self.view_attn = nn.Linear(VIEW_DESC_DIM, self.heads * levels * self.points)
        self.out_proj = nn.Linear(c, c)
        self._reset_offsets(cfg.offset_init_radius)

    def _reset_offsets(self, radius: float) -> None:
        nn.init.zeros_(self.offset_proj.weight)
        thetas = torch.arange(self.heads, dtype=torch.float32) * (2.0 * math.pi / self.heads)
        ring = torch.stack([thetas.cos(), thetas.sin()], -1)
        ring = ring / ring.abs().max(-1, keepdim=True)[0]
        ring = ring.view(self.heads, 1, 1, 2).repeat(1, self.levels, self.points, 1)
        for k in range(self.points):
            ring[:, :, k, :] *= radius * (k + 1) / self.points
        with torch.no_grad():
            self.offset_proj.bias.copy_(ring.reshape(-1))
        nn.init.zeros_(self.attn_proj.weight)
        nn.init.zeros_(self.attn_proj.bias)
        nn.init.zeros_(self.view_attn.weight)
        nn.init.zeros_(self.view_attn.bias)

    def attention_weights(self, queries: Tensor, cam_visible: Tensor, view_desc: Tensor | None = None) -> Tensor:
        """Joint softmax over (cameras, levels, offsets): (Q, heads, N, L, K).

        Logits are the query term plus, when view_desc (N, Q, 4) is given, a per-camera
        term from the cell's viewing geometry. Without it every camera shares the same
        logits and visible cameras are weighted uniformly.
        """
        q = queries.shape[0]
        n = cam_visible.shape[0]
        lk = self.levels * self.points
        logits = self.attn_proj(queries).view(q, self.heads, 1, lk)
        if view_desc is None:
            logits = logits.expand(q, self.heads, n, lk)
        else:
            per_cam = rearrange(self.view_attn(view_desc), "n q (h lk) -> q h n lk", h=self.heads)
            logits = logits + per_cam
        vis = cam_visible.t()[:, None, :, None]  # (Q, 1, N, 1)
        masked = torch.where(vis, logits, torch.full_like(logits, -torch.inf))
        # cells nobody sees: keep the softmax finite, their weights are zeroed below
        seen = cam_visible.any(dim=0)[:, None, None, None]
        masked = torch.where(seen, masked, torch.zeros_like(masked))
        alpha = masked.reshape(q, self.heads, -1).softmax(dim=-1)
        alpha = alpha.view(q, self.heads, n, self.levels, self.points)
        return alpha * seen[..., None].to(alpha.dtype)

    def forward(self, pyramid: FeaturePyramid, queries: Tensor, geom: LiftGeometry,
                return_weights: bool = False) -> tuple[Tensor, Tensor | None]:
        """queries (Q, C_b) -> tokens (B, Q, C_b)."""
        b, n = pyramid.levels[0].shape[:2]
        if geom.ref_grid.shape[0] != n:
            raise ShapeMismatchError(f"pyramid has {n} cameras, geometry has {geom.ref_grid.shape[0]}")
        if pyramid.level_count != self.levels:
            raise ShapeMismatchError(f"lifter expects {self.levels} levels, got {pyramid.level_count}")
        q_len = queries.shape[0]
        h, k = self.heads, self.points
        z = geom.ref_grid.shape[2]

        offsets = self.offset_proj(queries).view(q_len, h, self.levels, k, 2)
        alpha = self.attention_weights(queries, geom.cam_visible, geom.view_desc)
        bin_w = geom.bin_valid.to(queries.dtype)
        bin_w = bin_w / bin_w.sum(dim=-1, keepdim=True).clamp(min=1.0)  # (N, Q, Z)

        agg = queries.new_zeros(b, h, queries.shape[-1] // h, q_len)
        for lvl, feat in enumerate(pyramid.levels):
            hl, wl = feat.shape[-2:]
            value = self.value_proj(rearrange(feat, "b n c hh ww -> b n hh ww c"))
            value = rearrange(value, "b n hh ww (h d) -> (b n h) d hh ww", h=h)
            # offsets are in feature pixels of this level
            scale = queries.new_tensor([2.0 / wl, 2.0 / hl])
            delta = offsets[:, :, lvl] * scale  # (Q, h, K, 2)
            loc = geom.ref_grid[:, None, :, :, None, :] + delta.permute(1, 0, 2, 3)[None, :, :, None, :, :]
            loc = loc.reshape(n, h, q_len, z * k, 2)
            loc = loc[None].expand(b, -1, -1, -1, -1, -1).reshape(b * n * h, q_len, z * k, 2)
            sampled = F.grid_sample(value, loc, mode="bilinear", padding_mode="zeros", align_corners=False)
            sampled = sampled.view(b, n, h, -1, q_len, z, k)
            sampled = torch.einsum("bnhdqzk,nqz->bnhdqk", sampled, bin_w)
            a = alpha[:, :, :, lvl].permute(2, 1, 0, 3)  # (N, h, Q, K)
            agg = agg + torch.einsum("bnhdqk,nhqk->bhdq", sampled, a)

        agg = rearrange(agg, "b h d q -> b q (h d)")
        seen = geom.cam_visible.any(dim=0).to(queries.dtype)[None, :, None]
        tokens = queries[None] + seen * self.out_proj(agg)
        return tokens, (alpha if return_weights else None)


def lift_to_bev(
    pyramid: FeaturePyramid,
    queries: SceneQueryGrid,
    rig: CameraRig,
    lifter: DeformableLifter,
    geom: LiftGeometry | None = None,
) -> SceneTokenGrid:
    """Lift camera features into a (B, H_b, W_b, C_b) scene-token grid."""
    if pyramid.num_cameras != len(rig):
        raise ShapeMismatchError(f"pyramid has {pyramid.num_cameras} cameras, rig has {len(rig)}")
    q = queries()
    if geom is None:
        geom = lift_geometry(rig, queries.grid)
    geom = geom.to(q.device, q.dtype)
    tokens, _ = lifter(pyramid, q, geom)
    g = queries.grid
    return SceneTokenGrid(tokens.view(tokens.shape[0], g.H_b, g.W_b, -1))
