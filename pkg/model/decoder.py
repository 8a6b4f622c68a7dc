"""Multi-view decoder: joint self-attention over [CLS] | scene tokens | view tokens.

Scene<->view logits are biased by the camera visibility of each scene patch.
Scene<->scene, view<->view and every CLS row and column stay unmasked.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from torch import Tensor, nn

from config_io.config import DecoderConfig
from config_io.schema import ConfigurationError, MaskMode, ShapeMismatchError
from geometry.cameras import CameraRig
from geometry.projection import patch_centers, plucker_rays

logger = logging.getLogger(__name__)

LARGE: float = 1e9


# ── Scene tokens ───────────────────────────────────────────────────────────

def patchify_bev(tokens: Tensor, patch: int, proj: nn.Module) -> Tensor:
    """(B, H_b, W_b, C_b) -> (B, (H_b/p)*(W_b/p), D) via a shared linear projection."""
    _, h, w, _ = tokens.shape
    if h % patch or w % patch:
        raise ConfigurationError(f"BEV grid {h}x{w} not divisible by patch {patch}")
    flat = rearrange(tokens, "b (h p1) (w p2) c -> b (h w) (p1 p2 c)", p1=patch, p2=patch)
    return proj(flat)


# ── View tokens ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ViewTokenSpec:
    patch_size: int
    grid_shape: tuple[int, int]  # (H/p, W/p) the learned positional grid was built for
    max_cameras: int
    plucker_hidden: int


def view_plucker(rig: CameraRig, patch: int) -> np.ndarray:
    """Plücker (direction, moment) at every patch center: (N, H/p, W/p, 6)."""
    out = []
    for cam in rig:
        if cam.height % patch or cam.width % patch:
            raise ConfigurationError(f"image {cam.height}x{cam.width} not divisible by view patch {patch}")
        _, d, m = plucker_rays(cam, patch_centers(cam.image_size, patch))
        out.append(np.concatenate([d, m], axis=-1))
    return np.stack(out)


class ViewTokenBuilder(nn.Module):
    """v_{i,p} = mask_token + E_p + camera_embed_i + Linear(MLP([d; m]))."""

    def __init__(self, spec: ViewTokenSpec, dim: int):
        super().__init__()
        self.spec = spec
        gh, gw = spec.grid_shape
        self.mask_token = nn.Parameter(torch.zeros(dim))
        self.pos_grid = nn.Parameter(torch.randn(gh, gw, dim) * 0.02)
        self.camera_embed = nn.Embedding(spec.max_cameras, dim)
        nn.init.normal_(self.camera_embed.weight, std=0.02)
        self.plucker_mlp = nn.Sequential(
            nn.Linear(6, spec.plucker_hidden), nn.GELU(), nn.Linear(spec.plucker_hidden, spec.plucker_hidden), nn.GELU(),
        )
        self.plucker_proj = nn.Linear(spec.plucker_hidden, dim)

    def positional_grid(self, shape: tuple[int, int]) -> Tensor:
        if tuple(shape) == tuple(self.pos_grid.shape[:2]):
            return self.pos_grid
        logger.warning(f"Resampling view positional grid {tuple(self.pos_grid.shape[:2])} -> {tuple(shape)}")
        g = rearrange(self.pos_grid, "h w d -> 1 d h w")
        g = F.interpolate(g, size=shape, mode="bilinear", align_corners=False)
        return rearrange(g, "1 d h w -> h w d")

    def forward(self, plucker: Tensor) -> Tensor:
        """plucker (N, hp, wp, 6) -> view tokens (N, hp, wp, D)."""
        n, hp, wp, _ = plucker.shape
        if n > self.spec.max_cameras:
            raise ConfigurationError(f"{n} cameras exceed decoder.max_cameras={self.spec.max_cameras}")
        cam = self.camera_embed(torch.arange(n, device=plucker.device))[:, None, None, :]
        ray = self.plucker_proj(self.plucker_mlp(plucker))
        return self.mask_token + self.positional_grid((hp, wp))[None] + cam + ray


def build_view_tokens(rig: CameraRig, builder: ViewTokenBuilder) -> Tensor:
    p = builder.mask_token
    plucker = torch.as_tensor(view_plucker(rig, builder.spec.patch_size), dtype=p.dtype, device=p.device)
    return builder(plucker)


# ── Layout and attention bias ──────────────────────────────────────────────

@dataclass(frozen=True)
class TokenLayout:
    num_scene: int
    num_cameras: int
    patches_per_camera: int
    has_cls: bool = True

    @property
    def cls_slice(self) -> slice:
        return slice(0, 1 if self.has_cls else 0)

    @property
    def scene_slice(self) -> slice:
        s = self.cls_slice.stop
        return slice(s, s + self.num_scene)

    @property
    def view_slice(self) -> slice:
        s = self.scene_slice.stop
        return slice(s, s + self.num_cameras * self.patches_per_camera)

    @property
    def total(self) -> int:
        return self.view_slice.stop


@dataclass
class AttentionBias:
    bias: Tensor           # (L, L), 0 or -LARGE
    mode: MaskMode = MaskMode.ADDITIVE

    def gate(self) -> Tensor:
        """Multiplicative form: 1 where attention is allowed, 0 where masked."""
        return (self.bias == 0).to(self.bias.dtype)


def build_attention_bias(
    patch_mask: np.ndarray | Tensor,
    layout: TokenLayout,
    mode: MaskMode = MaskMode.ADDITIVE,
    dtype: torch.dtype = torch.float32,
) -> AttentionBias:
    """Symmetric scene<->view bias from a (N, num_scene) patch visibility mask."""
    m = torch.as_tensor(np.asarray(patch_mask), dtype=torch.bool)
    if m.shape != (layout.num_cameras, layout.num_scene):
        raise ShapeMismatchError(
            f"mask {tuple(m.shape)} does not match layout ({layout.num_cameras}, {layout.num_scene})"
        )
    blocked = (~m).to(dtype) * -LARGE  # (N, S)
    sv = blocked.t().repeat_interleave(layout.patches_per_camera, dim=1)  # (S, N*P)
    bias = torch.zeros(layout.total, layout.total, dtype=dtype)
    bias[layout.scene_slice, layout.view_slice] = sv
    bias[layout.view_slice, layout.scene_slice] = sv.t()
    return AttentionBias(bias=bias, mode=mode)


# ── Transformer ────────────────────────────────────────────────────────────

class MaskedSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: Tensor, bias: AttentionBias | None = None) -> tuple[Tensor, Tensor]:
        q, k, v = rearrange(self.qkv(x), "b l (three h d) -> three b h l d", three=3, h=self.heads)
        logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        if bias is not None:
            if bias.mode == MaskMode.MULTIPLICATIVE:
                logits = logits * bias.gate().to(logits.dtype)
            else:
                logits = logits + bias.bias.to(logits.dtype)
        attn = logits.softmax(dim=-1)
        out = rearrange(attn @ v, "b h l d -> b l (h d)")
        return self.proj(out), attn


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MaskedSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: Tensor, bias: AttentionBias | None = None) -> tuple[Tensor, Tensor]:
        a, attn = self.attn(self.norm1(x), bias)
        x = x + a
        x = x + self.mlp(self.norm2(x))
        return x, attn


@dataclass
class DecoderOutput:
    scene: Tensor  # (B, h', w', D)
    view: Tensor   # (B, N, hp, wp, D)
    cls: Tensor    # (B, D)
    attentions: list[Tensor] = field(default_factory=list)


def decode(
    tokens: Tensor,
    bias: AttentionBias | None,
    blocks: nn.ModuleList,
    return_attn: bool = False,
) -> tuple[Tensor, list[Tensor]]:
    attns = []
    for blk in blocks:
        tokens, attn = blk(tokens, bias)
        if return_attn:
            attns.append(attn)
    return tokens, attns


class MultiViewDecoder(nn.Module):
    def __init__(self, cfg: DecoderConfig, bev_channels: int, bev_shape: tuple[int, int],
                 image_size: tuple[int, int]):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        self.bev_shape = bev_shape
        self.cls_token = nn.Parameter(torch.zeros(1, 1, d))
        self.bev_embed = nn.Linear(cfg.bev_patch * cfg.bev_patch * bev_channels, d)
        self.scene_pos = nn.Parameter(
            torch.randn(bev_shape[0] // cfg.bev_patch, bev_shape[1] // cfg.bev_patch, d) * 0.02
        )
        spec = ViewTokenSpec(
            patch_size=cfg.view_patch,
            grid_shape=(image_size[0] // cfg.view_patch, image_size[1] // cfg.view_patch),
            max_cameras=cfg.max_cameras,
            plucker_hidden=cfg.plucker_hidden,
        )
        self.view_builder = ViewTokenBuilder(spec, d)
        self.blocks = nn.ModuleList(Block(d, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(d)

    def scene_grid(self) -> tuple[int, int]:
        return self.bev_shape[0] // self.cfg.bev_patch, self.bev_shape[1] // self.cfg.bev_patch

    def forward(
        self,
        scene_tokens: Tensor,
        plucker: Tensor,
        patch_mask: np.ndarray | Tensor | None,
        return_attn: bool = False,
    ) -> DecoderOutput:
        """scene_tokens (B, H_b, W_b, C_b); plucker (N, hp, wp, 6); patch_mask (N, num_scene)."""
        b = scene_tokens.shape[0]
        n, hp, wp, _ = plucker.shape
        gh, gw = self.scene_grid()
        scene = patchify_bev(scene_tokens, self.cfg.bev_patch, self.bev_embed)
        scene = scene + self.scene_pos.reshape(1, gh * gw, -1)
        view = self.view_builder(plucker).reshape(1, n * hp * wp, -1).expand(b, -1, -1)
        x = torch.cat([self.cls_token.expand(b, -1, -1), scene, view], dim=1)

        layout = TokenLayout(num_scene=gh * gw, num_cameras=n, patches_per_camera=hp * wp)
        bias = None
        if self.cfg.use_visibility_mask and patch_mask is not None:
            bias = build_attention_bias(patch_mask, layout, self.cfg.mask_mode, dtype=x.dtype)
            bias.bias = bias.bias.to(x.device)
        x, attns = decode(x, bias, self.blocks, return_attn)
        x = self.norm(x)
        return DecoderOutput(
            scene=x[:, layout.scene_slice].reshape(b, gh, gw, -1),
            view=x[:, layout.view_slice].reshape(b, n, hp, wp, -1),
            cls=x[:, 0],
            attentions=attns,
        )
