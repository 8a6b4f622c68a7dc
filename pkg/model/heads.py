"""Task heads: dense per-camera decoders, the depth adaptor and the occupancy head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import Tensor, nn

from config_io.config import HeadsConfig
from config_io.schema import ConfigurationError

MIN_DEPTH: float = 1e-3


# ── Dense view decoders ────────────────────────────────────────────────────

class _Reassemble(nn.Module):
    """Project tokens to one pyramid width and resample by 2**shift."""

    def __init__(self, dim: int, width: int, fusion: int, shift: int):
        super().__init__()
        self.proj = nn.Conv2d(dim, width, 1)
        if shift > 0:
            f = 2 ** shift
            self.resample: nn.Module = nn.ConvTranspose2d(width, width, f, stride=f)
        elif shift < 0:
            self.resample = nn.Conv2d(width, width, 3, stride=2, padding=1)
        else:
            self.resample = nn.Identity()
        self.out = nn.Conv2d(width, fusion, 3, padding=1, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return self.out(self.resample(self.proj(x)))


class _FusionUnit(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.res = nn.Sequential(nn.GELU(), nn.Conv2d(ch, ch, 3, padding=1), nn.GELU(), nn.Conv2d(ch, ch, 3, padding=1))

    def forward(self, x: Tensor, skip: Tensor | None = None) -> Tensor:
        if skip is not None:
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = x + skip
        return x + self.res(x)


class DenseDecoder(nn.Module):
    """Token grid -> 4-level pyramid -> top-down fusion -> upsample to full resolution."""

    ACTIVATIONS = ("sigmoid", "softplus", "none")

    def __init__(self, dim: int, cfg: HeadsConfig, out_channels: int, activation: str = "none",
                 scale: float = 1.0):
        super().__init__()
        if out_channels < 1 or activation not in self.ACTIVATIONS:
            raise ConfigurationError(f"invalid dense decoder output ({out_channels}, {activation})")
        widths = cfg.pyramid_widths
        fusion = cfg.fusion_channels
        self.reassemble = nn.ModuleList(
            _Reassemble(dim, w, fusion, s) for w, s in zip(widths, (2, 1, 0, -1))
        )
        self.fuse = nn.ModuleList(_FusionUnit(fusion) for _ in widths)
        self.head = nn.Sequential(
            nn.Conv2d(fusion, fusion // 2, 3, padding=1), nn.GELU(), nn.Conv2d(fusion // 2, out_channels, 1),
        )
        self.activation = activation
        self.scale = scale

    def forward(self, tokens: Tensor, out_size: tuple[int, int]) -> Tensor:
        """tokens (B', hp, wp, D) -> (B', out_channels, H, W)."""
        x = rearrange(tokens, "b h w d -> b d h w")
        levels = [r(x) for r in self.reassemble]
        f = self.fuse[-1](levels[-1])
        for i in range(len(levels) - 2, -1, -1):
            f = self.fuse[i](f, levels[i])
        f = F.interpolate(f, size=out_size, mode="bilinear", align_corners=False)
        out = self.head(f)
        if self.activation == "sigmoid":
            return out.sigmoid()
        if self.activation == "softplus":
            return F.softplus(out) * self.scale
        return out


def _per_camera(decoder: DenseDecoder, view: Tensor, out_size: tuple[int, int]) -> Tensor:
    b, n = view.shape[:2]
    out = decoder(view.flatten(0, 1), out_size)
    return out.view(b, n, *out.shape[1:])


def rgb_head(view: Tensor, decoder: DenseDecoder, out_size: tuple[int, int]) -> Tensor:
    """(B, N, hp, wp, D) -> (B, N, 3, H, W) in [0, 1]."""
    return _per_camera(decoder, view, out_size)


def sem_head(view: Tensor, decoder: DenseDecoder, out_size: tuple[int, int]) -> Tensor:
    """(B, N, hp, wp, D) -> (B, N, C_sem, H, W) raw logits."""
    return _per_camera(decoder, view, out_size)


# ── Depth ──────────────────────────────────────────────────────────────────

@dataclass
class DepthAdaptorParams:
    a: Tensor  # (B, N), > 0
    b: Tensor  # (B, N)


class DepthAdaptor(nn.Module):
    """Per-camera affine (a, b) from mean-pooled view tokens through a residual MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, dim))
        self.out = nn.Linear(dim, 2)
        nn.init.zeros_(self.out.weight)
        with torch.no_grad():
            # softplus(log(e - 1)) = 1
            self.out.bias.copy_(torch.tensor([math.log(math.e - 1.0), 0.0]))

    def forward(self, view: Tensor) -> DepthAdaptorParams:
        pooled = view.mean(dim=(2, 3))
        h = self.norm(pooled)
        h = h + self.mlp(h)
        raw = self.out(h)
        return DepthAdaptorParams(a=F.softplus(raw[..., 0]), b=raw[..., 1])


def apply_depth_adaptor(raw: Tensor, params: DepthAdaptorParams) -> Tensor:
    """raw (B, N, H, W) -> a * raw + b per camera, clamped to MIN_DEPTH."""
    d = params.a[..., None, None] * raw + params.b[..., None, None]
    return d.clamp(min=MIN_DEPTH)


def depth_head(view: Tensor, decoder: DenseDecoder, adaptor: DepthAdaptor,
               out_size: tuple[int, int]) -> tuple[Tensor, DepthAdaptorParams]:
    """(B, N, hp, wp, D) -> metric depth (B, N, H, W) and the adaptor parameters used."""
    raw = _per_camera(decoder, view, out_size)[:, :, 0]
    params = adaptor(view)
    return apply_depth_adaptor(raw, params), params


# ── Occupancy ──────────────────────────────────────────────────────────────

@dataclass
class OccupancyVolume:
    logits: Tensor  # (B, C, X, Y, Z)

    @property
    def grid(self) -> tuple[int, int, int]:
        return tuple(self.logits.shape[-3:])

    def labels(self) -> Tensor:
        return self.logits.argmax(dim=1)


class OccHead(nn.Module):
    """Scene tokens -> 2D plane -> upsampling -> FiLM over height slices -> 3D refine -> classes."""

    def __init__(self, dim: int, cfg: HeadsConfig, occ_shape: tuple[int, int, int], bev_patch: int):
        super().__init__()
        c = cfg.occ_channels
        self.occ_shape = tuple(occ_shape)
        self.slices = cfg.film_slices
        self.resample_mode = cfg.occ_resample
        if self.resample_mode not in ("trilinear", "nearest"):
            raise ConfigurationError(f"unknown occupancy resample mode {self.resample_mode}")
        self.adapt = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, c))
        self.plane = nn.Sequential(
            nn.Conv2d(c, c, 3, padding=1, groups=c), nn.Conv2d(c, c, 1), nn.GELU(),
        )
        ups = int(round(math.log2(bev_patch))) if bev_patch > 1 else 0
        self.upsample = nn.Sequential(*[
            nn.Sequential(nn.ConvTranspose2d(c, c, 2, stride=2), nn.GELU()) for _ in range(ups)
        ])
        self.slice_embed = nn.Embedding(self.slices, c)
        self.film = nn.Sequential(nn.Linear(c, c), nn.GELU(), nn.Linear(c, 2 * c))
        nn.init.zeros_(self.film[-1].weight)
        nn.init.zeros_(self.film[-1].bias)
        self.refine = nn.ModuleList(
            nn.Sequential(nn.Conv3d(c, c, 3, padding=1), nn.GELU()) for _ in range(cfg.refine_blocks)
        )
        self.classifier = nn.Conv3d(c, cfg.num_occ_classes, 1)

    def film_params(self) -> tuple[Tensor, Tensor]:
        """Per-slice (gamma, beta), each (S, C)."""
        idx = torch.arange(self.slices, device=self.slice_embed.weight.device)
        d_gamma, beta = self.film(self.slice_embed(idx)).chunk(2, dim=-1)
        return 1.0 + d_gamma, beta

    def to_plane(self, scene: Tensor) -> Tensor:
        """(B, h', w', D) -> (B, C, X', Y')."""
        x = rearrange(self.adapt(scene), "b h w c -> b c h w")
        return self.upsample(self.plane(x))

    def lift_slices(self, plane: Tensor) -> Tensor:
        """(B, C, X', Y') -> (B, C, X', Y', S) with FiLM per height slice."""
        gamma, beta = self.film_params()
        g = rearrange(gamma, "s c -> 1 c 1 1 s")
        b = rearrange(beta, "s c -> 1 c 1 1 s")
        return plane[..., None] * g + b

    def forward(self, scene: Tensor) -> OccupancyVolume:
        vol = self.lift_slices(self.to_plane(scene))
        for blk in self.refine:
            vol = vol + blk(vol)
        logits = self.classifier(vol)
        if tuple(logits.shape[-3:]) != self.occ_shape:
            kwargs = {"align_corners": False} if self.resample_mode == "trilinear" else {}
            logits = F.interpolate(logits, size=self.occ_shape, mode=self.resample_mode, **kwargs)
        return OccupancyVolume(logits)


def occ_head(scene: Tensor, head: OccHead) -> OccupancyVolume:
    return head(scene)


class BevAuxClassifier(nn.Module):
    """Per-scene-token class logits for the BEV regularization term."""

    def __init__(self, dim: int, num_classes: int):
        super().__init__()
        self.linear = nn.Linear(dim, num_classes)

    def forward(self, scene: Tensor) -> Tensor:
        """(B, h', w', D) -> (B, C, h', w')."""
        return rearrange(self.linear(scene), "b h w c -> b c h w")
