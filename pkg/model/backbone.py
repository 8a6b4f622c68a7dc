"""Pluggable image backbones and the feature pyramid that fuses their levels."""

from __future__ import annotations

from abc import ABC, abstractmethod

import torch.nn.functional as F
from torch import Tensor, nn

from config_io.config import BackboneConfig
from config_io.schema import BackboneName, ConfigurationError


class Backbone(nn.Module, ABC):
    """(B', 3, H, W) -> list of `levels` maps, each (B', C, H_l, W_l), coarsening by 2."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.channels = cfg.channels
        self.levels = cfg.levels
        self.stride = cfg.stride

    @abstractmethod
    def forward(self, images: Tensor) -> list[Tensor]:
        ...


def _conv_block(c_in: int, c_out: int, kernel: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=(kernel - stride) // 2),
        nn.GELU(),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        nn.GELU(),
    )


class TinyConvBackbone(Backbone):
    """Strided stem then 2x2/stride-2 downsampling stages."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__(cfg)
        c = cfg.channels
        self.stem = _conv_block(3, c, cfg.stride, cfg.stride)
        self.stages = nn.ModuleList(_conv_block(c, c, 2, 2) for _ in range(cfg.levels - 1))

    def forward(self, images: Tensor) -> list[Tensor]:
        x = self.stem(images)
        feats = [x]
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class TinyPatchBackbone(Backbone):
    """Non-overlapping patch embedding, coarser levels by average pooling."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__(cfg)
        self.embed = nn.Conv2d(3, cfg.channels, cfg.stride, stride=cfg.stride)
        self.mix = nn.Sequential(nn.GELU(), nn.Conv2d(cfg.channels, cfg.channels, 1))

    def forward(self, images: Tensor) -> list[Tensor]:
        x = self.mix(self.embed(images))
        feats = [x]
        for _ in range(self.levels - 1):
            x = F.avg_pool2d(x, 2)
            feats.append(x)
        return feats


class FoundationBackbone(Backbone):
    """Pretrained vision foundation model. Weights are not bundled with this package."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__(cfg)
        raise NotImplementedError(
            "The foundation backbone needs pretrained weights that are not shipped; "
            "use 'tiny-conv' or 'tiny-patch'."
        )

    def forward(self, images: Tensor) -> list[Tensor]:
        raise NotImplementedError


BACKBONES: dict[BackboneName, type[Backbone]] = {
    BackboneName.TINY_CONV: TinyConvBackbone,
    BackboneName.TINY_PATCH: TinyPatchBackbone,
    BackboneName.FOUNDATION: FoundationBackbone,
}


def build_backbone(cfg: BackboneConfig) -> Backbone:
    if cfg.levels < 1:
        raise ConfigurationError("backbone.levels must be >= 1")
    return BACKBONES[cfg.name](cfg)


class FPN(nn.Module):
    """Lateral 1x1 projections with top-down nearest upsampling and 3x3 smoothing."""

    def __init__(self, in_channels: int, out_channels: int, levels: int):
        super().__init__()
        self.lateral = nn.ModuleList(nn.Conv2d(in_channels, out_channels, 1) for _ in range(levels))
        self.smooth = nn.ModuleList(nn.Conv2d(out_channels, out_channels, 3, padding=1) for _ in range(levels))

    def forward(self, feats: list[Tensor]) -> list[Tensor]:
        lat = [proj(f) for proj, f in zip(self.lateral, feats)]
        for i in range(len(lat) - 2, -1, -1):
            lat[i] = lat[i] + F.interpolate(lat[i + 1], size=lat[i].shape[-2:], mode="nearest")
        return [s(x) for s, x in zip(self.smooth, lat)]
