"""Experiment configuration: sub-configs, presets, loading and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from config_io.schema import (
    BackboneName,
    ConfigurationError,
    MaskMode,
    RobustLoss,
    RunMode,
    Task,
)


# ── Sub-configs ────────────────────────────────────────────────────────────

class GridConfig(BaseModel):
    """BEV query grid and occupancy target grid, both over pc_range (meters)."""
    pc_range: list[float] = Field(default_factory=lambda: [-25.6, -25.6, -3.0, 25.6, 25.6, 3.0])
    bev_h: int = 32
    bev_w: int = 32
    n_height_bins: int = 8
    occ_shape: tuple[int, int, int] = (32, 32, 8)


class SceneConfig(BaseModel):
    """Procedural scene generation."""
    min_boxes: int = 6
    max_boxes: int = 14
    class_freqs: dict[str, float] = Field(default_factory=lambda: {
        "CAR": 0.40, "BUILDING": 0.20, "VEGETATION": 0.25, "PEDESTRIAN": 0.15,
    })
    ground_z: float = -1.8
    ego_clearance: float = 4.0
    max_retries: int = 200
    sky_color: tuple[float, float, float] = (0.55, 0.70, 0.92)
    sun_direction: tuple[float, float, float] = (0.4, 0.3, 0.85)
    far_plane: float = 200.0


class PseudoDepthConfig(BaseModel):
    """Random per-image affine corruption that simulates monocular scale ambiguity."""
    enabled: bool = True
    scale_range: tuple[float, float] = (0.6, 1.6)
    shift_range: tuple[float, float] = (-0.5, 0.5)
    noise_std: float = 0.0


class RobustFitConfig(BaseModel):
    """Robust affine fit of pseudo depth to metric anchors."""
    loss: RobustLoss = RobustLoss.HUBER
    delta: float = Field(default=0.5, gt=0.0)
    tukey_c: float = Field(default=2.0, gt=0.0)
    tol: float = Field(default=1e-8, gt=0.0)
    max_iter: int = Field(default=50, ge=1)
    trim_factor: float = Field(default=2.0, gt=0.0)


class DataConfig(BaseModel):
    root: str = "runs/data/desk"
    rig_preset: str = "surround6"
    resolution: tuple[int, int] = (64, 176)
    num_samples: int = 64
    val_fraction: float = 0.25
    seed: int = 0
    semantic_keep: float = 0.3
    anchors_per_camera: int = 200
    depth_target: str = "aligned"  # aligned / exact
    pseudo_depth: PseudoDepthConfig = Field(default_factory=PseudoDepthConfig)
    alignment: RobustFitConfig = Field(default_factory=RobustFitConfig)
    num_workers: int = 0


class BackboneConfig(BaseModel):
    name: BackboneName = BackboneName.TINY_CONV
    channels: int = 64
    levels: int = 4
    stride: int = 4


class EncoderConfig(BaseModel):
    bev_channels: int = 64
    num_offsets: int = 4
    num_heads: int = 4
    num_freqs: int = 16
    pos_scale: float = 64.0
    offset_init_radius: float = 0.5


class DecoderConfig(BaseModel):
    depth: int = 4
    dim: int = 256
    num_heads: int = 4
    mlp_ratio: float = 4.0
    bev_patch: int = 2
    view_patch: int = 8
    mask_mode: MaskMode = MaskMode.ADDITIVE
    use_visibility_mask: bool = True
    max_cameras: int = 8
    plucker_hidden: int = 64


class HeadsConfig(BaseModel):
    fusion_channels: int = 64
    pyramid_widths: list[int] = Field(default_factory=lambda: [64, 128, 256, 256])
    num_sem_classes: int = 17
    num_occ_classes: int = 6
    occ_channels: int = 64
    film_slices: int = 8
    refine_blocks: int = 1
    depth_scale: float = 10.0
    occ_resample: str = "trilinear"  # trilinear / nearest


class LossWeights(BaseModel):
    """Outer task weights and inner rgb/depth/occupancy weights."""
    rgb: float = Field(default=10.0, ge=0.0)
    depth: float = Field(default=0.2, ge=0.0)
    sem: float = Field(default=0.1, ge=0.0)
    occ: float = Field(default=5.0, ge=0.0)
    reg: float = Field(default=3.0, ge=0.0)
    pix: float = Field(default=1.0, ge=0.0)
    perc: float = Field(default=1.0, ge=0.0)
    adv: float = Field(default=0.3, ge=0.0)
    lovasz: float = Field(default=0.2, ge=0.0)
    charb_eps: float = Field(default=0.001, gt=0.0)
    grad: float = Field(default=0.5, ge=0.0)
    perceptual_enabled: bool = False


class TaskConfig(BaseModel):
    recon: bool = True
    depth: bool = True
    sem: bool = True
    occ: bool = True
    reg: bool = True

    def enabled(self) -> list[Task]:
        return [t for t in Task if getattr(self, t.value)]


class OptimConfig(BaseModel):
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    grad_clip: float = 35.0
    warmup_steps: int = 100
    min_lr_ratio: float = 0.0


class TrainConfig(BaseModel):
    steps: int = 2000
    batch_size: int = 2
    eval_every: int = 500
    ckpt_every: int = 1000
    log_every: int = 10
    mode: RunMode = RunMode.DETERMINISTIC
    device: str = "cpu"
    seed: int = 0
    max_eval_samples: int | None = None


class ProbeVariant(BaseModel):
    name: str
    overrides: dict[str, Any] = Field(default_factory=dict)


class ProbeConfig(BaseModel):
    stage1_steps: int = 1000
    stage2_steps: int = 500
    stage2_lr: float = 1e-3
    variants: list[ProbeVariant] = Field(default_factory=lambda: [
        ProbeVariant(name="with-mask", overrides={"decoder": {"use_visibility_mask": True}}),
        ProbeVariant(name="without-mask", overrides={"decoder": {"use_visibility_mask": False}}),
    ])


class PathsConfig(BaseModel):
    out_dir: str = "runs/exp"


# ── Top-level config ───────────────────────────────────────────────────

class ExperimentConfig(BaseModel):
    preset: str = "desk"
    name: str = "desk"
    grid: GridConfig = Field(default_factory=GridConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    heads: HeadsConfig = Field(default_factory=HeadsConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    tasks: TaskConfig = Field(default_factory=TaskConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        g = self.grid
        r = g.pc_range
        if len(r) != 6 or any(r[i + 3] <= r[i] for i in range(3)):
            raise ConfigurationError(f"pc_range must satisfy max > min on every axis, got {r}")
        if min(g.bev_h, g.bev_w, g.n_height_bins) < 1:
            raise ConfigurationError("BEV grid sizes and n_height_bins must be >= 1")
        if g.bev_h % self.decoder.bev_patch or g.bev_w % self.decoder.bev_patch:
            raise ConfigurationError(
                f"BEV grid {g.bev_h}x{g.bev_w} not divisible by bev_patch {self.decoder.bev_patch}"
            )
        tokens_h, tokens_w = g.bev_h // self.decoder.bev_patch, g.bev_w // self.decoder.bev_patch
        if g.occ_shape[0] < tokens_h or g.occ_shape[1] < tokens_w:
            raise ConfigurationError(
                f"occupancy grid {g.occ_shape} is coarser than the scene token grid {tokens_h}x{tokens_w}"
            )
        if self.encoder.bev_channels % 2:
            raise ConfigurationError("encoder.bev_channels (C_b) must be even")
        if self.encoder.bev_channels % self.encoder.num_heads:
            raise ConfigurationError("encoder.bev_channels must be divisible by encoder.num_heads")
        if self.decoder.dim % self.decoder.num_heads:
            raise ConfigurationError("decoder.dim must be divisible by decoder.num_heads")
        h, w = self.data.resolution
        for name, div in (("view_patch", self.decoder.view_patch), ("backbone stride", self.backbone.stride)):
            if h % div or w % div:
                raise ConfigurationError(f"resolution {h}x{w} not divisible by {name} {div}")
        if not self.tasks.enabled():
            raise ConfigurationError("at least one task must be enabled")
        if self.train.steps <= 0 or self.optim.warmup_steps < 0:
            raise ConfigurationError("schedule lengths must be positive")
        if len(self.heads.pyramid_widths) != 4:
            raise ConfigurationError("heads.pyramid_widths must list 4 levels")
        return self


# ── Presets ────────────────────────────────────────────────────────────────

PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "fullscale": {
        "name": "fullscale",
        "grid": {
            "pc_range": [-51.2, -51.2, -5.0, 51.2, 51.2, 3.0],
            "bev_h": 128, "bev_w": 128, "n_height_bins": 8,
            "occ_shape": [200, 200, 16],
        },
        "data": {"resolution": [256, 704], "rig_preset": "surround6"},
        "backbone": {"channels": 768, "stride": 4},
        "encoder": {"bev_channels": 768, "num_heads": 8},
        "decoder": {"depth": 12, "dim": 768, "num_heads": 12, "bev_patch": 4, "view_patch": 16},
        "heads": {
            "fusion_channels": 256,
            "pyramid_widths": [256, 512, 1024, 1024],
            "num_occ_classes": 18,
            "occ_channels": 256,
        },
        "train": {"batch_size": 1},
    },
}


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Load config from YAML file on top of its preset, applying optional overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if p.exists():
            with open(p) as f:
                data = yaml.safe_load(f) or {}
    if overrides:
        _deep_merge(data, overrides)
    preset = data.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigurationError(f"Unknown preset: {preset}")
    base = copy.deepcopy(PRESETS[preset])
    _deep_merge(base, data)
    return _build(base)


def merge_overrides(config: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Return a copy of the config with nested overrides applied."""
    data = config.model_dump(mode="json")
    _deep_merge(data, copy.deepcopy(overrides))
    return _build(data)


def _build(data: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the architecture-relevant sections."""
    dump = config.model_dump(mode="json")
    keys = ("grid", "backbone", "encoder", "decoder", "heads")
    canonical = json.dumps({k: dump[k] for k in keys}, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _deep_merge(base: dict, overlay: dict) -> None:
    for k, v in overlay.items():
        if k in base and isinstance(base[k], dict) and isinstance(v, dict):
            _deep_merge(base[k], v)
        else:
            base[k] = v
