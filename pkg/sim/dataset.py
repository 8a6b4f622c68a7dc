"""On-disk synthetic dataset: tensor files, sample folders, manifest and a torch Dataset.

Tensor file layout (little endian):
    b"DTKT" | uint8 version | uint8 dtype code | uint8 ndim | ndim x uint32 dims | C-order data
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Any

import imageio.v3 as iio
import numpy as np
import torch
import yaml
from torch.utils.data import Dataset

from alignment.roe import SparseAnchors
from config_io.config import ExperimentConfig
from config_io.schema import MissingDatasetError, RejectedInputError, Split
from config_io.utils import ensure_dir, load_json, save_json
from geometry.cameras import CameraRig, load_rig, make_rig, rig_hash, save_rig
from objectives.labels import inverse_frequency_weights
from sim.supervision import SampleRecord, make_supervision
from sim.world import SyntheticScene, generate_scene

logger = logging.getLogger(__name__)

MAGIC = b"DTKT"
FORMAT_VERSION = 1
DTYPE_CODES: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<i4"),
    4: np.dtype("<i8"),
    5: np.dtype("?"),
}
_CODE_OF = {(dt.kind, dt.itemsize): code for code, dt in DTYPE_CODES.items()}


# ── Tensor files ───────────────────────────────────────────────────────────

def write_tensor(path: str | Path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    code = _CODE_OF.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise RejectedInputError(f"unsupported tensor dtype {arr.dtype}")
    data = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code])
    header = MAGIC + struct.pack("<BBB", FORMAT_VERSION, code, data.ndim)
    header += struct.pack(f"<{data.ndim}I", *data.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise RejectedInputError(f"{path}: not a tensor file")
    version, code, ndim = struct.unpack_from("<BBB", raw, 4)
    if version != FORMAT_VERSION or code not in DTYPE_CODES:
        raise RejectedInputError(f"{path}: unsupported version {version} or dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}I", raw, 7)
    offset = 7 + 4 * ndim
    return np.frombuffer(raw, dtype=DTYPE_CODES[code], offset=offset).reshape(shape).copy()


# ── Sample folders ─────────────────────────────────────────────────────────

def _anchor_block(anchors: list[SparseAnchors]) -> np.ndarray:
    """Stack per-camera anchors into (N, K, 4), padding with invalid rows."""
    k = max((len(a) for a in anchors), default=0)
    block = np.zeros((len(anchors), k, 4), dtype=np.float64)
    for i, a in enumerate(anchors):
        block[i, : len(a)] = a.to_array()
    return block


def write_sample(record: SampleRecord, sample_dir: str | Path) -> Path:
    out = ensure_dir(sample_dir)
    for i in range(record.num_cameras):
        img = np.clip(np.rint(record.images[i] * 255.0), 0, 255).astype(np.uint8)
        iio.imwrite(out / f"cam{i}.png", img)
    write_tensor(out / "depth.dtk", record.depth.astype(np.float32))
    write_tensor(out / "depth_valid.dtk", record.depth_valid.astype(bool))
    if record.pseudo_depth is not None:
        write_tensor(out / "pseudo_depth.dtk", record.pseudo_depth.astype(np.float32))
        write_tensor(out / "aligned_depth.dtk", record.aligned_depth.astype(np.float32))
    write_tensor(out / "semantics.dtk", record.semantics.astype(np.uint8))
    write_tensor(out / "occupancy.dtk", record.occupancy.astype(np.uint8))
    write_tensor(out / "anchors.dtk", _anchor_block(record.anchors))
    if record.scene is not None:
        with open(out / "scene.yaml", "w") as f:
            yaml.safe_dump(record.scene.to_dict(), f, sort_keys=False)
    save_rig(record.rig, out / "rig.yaml")
    save_json({
        "seed": record.scene.seed if record.scene is not None else None,
        "injected_affine": [list(ab) for ab in record.injected_affine],
        "fits": [f.to_dict() if f is not None else None for f in record.fits],
    }, out / "meta.json")
    return out


def read_sample(sample_dir: str | Path) -> SampleRecord:
    d = Path(sample_dir)
    if not d.is_dir():
        raise MissingDatasetError(f"sample directory not found: {d}")
    rig = load_rig(d / "rig.yaml")
    images = np.stack([iio.imread(d / f"cam{i}.png") for i in range(len(rig))]).astype(np.float64) / 255.0
    anchors_arr = read_tensor(d / "anchors.dtk")
    scene = None
    if (d / "scene.yaml").exists():
        with open(d / "scene.yaml") as f:
            scene = SyntheticScene.from_dict(yaml.safe_load(f))
    meta = load_json(d / "meta.json")
    has_pseudo = (d / "pseudo_depth.dtk").exists()
    return SampleRecord(
        images=images,
        depth=read_tensor(d / "depth.dtk").astype(np.float64),
        depth_valid=read_tensor(d / "depth_valid.dtk"),
        semantics=read_tensor(d / "semantics.dtk"),
        occupancy=read_tensor(d / "occupancy.dtk"),
        anchors=[SparseAnchors.from_array(a) for a in anchors_arr],
        rig=rig,
        pseudo_depth=read_tensor(d / "pseudo_depth.dtk").astype(np.float64) if has_pseudo else None,
        aligned_depth=read_tensor(d / "aligned_depth.dtk").astype(np.float64) if has_pseudo else None,
        injected_affine=[tuple(ab) for ab in meta.get("injected_affine", [])],
        scene=scene,
    )


# ── Dataset builds ─────────────────────────────────────────────────────────

def sample_seed(base_seed: int, index: int) -> int:
    return base_seed * 1_000_003 + index


def split_of(index: int, num_samples: int, val_fraction: float) -> Split:
    """The last val_fraction of samples form the validation split."""
    n_val = int(round(num_samples * val_fraction))
    return Split.VAL if index >= num_samples - n_val else Split.TRAIN


def build_dataset(config: ExperimentConfig, root: str | Path | None = None) -> dict[str, Any]:
    """Generate, render and write every sample; return the manifest."""
    dcfg = config.data
    out = ensure_dir(root or dcfg.root)
    rig = make_rig(dcfg.rig_preset, tuple(dcfg.resolution))
    save_rig(rig, out / "rig.yaml")

    samples = []
    counts = np.zeros(config.heads.num_occ_classes, dtype=np.int64)
    for i in range(dcfg.num_samples):
        seed = sample_seed(dcfg.seed, i)
        scene = generate_scene(seed, config.scene, config.grid)
        record = make_supervision(scene, rig, dcfg, config.grid)
        name = f"sample_{i:05d}"
        write_sample(record, out / name)
        split = split_of(i, dcfg.num_samples, dcfg.val_fraction)
        if split == Split.TRAIN:
            counts += np.bincount(record.occupancy.reshape(-1), minlength=counts.shape[0])[: counts.shape[0]]
        samples.append({"name": name, "seed": seed, "split": split.value})
        logger.info(f"Wrote {name} ({split.value}, {len(scene.boxes)} boxes)")

    manifest = {
        "version": FORMAT_VERSION,
        "rig_preset": dcfg.rig_preset,
        "rig_hash": rig_hash(rig),
        "resolution": list(dcfg.resolution),
        "grid": config.grid.model_dump(mode="json"),
        "class_weights": [float(w) for w in inverse_frequency_weights(counts)],
        "samples": samples,
    }
    save_json(manifest, out / "manifest.json")
    return manifest


def load_manifest(root: str | Path) -> dict[str, Any]:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise MissingDatasetError(f"no dataset manifest at {path}; run generate-data first")
    return load_json(path)


# ── torch Dataset ──────────────────────────────────────────────────────────

class SceneDataset(Dataset):
    """Samples of one split as tensors; images are (N, 3, H, W)."""

    def __init__(self, root: str | Path, split: Split | str = Split.TRAIN,
                 depth_target: str = "aligned", limit: int | None = None):
        self.root = Path(root)
        self.manifest = load_manifest(self.root)
        split = Split(split)
        self.names = [s["name"] for s in self.manifest["samples"] if s["split"] == split.value]
        if limit is not None:
            self.names = self.names[:limit]
        self.depth_target = depth_target
        self.rig: CameraRig = load_rig(self.root / "rig.yaml")

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, idx: int) -> dict[str, Any]:
        rec = read_sample(self.root / self.names[idx])
        depth = rec.depth_target(self.depth_target)
        return {
            "name": self.names[idx],
            "images": torch.from_numpy(rec.images.transpose(0, 3, 1, 2).astype(np.float32)),
            "depth": torch.from_numpy(depth.astype(np.float32)),
            "depth_gt": torch.from_numpy(rec.depth.astype(np.float32)),
            "depth_valid": torch.from_numpy(rec.depth_valid.astype(bool)),
            "semantics": torch.from_numpy(rec.semantics.astype(np.int64)),
            "occupancy": torch.from_numpy(rec.occupancy.astype(np.int64)),
        }

    @property
    def class_weights(self) -> torch.Tensor:
        return torch.tensor(self.manifest["class_weights"], dtype=torch.float32)
