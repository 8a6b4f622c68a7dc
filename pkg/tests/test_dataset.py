"""Test: tensor files, sample folders, dataset builds and the torch Dataset view."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import numpy as np
import pytest
import torch

from config_io.config import load_config
from config_io.schema import MissingDatasetError, RejectedInputError, Split
from sim.dataset import (
    SceneDataset,
    build_dataset,
    load_manifest,
    read_sample,
    read_tensor,
    split_of,
    write_tensor,
)

ROOT = Path(__file__).resolve().parent.parent
TINY = ROOT / "configs" / "tiny.yaml"


@pytest.fixture(scope="module")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_data")
    build_dataset(load_config(TINY), root)
    return root


def test_tensor_file_preserves_dtype_and_shape(tmp_path):
    for arr in (np.arange(24, dtype=np.float32).reshape(2, 3, 4),
                np.array([[True, False]]),
                np.arange(5, dtype=np.uint8)):
        write_tensor(tmp_path / "t.dtk", arr)
        back = read_tensor(tmp_path / "t.dtk")
        assert back.dtype == arr.dtype
        np.testing.assert_array_equal(back, arr)


def test_tensor_file_rejects_complex(tmp_path):
    with pytest.raises(RejectedInputError):
        write_tensor(tmp_path / "t.dtk", np.zeros(3, dtype=np.complex64))


def test_tensor_file_rejects_foreign_bytes(tmp_path):
    (tmp_path / "t.dtk").write_bytes(b"NOPE0000")
    with pytest.raises(RejectedInputError):
        read_tensor(tmp_path / "t.dtk")


def test_split_takes_last_fraction():
    splits = [split_of(i, 8, 0.25) for i in range(8)]
    assert splits[:6] == [Split.TRAIN] * 6
    assert splits[6:] == [Split.VAL] * 2
    assert all(split_of(i, 4, 0.0) == Split.TRAIN for i in range(4))


def test_build_writes_manifest(tiny_root):
    manifest = load_manifest(tiny_root)
    assert len(manifest["samples"]) == 4
    assert [s["split"] for s in manifest["samples"]] == ["train", "train", "val", "val"]
    assert len(manifest["class_weights"]) == 6
    assert (tiny_root / "rig.yaml").exists()


def test_sample_folder_round_trip(tiny_root):
    rec = read_sample(tiny_root / "sample_00000")
    assert rec.images.shape == (2, 32, 64, 3)
    assert rec.depth.shape == (2, 32, 64)
    assert rec.occupancy.shape == (8, 8, 4)
    assert rec.scene is not None
    assert len(rec.anchors) == 2
    assert rec.aligned_depth is not None


def test_build_is_deterministic(tiny_root, tmp_path):
    build_dataset(load_config(TINY), tmp_path)
    a = read_sample(tiny_root / "sample_00001")
    b = read_sample(tmp_path / "sample_00001")
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.semantics, b.semantics)


def test_scene_dataset_items(tiny_root):
    ds = SceneDataset(tiny_root, Split.TRAIN)
    assert len(ds) == 2
    item = ds[0]
    assert item["images"].shape == (2, 3, 32, 64)
    assert item["images"].dtype == torch.float32
    assert item["semantics"].dtype == torch.int64
    assert item["occupancy"].shape == (8, 8, 4)
    assert item["depth_valid"].dtype == torch.bool
    assert len(ds.rig) == 2
    assert ds.class_weights.shape == (6,)


def test_exact_depth_target(tiny_root):
    ds = SceneDataset(tiny_root, "val", depth_target="exact")
    item = ds[0]
    torch.testing.assert_close(item["depth"], item["depth_gt"])


def test_limit_caps_split(tiny_root):
    assert len(SceneDataset(tiny_root, Split.VAL, limit=1)) == 1


def test_missing_dataset(tmp_path):
    with pytest.raises(MissingDatasetError):
        SceneDataset(tmp_path / "nothing")
    with pytest.raises(MissingDatasetError):
        read_sample(tmp_path / "nothing")
