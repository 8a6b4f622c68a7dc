"""Test: qualitative image helpers."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import imageio.v3 as iio
import numpy as np

from config_io.schema import IGNORE_LABEL, SemanticClass
from render.figures import bev_token_pca, occupancy_top_down, save_png, tile, to_uint8
from render.palettes import CLASS_COLORS, colorize_labels, depth_color


def test_tile_layout():
    a = np.zeros((4, 5, 3), dtype=np.uint8)
    canvas = tile([a, a, a], cols=2, pad=1)
    assert canvas.shape == (9, 11, 3)
    assert canvas[4, 0, 0] == 255  # padding row
    assert canvas[5, 6, 0] == 255  # empty slot


def test_to_uint8_clips():
    np.testing.assert_array_equal(to_uint8(np.array([-1.0, 0.0, 0.5, 2.0])), [0, 0, 128, 255])


def test_labels_use_class_colors():
    rgb = colorize_labels(np.array([[int(SemanticClass.CAR), IGNORE_LABEL]]))
    assert tuple(rgb[0, 0]) == CLASS_COLORS[SemanticClass.CAR]
    assert tuple(rgb[0, 1]) == (40, 40, 40)


def test_invalid_depth_is_black():
    img = depth_color(np.array([[1.0, 30.0]]), valid=np.array([[True, False]]))
    assert img[0, 1].tolist() == [0, 0, 0]
    assert img[0, 0].any()


def test_top_down_picks_highest_occupied_voxel():
    labels = np.zeros((2, 1, 3), dtype=np.int64)
    labels[0, 0] = [int(SemanticClass.ROAD), int(SemanticClass.CAR), 0]
    img = occupancy_top_down(labels)
    # rows are flipped so x points up
    assert tuple(img[1, 0]) == CLASS_COLORS[SemanticClass.CAR]
    assert tuple(img[0, 0]) == CLASS_COLORS[SemanticClass.EMPTY]


def test_token_pca_is_sign_stable():
    rng = np.random.default_rng(0)
    tokens = rng.normal(size=(6, 7, 8))
    a = bev_token_pca(tokens)
    assert a.shape == (6, 7, 3) and a.dtype == np.uint8
    np.testing.assert_array_equal(a, bev_token_pca(tokens * 1.0))
    assert a.min() == 0 and a.max() == 255


def test_save_png_round_trip(tmp_path):
    img = colorize_labels(np.arange(6).reshape(2, 3))
    path = save_png(tmp_path / "sub" / "x.png", img)
    np.testing.assert_array_equal(iio.imread(path), img)
