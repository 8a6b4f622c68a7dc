"""Test: procedural scene generation is deterministic and respects placement constraints."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import numpy as np
import pytest

from config_io.config import GridConfig, SceneConfig
from config_io.schema import BOX_CLASSES, SceneGenerationError, SemanticClass
from sim.world import Box, SyntheticScene, generate_scene


def _gap_between(a: Box, b: Box) -> float:
    """Largest axis-aligned xy separation between two footprints (negative when they overlap)."""
    gx = max(a.lo[0] - b.hi[0], b.lo[0] - a.hi[0])
    gy = max(a.lo[1] - b.hi[1], b.lo[1] - a.hi[1])
    return max(gx, gy)


def test_same_seed_same_scene():
    cfg, grid = SceneConfig(), GridConfig()
    a = generate_scene(7, cfg, grid)
    b = generate_scene(7, cfg, grid)
    assert a.to_dict() == b.to_dict()


def test_different_seeds_differ():
    cfg, grid = SceneConfig(), GridConfig()
    assert generate_scene(1, cfg, grid).to_dict() != generate_scene(2, cfg, grid).to_dict()


def test_zero_boxes_is_a_valid_scene():
    scene = generate_scene(0, SceneConfig(min_boxes=0, max_boxes=0), GridConfig())
    assert scene.boxes == []
    assert scene.ground_z == pytest.approx(-1.8)


def test_box_count_within_range():
    cfg = SceneConfig(min_boxes=3, max_boxes=5)
    for seed in range(10):
        assert 3 <= len(generate_scene(seed, cfg, GridConfig()).boxes) <= 5


def test_boxes_respect_bounds_clearance_and_spacing():
    cfg, grid = SceneConfig(), GridConfig()
    r = grid.pc_range
    for seed in range(10):
        scene = generate_scene(seed, cfg, grid)
        for i, box in enumerate(scene.boxes):
            assert box.cls in BOX_CLASSES
            assert box.lo[0] >= r[0] and box.hi[0] <= r[3]
            assert box.lo[1] >= r[1] and box.hi[1] <= r[4]
            assert box.lo[2] == pytest.approx(cfg.ground_z)
            c = cfg.ego_clearance
            assert not (box.lo[0] < c and box.hi[0] > -c and box.lo[1] < c and box.hi[1] > -c)
            assert np.all((box.albedo >= 0) & (box.albedo <= 1))
            for other in scene.boxes[i + 1:]:
                assert _gap_between(box, other) >= 0.5


def test_invalid_box_range():
    with pytest.raises(SceneGenerationError):
        generate_scene(0, SceneConfig(min_boxes=3, max_boxes=2), GridConfig())


def test_unplaceable_boxes_raise():
    cfg = SceneConfig(min_boxes=1, max_boxes=1, ego_clearance=100.0, max_retries=5)
    with pytest.raises(SceneGenerationError):
        generate_scene(0, cfg, GridConfig())


def test_scene_dict_round_trip():
    scene = generate_scene(3, SceneConfig(), GridConfig())
    back = SyntheticScene.from_dict(scene.to_dict())
    assert back.to_dict() == scene.to_dict()
    assert all(isinstance(b.cls, SemanticClass) for b in back.boxes)


def test_box_contains_is_closed():
    box = Box(np.array([0.0, 0.0, 1.0]), np.array([2.0, 2.0, 2.0]), SemanticClass.CAR, np.ones(3))
    pts = np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 2.0], [1.01, 0.0, 1.0]])
    np.testing.assert_array_equal(box.contains(pts), [True, True, False])


def test_box_classes_follow_configured_frequencies():
    cfg = SceneConfig(min_boxes=8, max_boxes=8)
    counts = {c: 0 for c in BOX_CLASSES}
    for seed in range(1000):
        for box in generate_scene(seed, cfg, GridConfig()).boxes:
            counts[box.cls] += 1
    total = sum(counts.values())
    assert total == 8000
    weights = sum(cfg.class_freqs.values())
    for cls in BOX_CLASSES:
        expected = cfg.class_freqs.get(cls.name, 0.0) / weights
        # 8000 draws: one standard deviation is at most ~0.0056
        assert counts[cls] / total == pytest.approx(expected, abs=0.03), cls.name
