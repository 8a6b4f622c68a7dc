"""Test: scene encoder keeps a fixed token budget and only lifts from cameras that see a cell."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import numpy as np
import pytest
import torch

from config_io.config import BackboneConfig, EncoderConfig, load_config, merge_overrides
from config_io.schema import ShapeMismatchError
from geometry.cameras import BevGridSpec, CameraRig, make_rig
from geometry.projection import bilinear_sample, project_points
from model.encoder import (
    BevPositionalEncoding,
    DeformableLifter,
    FeaturePyramid,
    ImageEncoder,
    SceneQueryGrid,
    fourier_features,
    lift_geometry,
    lift_to_bev,
)
from model.tokenizer import DriveTokenizer, grid_spec

ROOT = Path(__file__).resolve().parent.parent
TINY = ROOT / "configs" / "tiny.yaml"


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return DriveTokenizer(load_config(TINY)).double().eval()


def _images(n: int, h: int = 32, w: int = 64, seed: int = 0) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return torch.rand(1, n, 3, h, w, generator=g, dtype=torch.float64)


def test_token_budget_ignores_rig_and_resolution(model):
    shapes = set()
    for preset, size in (("stereo2", (32, 64)), ("surround6", (32, 64)), ("surround6", (64, 128))):
        rig = make_rig(preset, size)
        with torch.no_grad():
            scene = model.encode(_images(len(rig), *size), rig)
        shapes.add(scene.shape)
    assert shapes == {(1, 8, 8, 16)}


def test_unseen_cells_keep_their_query(model):
    rig = make_rig("stereo2", (32, 64))
    cell_mask = model.rig_geometry(rig).cell_mask
    unseen = ~cell_mask.any(axis=0)
    assert unseen.any() and not unseen.all()
    with torch.no_grad():
        tokens = model.encode(_images(2), rig).tokens.reshape(-1, 16)
        q = model.queries()
    torch.testing.assert_close(tokens[torch.from_numpy(unseen)], q[torch.from_numpy(unseen)], rtol=0, atol=0)
    assert not torch.allclose(tokens[torch.from_numpy(~unseen)], q[torch.from_numpy(~unseen)])


def test_tokens_do_not_depend_on_camera_order(model):
    rig = make_rig("surround6", (32, 64))
    order = [2, 0, 1, 5, 3, 4]
    imgs = _images(6)
    with torch.no_grad():
        a = model.encode(imgs, rig).tokens
        b = model.encode(imgs[:, order], rig.permuted(order)).tokens
    torch.testing.assert_close(a, b, rtol=1e-10, atol=1e-10)


def test_attention_is_a_joint_distribution_over_visible_cameras(model):
    rig = make_rig("stereo2", (32, 64))
    geom = lift_geometry(rig, model.grid)
    g = torch.Generator().manual_seed(1)
    q = torch.randn(model.grid.num_cells, 16, generator=g, dtype=torch.float64)
    with torch.no_grad():
        model.lifter.attn_proj.weight.normal_(generator=g)
        alpha = model.lifter.attention_weights(q, geom.cam_visible)
        model.lifter.attn_proj.weight.zero_()
    vis = geom.cam_visible.t()  # (Q, N)
    seen = vis.any(dim=1)
    totals = alpha.sum(dim=(2, 3, 4))  # (Q, heads)
    torch.testing.assert_close(totals[seen], torch.ones_like(totals[seen]))
    assert torch.all(totals[~seen] == 0)
    per_cam = alpha.sum(dim=(3, 4)).permute(0, 2, 1)  # (Q, N, heads)
    assert torch.all(per_cam[~vis] == 0)


def test_reference_grid_matches_projection(model):
    rig = make_rig("stereo2", (32, 64))
    geom = lift_geometry(rig, model.grid)
    pts = model.grid.reference_points()
    uv, _, valid = project_points(pts, rig[0])
    ref = geom.ref_grid[0].numpy()
    np.testing.assert_array_equal(geom.bin_valid[0].numpy(), valid)
    np.testing.assert_allclose(ref[valid][:, 0], 2.0 * (uv[valid][:, 0] + 0.5) / 64 - 1.0)
    np.testing.assert_allclose(ref[valid][:, 1], 2.0 * (uv[valid][:, 1] + 0.5) / 32 - 1.0)
    assert np.all(ref[~valid] == -2.0)


def test_camera_count_must_match_rig(model):
    with pytest.raises(ShapeMismatchError):
        model.encode(_images(3), make_rig("stereo2", (32, 64)))


def test_image_size_must_match_rig(model):
    with pytest.raises(ShapeMismatchError):
        model.encode(_images(2, 64, 128), make_rig("stereo2", (32, 64)))


def test_fourier_features_shape_and_range():
    xy = torch.tensor(grid_spec(load_config(TINY)).cell_centers())
    feats = fourier_features(xy, 4, 64.0)
    assert feats.shape == (8, 8, 16)
    assert feats.abs().max() <= 1.0


def test_pyramid_must_shrink():
    with pytest.raises(ShapeMismatchError):
        FeaturePyramid([torch.zeros(1, 1, 4, 8, 8), torch.zeros(1, 1, 4, 8, 8)])


# ── Per-camera attention ──

def _randomize_view_attn(lifter, seed: int) -> None:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        lifter.view_attn.weight.normal_(generator=g)
        lifter.view_attn.bias.normal_(generator=g)


def _zero_view_attn(lifter) -> None:
    with torch.no_grad():
        lifter.view_attn.weight.zero_()
        lifter.view_attn.bias.zero_()


def test_view_descriptor_is_unit_direction_and_log_range(model):
    rig = make_rig("stereo2", (32, 64))
    geom = lift_geometry(rig, model.grid)
    desc = geom.view_desc.numpy()
    assert desc.shape == (2, model.grid.num_cells, 4)
    np.testing.assert_allclose(np.linalg.norm(desc[..., :3], axis=-1), 1.0)
    mid = model.grid.reference_points().mean(axis=1)
    cam = rig[1]
    p_cam = mid @ cam.R.T + cam.t
    np.testing.assert_allclose(desc[1, :, 3], np.log1p(np.linalg.norm(p_cam, axis=-1)))


def test_cameras_get_their_own_attention_logits(model):
    rig = make_rig("stereo2", (32, 64))
    geom = lift_geometry(rig, model.grid)
    q = model.queries().detach()
    both = geom.cam_visible.all(dim=0)
    assert both.any()
    try:
        uniform = model.lifter.attention_weights(q, geom.cam_visible, geom.view_desc).detach()
        _randomize_view_attn(model.lifter, 3)
        weighted = model.lifter.attention_weights(q, geom.cam_visible, geom.view_desc).detach()
    finally:
        _zero_view_attn(model.lifter)
    # zero-initialized per-camera term: every visible camera starts with the same mass
    mass = uniform.sum(dim=(3, 4))[both]  # (cells, heads, N)
    torch.testing.assert_close(mass[..., 0], mass[..., 1])
    mass = weighted.sum(dim=(3, 4))[both]
    assert not torch.allclose(mass[..., 0], mass[..., 1])
    totals = weighted.sum(dim=(2, 3, 4))[both]
    torch.testing.assert_close(totals, torch.ones_like(totals))


def test_camera_order_invariance_with_per_camera_logits(model):
    rig = make_rig("surround6", (32, 64))
    order = [3, 5, 0, 1, 4, 2]
    imgs = _images(6, seed=4)
    try:
        _randomize_view_attn(model.lifter, 5)
        with torch.no_grad():
            a = model.encode(imgs, rig).tokens
            b = model.encode(imgs[:, order], rig.permuted(order)).tokens
    finally:
        _zero_view_attn(model.lifter)
    torch.testing.assert_close(a, b, rtol=1e-10, atol=1e-10)


# ── Lifting against a sampling oracle ──

def test_zero_offset_lift_matches_bilinear_oracle():
    torch.manual_seed(0)
    grid = BevGridSpec((-25.6, -25.6, -3.0, 25.6, 25.6, 3.0), 4, 4, 2)
    rig = CameraRig((make_rig("stereo2", (16, 32))[0],))
    cfg = EncoderConfig(bev_channels=4, num_offsets=1, num_heads=1, num_freqs=2)
    queries = SceneQueryGrid(grid, cfg).double()
    lifter = DeformableLifter(3, cfg, levels=1).double()
    with torch.no_grad():
        lifter.offset_proj.bias.zero_()
    feat = torch.randn(1, 1, 3, 16, 32, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    with torch.no_grad():
        tokens = lift_to_bev(FeaturePyramid([feat]), queries, rig, lifter).tokens.reshape(-1, 4).numpy()
        q = queries().numpy()
        value = lifter.value_proj(feat[0, 0].permute(1, 2, 0)).numpy()  # (H, W, C)
    w_out = lifter.out_proj.weight.detach().numpy()
    b_out = lifter.out_proj.bias.detach().numpy()

    uv, _, valid = project_points(grid.reference_points(), rig[0])
    seen = valid.any(axis=1)
    assert seen.any() and not seen.all()
    for cell in range(grid.num_cells):
        if not seen[cell]:
            np.testing.assert_allclose(tokens[cell], q[cell], rtol=0, atol=0)
            continue
        sampled = bilinear_sample(value, uv[cell][valid[cell]]).mean(axis=0)
        np.testing.assert_allclose(tokens[cell], q[cell] + w_out @ sampled + b_out, rtol=1e-9, atol=1e-9)


# ── Positional encoding ──

def test_positional_encoding_follows_grid_translation():
    torch.manual_seed(0)
    enc = BevPositionalEncoding(16, 4, 64.0).double()
    base = BevGridSpec((-25.6, -25.6, -3.0, 25.6, 25.6, 3.0), 8, 8, 4)
    moved = BevGridSpec((-19.2, -25.6, -3.0, 32.0, 25.6, 3.0), 8, 8, 4)
    with torch.no_grad():
        a, b = enc(base), enc(moved)
        # shifting by one cell in x lines the shared columns back up
        torch.testing.assert_close(a[1:], b[:-1])
    assert not torch.allclose(a, b)


def test_every_cell_gets_a_distinct_encoding():
    torch.manual_seed(0)
    grid = BevGridSpec((-25.6, -25.6, -3.0, 25.6, 25.6, 3.0), 16, 16, 4)
    with torch.no_grad():
        pe = BevPositionalEncoding(16, 4, 64.0).double()(grid).reshape(-1, 16)
    dist = torch.cdist(pe, pe) + torch.eye(256, dtype=torch.float64)
    assert pe.shape[0] == 256
    assert dist.min() > 1e-6


# ── Image encoder ──

def test_pyramid_level_sizes_follow_stride():
    torch.manual_seed(0)
    for name in ("tiny-conv", "tiny-patch"):
        enc = ImageEncoder(BackboneConfig(name=name, channels=64, levels=4, stride=4))
        with torch.no_grad():
            pyramid = enc(torch.rand(1, 2, 3, 64, 176))
        sizes = [tuple(f.shape) for f in pyramid.levels]
        assert sizes == [(1, 2, 64, 16, 44), (1, 2, 64, 8, 22), (1, 2, 64, 4, 11), (1, 2, 64, 2, 5)], name


def test_backbone_swap_keeps_downstream_shapes():
    cfg = load_config(TINY)
    rig = make_rig("stereo2", (32, 64))
    imgs = _images(2)
    outputs = []
    for name in ("tiny-conv", "tiny-patch"):
        torch.manual_seed(0)
        m = DriveTokenizer(merge_overrides(cfg, {"backbone": {"name": name}})).double().eval()
        with torch.no_grad():
            out = m(imgs, rig)
        outputs.append((out.scene.shape, out.rgb.shape, out.depth.shape, out.sem.shape, out.occ.logits.shape))
    assert outputs[0] == outputs[1]
    assert outputs[0][0] == (1, 8, 8, 16)


def test_identical_images_give_identical_features(model):
    one = _images(1, seed=9)
    with torch.no_grad():
        pyramid = model.image_encoder(one.repeat(1, 2, 1, 1, 1))
    for level in pyramid.levels:
        torch.testing.assert_close(level[:, 0], level[:, 1], rtol=0, atol=0)
