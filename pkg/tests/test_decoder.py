"""Test: token layout, visibility bias and masked attention in the multi-view decoder."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import numpy as np
import pytest
import torch

from config_io.config import DecoderConfig
from config_io.schema import ConfigurationError, MaskMode, ShapeMismatchError
from geometry.cameras import make_rig
from model.decoder import (
    LARGE,
    AttentionBias,
    Block,
    MaskedSelfAttention,
    MultiViewDecoder,
    TokenLayout,
    build_attention_bias,
    build_view_tokens,
    decode,
    patchify_bev,
    view_plucker,
)

BEV = (8, 8)
IMAGE = (32, 64)


def _make_decoder(**kw) -> MultiViewDecoder:
    cfg = DecoderConfig(depth=2, dim=32, num_heads=2, bev_patch=2, view_patch=8, plucker_hidden=16, **kw)
    torch.manual_seed(0)
    return MultiViewDecoder(cfg, 16, BEV, IMAGE).double().eval()


def _inputs(seed: int = 0):
    g = torch.Generator().manual_seed(seed)
    scene = torch.randn(1, 8, 8, 16, generator=g, dtype=torch.float64)
    plucker = torch.as_tensor(view_plucker(make_rig("stereo2", IMAGE), 8))
    return scene, plucker


def _checkerboard_mask() -> np.ndarray:
    mask = np.ones((2, 16), dtype=bool)
    mask[0, ::2] = False
    mask[1, 5] = False
    return mask


def test_layout_slices():
    layout = TokenLayout(num_scene=16, num_cameras=2, patches_per_camera=32)
    assert layout.scene_slice == slice(1, 17)
    assert layout.view_slice == slice(17, 81)
    assert layout.total == 81


def test_bias_blocks_only_scene_view_pairs():
    layout = TokenLayout(num_scene=4, num_cameras=2, patches_per_camera=3)
    mask = np.array([[True, False, True, True], [True, True, True, False]])
    bias = build_attention_bias(mask, layout).bias
    assert bias.shape == (11, 11)
    torch.testing.assert_close(bias, bias.t())
    assert torch.all(bias[0] == 0) and torch.all(bias[:, 0] == 0)
    assert torch.all(bias[1:5, 1:5] == 0)
    assert torch.all(bias[5:, 5:] == 0)
    # scene token 1 is hidden from camera 0 (view tokens 5..7)
    assert torch.all(bias[2, 5:8] == -LARGE)
    assert torch.all(bias[2, 8:11] == 0)
    assert torch.all(bias[4, 8:11] == -LARGE)
    assert int((bias != 0).sum()) == 2 * 2 * 3


def test_bias_shape_must_match_layout():
    with pytest.raises(ShapeMismatchError):
        build_attention_bias(np.ones((3, 4), dtype=bool), TokenLayout(4, 2, 3))


def test_masked_pairs_get_no_attention():
    dec = _make_decoder()
    scene, plucker = _inputs()
    mask = _checkerboard_mask()
    with torch.no_grad():
        out = dec(scene, plucker, mask, return_attn=True)
    layout = TokenLayout(num_scene=16, num_cameras=2, patches_per_camera=32)
    blocked = build_attention_bias(mask, layout).bias != 0
    assert len(out.attentions) == 2
    for attn in out.attentions:
        assert attn[:, :, blocked].max() < 1e-6
        torch.testing.assert_close(attn.sum(-1), torch.ones_like(attn.sum(-1)))


def test_all_visible_mask_equals_unmasked():
    masked = _make_decoder()
    plain = _make_decoder(use_visibility_mask=False)
    scene, plucker = _inputs()
    with torch.no_grad():
        a = masked(scene, plucker, np.ones((2, 16), dtype=bool))
        b = plain(scene, plucker, np.ones((2, 16), dtype=bool))
    torch.testing.assert_close(a.scene, b.scene, rtol=0, atol=0)
    torch.testing.assert_close(a.view, b.view, rtol=0, atol=0)


def test_disabled_mask_ignores_visibility():
    plain = _make_decoder(use_visibility_mask=False)
    scene, plucker = _inputs()
    with torch.no_grad():
        a = plain(scene, plucker, _checkerboard_mask())
        b = plain(scene, plucker, np.ones((2, 16), dtype=bool))
    torch.testing.assert_close(a.scene, b.scene, rtol=0, atol=0)


def test_multiplicative_gate_zeroes_masked_logits():
    layout = TokenLayout(num_scene=4, num_cameras=2, patches_per_camera=3)
    mask = np.array([[True, False, True, True], [True, True, True, False]])
    bias = build_attention_bias(mask, layout, MaskMode.MULTIPLICATIVE)
    gate = bias.gate()
    assert torch.all(gate[bias.bias != 0] == 0)
    assert torch.all(gate[bias.bias == 0] == 1)


def test_output_shapes():
    dec = _make_decoder()
    scene, plucker = _inputs()
    with torch.no_grad():
        out = dec(scene, plucker, _checkerboard_mask())
    assert out.scene.shape == (1, 4, 4, 32)
    assert out.view.shape == (1, 2, 4, 8, 32)
    assert out.cls.shape == (1, 32)


def test_other_resolution_resamples_positional_grid():
    dec = _make_decoder()
    scene, _ = _inputs()
    plucker = torch.as_tensor(view_plucker(make_rig("stereo2", (64, 128)), 8))
    with torch.no_grad():
        out = dec(scene, plucker, _checkerboard_mask())
    assert out.view.shape == (1, 2, 8, 16, 32)


def test_too_many_cameras():
    dec = _make_decoder(max_cameras=1)
    scene, plucker = _inputs()
    with pytest.raises(ConfigurationError):
        dec(scene, plucker, None)


def test_patchify_groups_neighbouring_cells():
    tokens = torch.arange(4 * 4, dtype=torch.float64).reshape(1, 4, 4, 1)
    out = patchify_bev(tokens, 2, torch.nn.Identity())
    torch.testing.assert_close(out[0, 0], torch.tensor([0.0, 1.0, 4.0, 5.0], dtype=torch.float64))
    torch.testing.assert_close(out[0, 3], torch.tensor([10.0, 11.0, 14.0, 15.0], dtype=torch.float64))


def test_masked_view_tokens_get_no_gradient():
    layout = TokenLayout(num_scene=4, num_cameras=2, patches_per_camera=3)
    mask = np.array([[True, False, True, True], [True, True, True, False]])
    bias = build_attention_bias(mask, layout, dtype=torch.float64)
    torch.manual_seed(0)
    block = Block(8, 2, 2.0).double()
    x = torch.randn(1, layout.total, 8, dtype=torch.float64, requires_grad=True)
    out, _ = block(x, bias)
    out[0, 2].sum().backward()  # scene token 1, hidden from camera 0
    assert x.grad[0, 5:8].abs().max() <= 1e-6
    assert x.grad[0, 8:11].abs().max() > 0


# ── Attention against a hand computation ──

def test_attention_matches_hand_softmax():
    torch.manual_seed(0)
    dim, heads, length = 8, 2, 6
    attn = MaskedSelfAttention(dim, heads).double()
    g = torch.Generator().manual_seed(3)
    x = torch.randn(1, length, dim, generator=g, dtype=torch.float64)
    mask = torch.rand(length, length, generator=g) > 0.3
    mask |= torch.eye(length, dtype=torch.bool)
    bias = (~mask).to(torch.float64) * -LARGE
    with torch.no_grad():
        out, weights = attn(x, AttentionBias(bias))
        w, b = attn.qkv.weight, attn.qkv.bias
        d = dim // heads
        heads_out = []
        for h in range(heads):
            rows = [slice(part * dim + h * d, part * dim + (h + 1) * d) for part in range(3)]
            q, k, v = (x[0] @ w[r].t() + b[r] for r in rows)
            logits = q @ k.t() / d ** 0.5 + bias
            e = torch.exp(logits - logits.max(dim=-1, keepdim=True).values)
            p = e / e.sum(dim=-1, keepdim=True)
            torch.testing.assert_close(weights[0, h], p)
            heads_out.append(p @ v)
        expected = torch.cat(heads_out, dim=-1) @ attn.proj.weight.t() + attn.proj.bias
    torch.testing.assert_close(out[0], expected)


# ── View tokens ──

def test_view_tokens_depend_on_extrinsics():
    dec = _make_decoder()
    rig = make_rig("stereo2", IMAGE)
    moved = make_rig("stereo2", IMAGE, mount_z=0.4)
    with torch.no_grad():
        a = build_view_tokens(rig, dec.view_builder)
        b = build_view_tokens(moved, dec.view_builder)
    assert a.shape == (2, 4, 8, 32)
    assert not torch.allclose(a, b)


def test_view_tokens_without_ray_term_are_sum_of_embeddings():
    dec = _make_decoder()
    builder = dec.view_builder
    g = torch.Generator().manual_seed(4)
    with torch.no_grad():
        builder.mask_token.normal_(generator=g)
        builder.plucker_proj.weight.zero_()
        builder.plucker_proj.bias.zero_()
        tokens = build_view_tokens(make_rig("stereo2", IMAGE), builder)
        for i in range(2):
            expected = builder.mask_token + builder.pos_grid + builder.camera_embed.weight[i]
            torch.testing.assert_close(tokens[i], expected, rtol=0, atol=0)


# ── Bias against a loop ──

def test_bias_matches_loop_over_token_pairs():
    layout = TokenLayout(num_scene=5, num_cameras=3, patches_per_camera=2)
    mask = np.random.default_rng(0).random((3, 5)) > 0.4
    bias = build_attention_bias(mask, layout, dtype=torch.float64).bias

    def role(i: int) -> tuple[str, int]:
        if i == 0:
            return "cls", -1
        if i < 1 + layout.num_scene:
            return "scene", i - 1
        return "view", (i - 1 - layout.num_scene) // layout.patches_per_camera

    for i in range(layout.total):
        for j in range(layout.total):
            ri, ci = role(i)
            rj, cj = role(j)
            blocked = False
            if ri == "scene" and rj == "view":
                blocked = not mask[cj, ci]
            elif ri == "view" and rj == "scene":
                blocked = not mask[ci, cj]
            assert float(bias[i, j]) == (-LARGE if blocked else 0.0), (i, j)


# ── Camera permutation ──

def test_decode_is_equivariant_to_camera_order():
    torch.manual_seed(0)
    blocks = torch.nn.ModuleList(Block(8, 2, 2.0) for _ in range(2)).double()
    layout = TokenLayout(num_scene=4, num_cameras=3, patches_per_camera=2)
    mask = np.array([[True, False, True, True], [False, True, True, False], [True, True, False, True]])
    g = torch.Generator().manual_seed(5)
    x = torch.randn(1, layout.total, 8, generator=g, dtype=torch.float64)
    order = [2, 0, 1]
    head = x[:, : layout.view_slice.start]
    views = x[:, layout.view_slice].reshape(1, 3, 2, 8)
    x_perm = torch.cat([head, views[:, order].reshape(1, 6, 8)], dim=1)
    with torch.no_grad():
        out, _ = decode(x, build_attention_bias(mask, layout, dtype=torch.float64), blocks)
        out_perm, _ = decode(x_perm, build_attention_bias(mask[order], layout, dtype=torch.float64), blocks)
    torch.testing.assert_close(out_perm[:, : layout.view_slice.start], out[:, : layout.view_slice.start])
    expected_views = out[:, layout.view_slice].reshape(1, 3, 2, 8)[:, order]
    torch.testing.assert_close(out_perm[:, layout.view_slice].reshape(1, 3, 2, 8), expected_views)
