"""Test: individual loss terms, Lovász-Softmax and the weighted total."""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import pytest
import torch
import torch.nn.functional as F

from config_io.config import LossWeights
from config_io.schema import IGNORE_LABEL, RejectedInputError, ShapeMismatchError, Task
from objectives.losses import (
    LossTerm,
    RandomFeaturePerceptual,
    ce_lovasz,
    depth_loss,
    occ_loss,
    reg_loss,
    rgb_loss,
    sem_loss,
    total_loss,
)
from objectives.lovasz import lovasz_softmax

W = LossWeights()


# ── Lovász ──

def test_lovasz_is_zero_for_perfect_predictions():
    labels = torch.tensor([0, 1, 2, 1, 0])
    probs = F.one_hot(labels, 3).double()
    assert float(lovasz_softmax(probs, labels)) == pytest.approx(0.0)


def test_lovasz_equals_jaccard_loss_on_hard_predictions():
    labels = torch.tensor([0, 0, 1, 1])
    probs = F.one_hot(torch.tensor([0, 1, 1, 1]), 2).double()
    # class 0: IoU 1/2, class 1: IoU 2/3
    assert float(lovasz_softmax(probs, labels)) == pytest.approx((0.5 + 1.0 / 3.0) / 2.0)


def test_lovasz_skips_ignored_pixels():
    labels = torch.tensor([0, IGNORE_LABEL, 1])
    probs = torch.tensor([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert float(lovasz_softmax(probs, labels)) == pytest.approx(0.0)


# ── Terms ──

def test_rgb_loss_is_weighted_l1():
    pred = torch.zeros(1, 2, 3, 4, 4)
    target = torch.full_like(pred, 0.25)
    assert float(rgb_loss(pred, target, W).value) == pytest.approx(0.25)


def test_rgb_loss_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        rgb_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5), W)


def test_perceptual_term_vanishes_on_identical_images():
    perc = RandomFeaturePerceptual()
    x = torch.rand(2, 3, 16, 16)
    assert float(perc(x, x)) == 0.0
    assert float(perc(x, 1.0 - x)) > 0.0
    assert not any(p.requires_grad for p in perc.parameters())


def test_depth_loss_constant_offset():
    target = torch.full((1, 2, 4, 4), 5.0, dtype=torch.float64)
    valid = torch.ones_like(target, dtype=torch.bool)
    term = depth_loss(target + 1.0, target, valid, W)
    eps = W.charb_eps
    expected = math.sqrt(1.0 + eps * eps) + 2 * W.grad * eps
    assert float(term.value) == pytest.approx(expected)
    assert not term.empty


def test_depth_loss_ignores_invalid_pixels():
    target = torch.full((1, 4, 4), 5.0, dtype=torch.float64)
    pred = target.clone()
    pred[0, 0, 0] = 100.0
    valid = torch.ones_like(target, dtype=torch.bool)
    valid[0, 0, 0] = False
    eps = W.charb_eps
    assert float(depth_loss(pred, target, valid, W).value) == pytest.approx(eps + 2 * W.grad * eps)


def test_depth_loss_empty_mask_is_flagged():
    pred = torch.ones(1, 4, 4, requires_grad=True)
    term = depth_loss(pred, torch.ones(1, 4, 4), torch.zeros(1, 4, 4, dtype=torch.bool), W)
    assert term.empty
    assert float(term.value) == 0.0
    term.value.backward()
    assert torch.all(pred.grad == 0)


def test_sem_loss_matches_cross_entropy_on_labeled_pixels():
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(1, 2, 6, 4, 4, generator=g)
    labels = torch.randint(0, 6, (1, 2, 4, 4), generator=g)
    labels[0, 0, :2] = IGNORE_LABEL
    keep = labels != IGNORE_LABEL
    ref = F.cross_entropy(logits.movedim(2, -1)[keep], labels[keep])
    torch.testing.assert_close(sem_loss(logits, labels).value, ref)


def test_sem_loss_all_ignored():
    term = sem_loss(torch.zeros(1, 3, 2, 2), torch.full((1, 2, 2), IGNORE_LABEL))
    assert term.empty and float(term.value) == 0.0


def test_out_of_range_labels_are_rejected():
    with pytest.raises(RejectedInputError):
        sem_loss(torch.zeros(1, 3, 2, 2), torch.full((1, 2, 2), 7))


def test_occ_loss_perfect_logits_are_near_zero():
    labels = torch.randint(0, 6, (1, 4, 4, 2), generator=torch.Generator().manual_seed(0))
    logits = F.one_hot(labels, 6).permute(0, 4, 1, 2, 3).double() * 50.0
    assert float(occ_loss(logits, labels, W).value) < 1e-6


def test_ce_lovasz_adds_weighted_lovasz():
    logits = torch.zeros(1, 2, 2, 2, dtype=torch.float64)
    labels = torch.tensor([[[0, 1], [1, 1]]])
    no_lovasz = LossWeights(lovasz=0.0)
    ce = float(ce_lovasz(logits, labels, no_lovasz).value)
    assert ce == pytest.approx(math.log(2.0))
    assert float(ce_lovasz(logits, labels, W).value) > ce


def test_reg_loss_is_cross_entropy_on_token_labels():
    logits = torch.zeros(2, 6, 3, 3, dtype=torch.float64)
    labels = torch.randint(0, 6, (2, 3, 3), generator=torch.Generator().manual_seed(1))
    value = float(reg_loss(logits, labels, LossWeights(lovasz=0.0)).value)
    assert value == pytest.approx(math.log(6.0))


# ── Total ──

def test_total_with_default_weights_and_unit_terms():
    terms = {t: LossTerm(torch.tensor(1.0)) for t in Task}
    report = total_loss(terms, W, step=3)
    assert float(report.total) == pytest.approx(18.3)
    assert report.weighted["recon"] == pytest.approx(10.0)
    assert report.weighted["occ"] == pytest.approx(5.0)
    assert report.to_dict()["step"] == 3


def test_total_skips_missing_tasks():
    report = total_loss({Task.DEPTH: LossTerm(torch.tensor(2.0), empty=True)}, W)
    assert float(report.total) == pytest.approx(0.4)
    assert report.flags == {"depth_empty": True}
    assert set(report.terms) == {"depth"}


# ── Oracles ──

def _gen(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def _charb(x: float) -> float:
    return math.sqrt(x * x + W.charb_eps ** 2)


def _jaccard_loss(fg: set[int], mispredicted: set[int]) -> float:
    union = fg | mispredicted
    return 1.0 - len(fg - mispredicted) / len(union) if union else 0.0


def _lovasz_reference(probs: list[list[float]], labels: list[int]) -> float:
    """Piecewise-linear extension of the Jaccard loss, built from prefix sets of sorted errors."""
    losses = []
    for c in sorted(set(labels)):
        fg = {i for i, y in enumerate(labels) if y == c}
        errors = [abs((1.0 if i in fg else 0.0) - p[c]) for i, p in enumerate(probs)]
        order = sorted(range(len(errors)), key=lambda i: -errors[i])
        total, prefix, prev = 0.0, set(), 0.0
        for i in order:
            prefix.add(i)
            cur = _jaccard_loss(fg, prefix)
            total += errors[i] * (cur - prev)
            prev = cur
        losses.append(total)
    return sum(losses) / len(losses)


def test_rgb_loss_matches_pixel_loop():
    pred = torch.rand(3, 8, 8, generator=_gen(0), dtype=torch.float64)
    target = torch.rand(3, 8, 8, generator=_gen(1), dtype=torch.float64)
    weights = LossWeights(pix=2.5)
    acc = 0.0
    for c in range(3):
        for y in range(8):
            for x in range(8):
                acc += abs(float(pred[c, y, x]) - float(target[c, y, x]))
    assert float(rgb_loss(pred, target, weights).value) == pytest.approx(2.5 * acc / 192, rel=1e-12)


def test_depth_loss_matches_pixel_loop():
    target = torch.rand(8, 8, generator=_gen(2), dtype=torch.float64) * 20 + 1
    pred = target + torch.randn(8, 8, generator=_gen(3), dtype=torch.float64)
    valid = torch.rand(8, 8, generator=_gen(4)) > 0.3
    r = (pred - target).tolist()
    v = valid.tolist()
    data = [_charb(r[y][x]) for y in range(8) for x in range(8) if v[y][x]]
    expected = sum(data) / len(data)
    dx = [_charb(r[y][x + 1] - r[y][x]) for y in range(8) for x in range(7) if v[y][x] and v[y][x + 1]]
    dy = [_charb(r[y + 1][x] - r[y][x]) for y in range(7) for x in range(8) if v[y][x] and v[y + 1][x]]
    expected += W.grad * (sum(dx) / len(dx) + sum(dy) / len(dy))
    assert float(depth_loss(pred, target, valid, W).value) == pytest.approx(expected, rel=1e-12)


def test_sem_loss_matches_manual_softmax():
    logits = torch.randn(4, 8, 8, generator=_gen(5), dtype=torch.float64) * 3
    labels = torch.randint(0, 4, (8, 8), generator=_gen(6))
    labels[2:4, 5] = IGNORE_LABEL
    lg = logits.tolist()
    nll = []
    for y in range(8):
        for x in range(8):
            c = int(labels[y, x])
            if c == IGNORE_LABEL:
                continue
            z = [lg[k][y][x] for k in range(4)]
            m = max(z)
            log_norm = m + math.log(sum(math.exp(v - m) for v in z))
            nll.append(log_norm - z[c])
    assert float(sem_loss(logits, labels).value) == pytest.approx(sum(nll) / len(nll), rel=1e-12)


def test_single_pixel_lovasz_is_one_minus_probability():
    for p in (0.1, 0.55, 0.9):
        probs = torch.tensor([[1.0 - p, p]], dtype=torch.float64)
        assert float(lovasz_softmax(probs, torch.tensor([1]))) == pytest.approx(1.0 - p)


def test_lovasz_matches_prefix_set_reference():
    logits = torch.randn(6, 3, generator=_gen(7), dtype=torch.float64) * 2
    probs = logits.softmax(-1)
    labels = torch.tensor([0, 2, 1, 0, 2, 2])
    expected = _lovasz_reference(probs.tolist(), labels.tolist())
    assert float(lovasz_softmax(probs, labels)) == pytest.approx(expected, rel=1e-12)


def test_class_losses_ignore_a_per_pixel_logit_shift():
    logits = torch.randn(1, 4, 6, 5, generator=_gen(8), dtype=torch.float64)
    shift = torch.randn(1, 1, 6, 5, generator=_gen(9), dtype=torch.float64) * 10
    labels = torch.randint(0, 4, (1, 6, 5), generator=_gen(10))
    torch.testing.assert_close(sem_loss(logits + shift, labels).value, sem_loss(logits, labels).value)
    torch.testing.assert_close(ce_lovasz(logits + shift, labels, W).value, ce_lovasz(logits, labels, W).value)


def test_occ_loss_is_cross_entropy_plus_weighted_lovasz():
    logits = torch.randn(1, 6, 4, 4, 2, generator=_gen(11), dtype=torch.float64)
    labels = torch.randint(0, 6, (1, 4, 4, 2), generator=_gen(12))
    flat = logits.movedim(1, -1).reshape(-1, 6)
    flat_labels = labels.reshape(-1)
    log_probs = flat - flat.logsumexp(dim=-1, keepdim=True)
    hand_ce = -log_probs[torch.arange(flat.shape[0]), flat_labels].mean()
    hand_lovasz = _lovasz_reference(log_probs.exp().tolist(), flat_labels.tolist())

    ce_only = ce_lovasz(logits, labels, LossWeights(lovasz=0.0)).value
    assert float(ce_only) == pytest.approx(float(hand_ce), rel=1e-12)
    full = float(occ_loss(logits, labels, W).value)
    assert W.lovasz == pytest.approx(0.2)
    assert full - float(ce_only) == pytest.approx(0.2 * hand_lovasz, rel=1e-9)


def test_total_matches_hand_weighted_sum():
    g = _gen(13)
    values = {t: float(torch.rand((), generator=g)) * 5 for t in Task}
    weights = LossWeights(rgb=1.5, depth=0.7, sem=0.3, occ=2.0, reg=4.0)
    lam = {Task.RECON: 1.5, Task.DEPTH: 0.7, Task.SEM: 0.3, Task.OCC: 2.0, Task.REG: 4.0}
    report = total_loss({t: LossTerm(torch.tensor(v, dtype=torch.float64)) for t, v in values.items()}, weights)
    assert float(report.total) == pytest.approx(sum(lam[t] * values[t] for t in Task), rel=1e-12)
    for t in Task:
        assert report.weighted[t.value] == pytest.approx(lam[t] * values[t])


# ── Empty supervision ──

def test_empty_semantic_supervision_warns(caplog):
    with caplog.at_level("WARNING", logger="objectives.losses"):
        sem_loss(torch.zeros(1, 3, 2, 2), torch.full((1, 2, 2), IGNORE_LABEL))
    assert any(r.levelname == "WARNING" for r in caplog.records)


def test_empty_label_supervision_warns(caplog):
    labels = torch.full((1, 2, 2, 2), IGNORE_LABEL)
    with caplog.at_level("WARNING", logger="objectives.losses"):
        term = occ_loss(torch.zeros(1, 6, 2, 2, 2), labels, W)
    assert term.empty and float(term.value) == 0.0
    assert any(r.levelname == "WARNING" for r in caplog.records)


def test_total_without_terms_still_backpropagates():
    report = total_loss({}, W)
    assert float(report.total) == 0.0
    report.total.backward()
