import numpy as np
import pytest

from l2g.errors import NumericError, ShapeError
from l2g.losses import (attention_transfer_loss, binarize, classification_loss,
                        global_softmax, shape_transfer_loss, total_loss)
from l2g.rng import stream
from l2g.tensor import Tensor, backward, channel_softmax
from l2g.views import Rect


def _logits(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


# -- classification -----------------------------------------------------------------


def test_zero_logits_give_ln2():
    loss = classification_loss(_logits([[0.0, 0.0]]), np.array([1, 0]))
    assert loss.item() == pytest.approx(np.log(2.0), abs=1e-12)
    # any labels: cross-entropy at p=0.5 is ln 2 regardless
    loss2 = classification_loss(_logits([[0.0, 0.0]]), np.array([0, 0]))
    assert loss2.item() == pytest.approx(np.log(2.0), abs=1e-12)


def test_single_view_matches_direct_formula():
    # independent oracle: the plain per-class sigmoid cross entropy sum
    rng = stream(1, "cls")
    logits = rng.uniform_array(4, -3, 3).reshape(1, 4)
    y = np.array([1, 0, 0, 1])
    q = 1.0 / (1.0 + np.exp(-logits[0]))
    expect = -np.mean(y * np.log(q) + (1 - y) * np.log(1 - q))
    loss = classification_loss(_logits(logits), y)
    assert loss.item() == pytest.approx(expect, rel=1e-12)


def test_confident_correct_logits_vanish():
    y = np.array([1, 0, 1])
    logits = np.array([[20.0, -20.0, 20.0]])
    loss = classification_loss(_logits(logits), y)
    assert loss.item() < 1e-8


def test_multi_view_is_mean_over_views():
    y = np.array([1, 0])
    a = classification_loss(_logits([[1.0, -1.0]]), y).item()
    b = classification_loss(_logits([[0.5, 0.2]]), y).item()
    both = classification_loss(_logits([[1.0, -1.0], [0.5, 0.2]]), y).item()
    assert both == pytest.approx((a + b) / 2.0, rel=1e-12)


def test_view_permutation_invariant():
    y = np.array([1, 0])
    rows = [[1.0, -1.0], [0.5, 0.2], [-0.3, 0.9]]
    a = classification_loss(_logits(rows), y).item()
    b = classification_loss(_logits(rows[::-1]), y).item()
    assert a == pytest.approx(b, rel=1e-14)


def test_classification_shape_mismatch():
    with pytest.raises(ShapeError):
        classification_loss(_logits([[0.0, 0.0]]), np.array([1, 0, 1]))


# -- global softmax --------------------------------------------------------------------


def test_global_softmax_equal_logits():
    out = global_softmax(Tensor(np.zeros((3, 4, 4))), 8)
    assert np.allclose(out.data, 1.0 / 3.0)


def test_global_softmax_hand_two_channel():
    feats = np.zeros((2, 1, 1))
    feats[1, 0, 0] = np.log(3.0)
    out = global_softmax(Tensor(feats), 1)
    assert out.data[0, 0, 0] == pytest.approx(0.25, abs=1e-12)
    assert out.data[1, 0, 0] == pytest.approx(0.75, abs=1e-12)


def test_global_softmax_sums_survive_upsampling():
    rng = stream(2, "gs")
    feats = rng.uniform_array(6 * 5 * 5, -3, 3).reshape(6, 5, 5)
    out = global_softmax(Tensor(feats), 32)
    sums = out.data.sum(axis=0)
    assert np.all(np.abs(sums - 1.0) < 1e-9)


def test_global_softmax_wrong_channels():
    with pytest.raises(ShapeError):
        global_softmax(Tensor(np.zeros((4, 3, 3))), 8, channels=6)


# -- attention transfer ------------------------------------------------------------------


def _probs_from(feats, g):
    return global_softmax(Tensor(feats, requires_grad=True), g)


def test_transfer_zero_when_targets_match():
    # build probabilities first, then use their own crops as targets
    rng = stream(3, "tz")
    feats = rng.uniform_array(3 * 4 * 4, -1, 1).reshape(3, 4, 4)
    probs = global_softmax(Tensor(feats), 8)
    rects = [Rect(0, 0, 4, 4), Rect(2, 3, 4, 4)]
    targets = [probs.data[:2, r.y0:r.y0 + 4, r.x0:r.x0 + 4].copy() for r in rects]
    loss, per_view = attention_transfer_loss(targets, probs, rects)
    assert loss.item() == 0.0
    assert per_view == [0.0, 0.0]


def test_transfer_hand_single_pixel():
    # one view, 1x1 grid, one foreground class: (1 - 0.25)^2 = 0.5625
    feats = np.zeros((2, 1, 1))
    feats[1, 0, 0] = np.log(3.0)   # softmax -> (0.25, 0.75)
    probs = global_softmax(Tensor(feats), 1)
    loss, _ = attention_transfer_loss([np.ones((1, 1, 1))], probs,
                                      [Rect(0, 0, 1, 1)])
    assert loss.item() == pytest.approx(0.5625, abs=1e-12)


def test_transfer_duplicate_view_unchanged():
    rng = stream(4, "td")
    feats = rng.uniform_array(3 * 4 * 4, -1, 1).reshape(3, 4, 4)
    probs = global_softmax(Tensor(feats), 8)
    target = np.clip(rng.uniform_array(2 * 5 * 5, 0, 1).reshape(2, 5, 5), 0, 1)
    rect = Rect(1, 1, 5, 5)
    single, _ = attention_transfer_loss([target], probs, [rect])
    double, _ = attention_transfer_loss([target, target], probs, [rect, rect])
    assert single.item() == pytest.approx(double.item(), rel=1e-14)


def test_transfer_nonnegative():
    rng = stream(5, "tn")
    feats = rng.uniform_array(3 * 4 * 4, -1, 1).reshape(3, 4, 4)
    probs = global_softmax(Tensor(feats), 8)
    target = rng.uniform_array(2 * 4 * 4, 0, 1).reshape(2, 4, 4)
    loss, _ = attention_transfer_loss([target], probs, [Rect(0, 0, 4, 4)])
    assert loss.item() >= 0.0


def test_transfer_grid_mismatch():
    probs = global_softmax(Tensor(np.zeros((3, 4, 4))), 8)
    with pytest.raises(ShapeError):
        attention_transfer_loss([np.zeros((2, 3, 3))], probs, [Rect(0, 0, 4, 4)])


def test_transfer_gradient_reaches_global_only():
    feats = Tensor(stream(6, "tg").uniform_array(3 * 4 * 4, -1, 1).reshape(3, 4, 4),
                   requires_grad=True)
    probs = global_softmax(feats, 8)
    target = np.full((2, 4, 4), 0.5)
    loss, _ = attention_transfer_loss([target], probs, [Rect(0, 0, 4, 4)])
    backward(loss)
    assert feats.grad is not None and np.any(feats.grad != 0.0)


# -- shape transfer ---------------------------------------------------------------------


def test_shape_all_ones_saliency_binary_attention_reduces_to_plain():
    rng = stream(7, "s1")
    feats = rng.uniform_array(3 * 4 * 4, -1, 1).reshape(3, 4, 4)
    probs = global_softmax(Tensor(feats), 8)
    target = (rng.uniform_array(2 * 4 * 4, 0, 1).reshape(2, 4, 4) > 0.5).astype(float)
    rect = Rect(2, 2, 4, 4)
    sal = np.ones((8, 8))
    st_loss, _, fb = shape_transfer_loss([target], sal, probs, [rect], tau=0.1)
    at_loss, _ = attention_transfer_loss([target], probs, [rect])
    assert fb == 0
    assert st_loss.item() == at_loss.item()


def test_shape_empty_saliency_bit_exact_fallback():
    rng = stream(8, "s0")
    feats = rng.uniform_array(3 * 4 * 4, -1, 1).reshape(3, 4, 4)
    probs = global_softmax(Tensor(feats), 8)
    targets = [rng.uniform_array(2 * 4 * 4, 0, 1).reshape(2, 4, 4)
               for _ in range(3)]
    rects = [Rect(0, 0, 4, 4), Rect(1, 2, 4, 4), Rect(4, 4, 4, 4)]
    sal = np.zeros((8, 8))
    st_loss, st_views, fb = shape_transfer_loss(targets, sal, probs, rects, 0.1)
    at_loss, at_views = attention_transfer_loss(targets, probs, rects)
    assert fb == 3
    assert st_loss.item() == at_loss.item()          # bit-exact
    assert st_views == at_views


def test_shape_hand_single_pixel():
    # A=0.4 >= tau=0.1 -> B=1; S=0.6; G=0.2 -> (0.6 - 0.2)^2 = 0.16
    feats = np.zeros((2, 1, 1))
    feats[1, 0, 0] = np.log(4.0)   # softmax -> (0.2, 0.8)
    probs = global_softmax(Tensor(feats), 1)
    sal = np.array([[0.6]])
    loss, _, fb = shape_transfer_loss([np.full((1, 1, 1), 0.4)], sal, probs,
                                      [Rect(0, 0, 1, 1)], tau=0.1)
    assert fb == 0
    assert loss.item() == pytest.approx(0.16, abs=1e-12)


def test_shape_cardinality_uses_half_threshold():
    # saliency present but all below 0.5 -> cardinality 0 -> fallback
    rng = stream(9, "sc")
    feats = rng.uniform_array(3 * 4 * 4, -1, 1).reshape(3, 4, 4)
    probs = global_softmax(Tensor(feats), 8)
    target = rng.uniform_array(2 * 4 * 4, 0, 1).reshape(2, 4, 4)
    sal = np.full((8, 8), 0.4)
    _, _, fb = shape_transfer_loss([target], sal, probs, [Rect(0, 0, 4, 4)], 0.1)
    assert fb == 1


def test_binarize_thresholds_inclusive():
    maps = np.array([[0.05, 0.1], [0.3, 0.0]])
    assert np.array_equal(binarize(maps, 0.1),
                          np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        binarize(maps, 1.5)


# -- total ------------------------------------------------------------------------------


def test_total_lambda_zero_is_cls():
    l_cls = Tensor(np.asarray(0.7))
    l_kt = Tensor(np.asarray(123.0))
    assert total_loss(l_cls, l_kt, 0.0).item() == 0.7


def test_total_hand_arithmetic():
    out = total_loss(Tensor(np.asarray(0.5)), Tensor(np.asarray(0.02)), 10.0)
    assert out.item() == pytest.approx(0.7, abs=1e-15)


def test_total_nan_names_term():
    ok = Tensor(np.asarray(1.0))
    bad = Tensor.__new__(Tensor)
    bad.data = np.asarray(np.nan)
    bad.requires_grad = False
    bad.grad = None
    bad._parents = ()
    bad._backward = None
    bad._op = None
    with pytest.raises(NumericError, match="L_kt"):
        total_loss(ok, bad, 1.0)
