import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2g.attention import (AttentionMaps, aggregate_windows, cam,
                           local_attention_targets, multi_scale_attention,
                           normalize_and_gate)
from l2g.errors import GeometryError, ShapeError
from l2g.model import NetworkConfig, build_network, forward_features
from l2g.rng import stream
from l2g.tensor import Tensor, resize_bilinear_np
from l2g.views import Rect


def test_cam_hand_example():
    feats = np.array([[[-1.0, 2.0, 4.0]]]).reshape(1, 1, 3)
    out = cam(feats, np.array([1]))
    assert np.allclose(out.maps, [[[0.0, 0.5, 1.0]]])


def test_cam_absent_class_zeroed():
    feats = np.full((2, 3, 3), 5.0)
    out = cam(feats, np.array([0, 1]))
    assert np.array_equal(out.maps[0], np.zeros((3, 3)))
    assert np.allclose(out.maps[1], 1.0)


def test_cam_all_negative_channel_is_zero():
    feats = -np.ones((1, 4, 4))
    out = cam(feats, np.array([1]))
    assert np.array_equal(out.maps, np.zeros((1, 4, 4)))


def test_cam_present_nonzero_peaks_at_one():
    rng = stream(3, "cm")
    feats = rng.uniform_array(3 * 5 * 5, -1, 2).reshape(3, 5, 5)
    out = cam(feats, np.array([1, 1, 1]))
    for c in range(3):
        m = out.maps[c]
        if m.any():
            assert abs(m.max() - 1.0) < 1e-12
        assert m.min() >= 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e3))
def test_cam_scale_invariant(alpha):
    rng = stream(11, "scale")
    feats = rng.uniform_array(2 * 4 * 4, -1, 1).reshape(2, 4, 4)
    y = np.array([1, 1])
    a = cam(feats, y).maps
    b = cam(alpha * feats, y).maps
    assert np.allclose(a, b, atol=1e-12)


def test_local_targets_shape_and_range():
    rng = stream(5, "lt")
    feats = rng.uniform_array(4 * 3 * 12 * 12, -1, 1).reshape(4, 3, 12, 12)
    y = np.array([1, 0, 1])
    t = local_attention_targets(feats, y, 48)
    assert t.shape == (4, 3, 48, 48)
    assert np.array_equal(t[:, 1], np.zeros((4, 48, 48)))
    assert t.min() >= 0.0 and t.max() <= 1.0


# -- multi-scale fusion -------------------------------------------------------------


def _tiny_net(head=3):
    return build_network(NetworkConfig(widths=(4, 4), strides=(1, 2)), head,
                         stream(21, "msnet"))


def _image(size=16, key="msimg"):
    return stream(9, key).uniform_array(3 * size * size, 0, 1).reshape(3, size, size)


def test_multi_scale_singleton_equals_plain_cam():
    net = _tiny_net()
    img = _image()
    y = np.array([1, 1, 0])
    fused = multi_scale_attention(net, img, [1.0], flip=False, labels=y)
    feats = forward_features(net, Tensor(img[None])).data[0]
    up = resize_bilinear_np(np.maximum(feats, 0.0), 16, 16)
    expect = cam(up, y)
    assert np.array_equal(fused.maps, expect.maps)


def test_multi_scale_flip_symmetric_input():
    net = _tiny_net()
    img = _image()
    img = (img + img[..., ::-1]) / 2.0  # left-right symmetric
    y = np.array([1, 1, 1])
    fused = multi_scale_attention(net, img, [0.5, 1.0], flip=True, labels=y)
    assert np.allclose(fused.maps, fused.maps[..., ::-1], atol=1e-10)


def test_multi_scale_two_term_hand_fusion():
    # independent oracle: run the two scaled forwards by hand, mean the
    # upsampled relu maps, then renormalize
    net = _tiny_net()
    img = _image()
    y = np.array([1, 0, 1])
    fused = multi_scale_attention(net, img, [0.5, 1.0], flip=False, labels=y)

    acc = np.zeros((3, 16, 16))
    for s in (0.5, 1.0):
        size = max(2, int(round(16 * s / 2)) * 2)
        scaled = img if size == 16 else resize_bilinear_np(img, size, size)
        feats = forward_features(net, Tensor(scaled[None])).data[0]
        acc += resize_bilinear_np(np.maximum(feats, 0.0), 16, 16)
    expect = normalize_and_gate(acc / 2.0, y)
    assert np.allclose(fused.maps, expect, atol=1e-12)


def test_multi_scale_empty_scales_rejected():
    with pytest.raises(ValueError):
        multi_scale_attention(_tiny_net(), _image(), [], flip=False,
                              labels=np.array([1, 1, 1]))


# -- window aggregation ---------------------------------------------------------------


def _att(maps, y=None):
    maps = np.asarray(maps, dtype=np.float64)
    y = np.ones(maps.shape[0], dtype=np.uint8) if y is None else y
    return AttentionMaps(maps=maps, labels=y)


def test_aggregate_single_full_window():
    maps = stream(2, "agg").uniform_array(2 * 8 * 8, 0, 1).reshape(2, 8, 8)
    out = aggregate_windows([_att(maps)], [Rect(0, 0, 8, 8)], 8)
    assert np.allclose(out.maps, normalize_and_gate(maps, np.array([1, 1])))


def test_aggregate_disjoint_windows_tile():
    left = np.full((1, 4, 2), 0.4)
    right = np.full((1, 4, 2), 0.8)
    out = aggregate_windows([_att(left), _att(right)],
                            [Rect(0, 0, 2, 4), Rect(2, 0, 2, 4)], 4)
    # renormalized by the global max 0.8
    assert np.allclose(out.maps[0, :, :2], 0.5)
    assert np.allclose(out.maps[0, :, 2:], 1.0)


def test_aggregate_overlap_takes_max():
    a = np.full((1, 2, 2), 0.3)
    b = np.full((1, 2, 2), 0.8)
    out = aggregate_windows([_att(a), _att(b)],
                            [Rect(0, 0, 2, 2), Rect(1, 0, 2, 2)], 4)
    # overlap column x=1 holds max(0.3, 0.8) = 0.8, the global max
    assert out.maps[0, 0, 1] == pytest.approx(1.0)
    assert out.maps[0, 0, 0] == pytest.approx(0.3 / 0.8)


def test_aggregate_uncovered_pixels_zero():
    out = aggregate_windows([_att(np.ones((1, 2, 2)))], [Rect(0, 0, 2, 2)], 4)
    assert out.maps[0, 3, 3] == 0.0


def test_aggregate_permutation_invariant():
    rng = stream(8, "perm")
    maps = [rng.uniform_array(2 * 3 * 3, 0, 1).reshape(2, 3, 3) for _ in range(3)]
    rects = [Rect(0, 0, 3, 3), Rect(2, 1, 3, 3), Rect(4, 4, 3, 3)]
    a = aggregate_windows([_att(m) for m in maps], rects, 8)
    order = [2, 0, 1]
    b = aggregate_windows([_att(maps[i]) for i in order],
                          [rects[i] for i in order], 8)
    assert np.array_equal(a.maps, b.maps)


def test_aggregate_size_mismatch():
    with pytest.raises(GeometryError):
        aggregate_windows([_att(np.ones((1, 3, 3)))], [Rect(0, 0, 2, 2)], 4)


def test_normalize_gate_channel_count_mismatch():
    with pytest.raises(ShapeError):
        normalize_and_gate(np.ones((3, 2, 2)), np.array([1, 1]))
