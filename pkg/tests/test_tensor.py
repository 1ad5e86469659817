import io

import numpy as np
import pytest

from l2g.errors import GeometryError, NumericError, ShapeError
from l2g.optim import make_sgd, sgd_step
from l2g.rng import stream
from l2g.tensor import (Tensor, backward, bilinear_resize, channel_softmax,
                        conv2d, crop, global_avg_pool, mul, no_grad,
                        normalize_max, read_l2gt, relu, reshape,
                        resize_bilinear_np, sigmoid, softplus, sub,
                        take_channels, tmean, tsum, write_l2gt)


def _rand(shape, key="x", lo=-1.0, hi=1.0):
    r = stream(99, key)
    return r.uniform_array(int(np.prod(shape)), lo, hi).reshape(shape)


# -- conv ---------------------------------------------------------------------


def test_conv_identity_kernel():
    x = Tensor(_rand((2, 3, 5, 5)))
    k = np.zeros((3, 3, 1, 1))
    for i in range(3):
        k[i, i, 0, 0] = 1.0
    out = conv2d(x, Tensor(k))
    assert np.array_equal(out.data, x.data)


def test_conv_ones_kernel_constant_input():
    v = 0.37
    x = Tensor(np.full((1, 3, 4, 6), v))
    k = Tensor(np.ones((2, 3, 1, 1)))
    out = conv2d(x, k)
    assert np.allclose(out.data, 3 * v)


def test_conv_output_shape():
    out = conv2d(Tensor(np.zeros((1, 3, 8, 8))),
                 Tensor(np.zeros((4, 3, 3, 3))), stride=2, pad=1)
    assert out.shape == (1, 4, 4, 4)


def test_conv_matches_bruteforce():
    # independent oracle: direct 6-deep loop over the convolution sum
    x = _rand((1, 2, 5, 6), "cx")
    k = _rand((3, 2, 3, 3), "ck")
    stride, pad = 2, 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (5 + 2 * pad - 3) // stride + 1
    wo = (6 + 2 * pad - 3) // stride + 1
    expect = np.zeros((1, 3, ho, wo))
    for o in range(3):
        for y in range(ho):
            for xx in range(wo):
                acc = 0.0
                for c in range(2):
                    for dy in range(3):
                        for dx in range(3):
                            acc += xp[0, c, y * stride + dy, xx * stride + dx] * k[o, c, dy, dx]
                expect[0, o, y, xx] = acc
    out = conv2d(Tensor(x), Tensor(k), stride=stride, pad=pad)
    assert np.allclose(out.data, expect, atol=1e-12)


def test_conv_channel_mismatch_names_axes():
    with pytest.raises(ShapeError, match="axis 1"):
        conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3))))


def test_conv_kernel_too_large():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


# -- activations / pooling ------------------------------------------------------


def test_global_avg_pool_constant():
    out = global_avg_pool(Tensor(np.full((2, 3, 4, 4), 1.25)))
    assert np.allclose(out.data, 1.25)
    assert out.shape == (2, 3)


def test_channel_softmax_equal_logits():
    out = channel_softmax(Tensor(np.zeros((1, 3, 2, 2))))
    assert np.allclose(out.data, 1.0 / 3.0)


def test_channel_softmax_sums_to_one():
    x = Tensor(_rand((2, 5, 3, 3), "sm", -4, 4))
    out = channel_softmax(x)
    sums = out.data.sum(axis=1)
    assert np.all(np.abs(sums - 1.0) < 1e-9)
    assert np.all(out.data > 0) and np.all(out.data < 1)


def test_sigmoid_at_zero():
    assert sigmoid(Tensor(np.zeros(3))).data[0] == 0.5


def test_relu_idempotent():
    x = Tensor(_rand((4, 4), "r"))
    once = relu(x).data
    twice = relu(relu(x)).data
    assert np.array_equal(once, twice)


# -- resize ----------------------------------------------------------------------


def test_resize_identity_same_size():
    x = Tensor(_rand((3, 5, 7), "rs"))
    out = bilinear_resize(x, 5, 7)
    assert np.array_equal(out.data, x.data)


def test_resize_constant_preserved():
    out = bilinear_resize(Tensor(np.full((1, 4, 4), 0.77)), 9, 3)
    assert np.allclose(out.data, 0.77)


def test_resize_2x2_to_3x3_center():
    # hand bilinear under align-corners-false: center samples (0.5, 0.5),
    # the mean of all four corners
    out = bilinear_resize(Tensor(np.array([[[0.0, 1.0], [2.0, 3.0]]])), 3, 3)
    assert out.data[0, 1, 1] == pytest.approx(1.5)
    assert out.data[0, 0, 0] == 0.0 and out.data[0, 2, 2] == 3.0


def test_resize_rejects_zero_size():
    with pytest.raises(ValueError):
        bilinear_resize(Tensor(np.zeros((2, 2))), 0, 3)


def test_resize_np_matches_op():
    x = _rand((2, 3, 6, 5), "rn")
    a = resize_bilinear_np(x, 10, 7)
    b = bilinear_resize(Tensor(x), 10, 7).data
    assert np.array_equal(a, b)


# -- crop / channels --------------------------------------------------------------


def test_crop_translates_coordinates():
    x = np.zeros((1, 6, 6))
    x[0, 4, 3] = 1.0
    out = crop(Tensor(x), 2, 1, 4, 4)
    assert out.data[0, 2, 2] == 1.0
    assert out.data.sum() == 1.0


def test_crop_out_of_bounds():
    with pytest.raises(GeometryError, match="bounds"):
        crop(Tensor(np.zeros((1, 4, 4))), 2, 2, 3, 3)


def test_take_channels():
    x = _rand((5, 2, 2), "tc")
    out = take_channels(Tensor(x), 1, 4)
    assert np.array_equal(out.data, x[1:4])


# -- backward ----------------------------------------------------------------------


def test_backward_sum_of_squares():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    backward(tsum(mul(x, x)))
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_constant_wrt_input():
    x = Tensor(np.ones(4), requires_grad=True)
    y = Tensor(np.ones(4))
    backward(tsum(mul(y, y)))
    assert x.grad is None


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(mul(x, x))


def test_no_grad_blocks_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = mul(x, x)
    assert not y.requires_grad


def test_grad_absent_without_requires_grad():
    x = Tensor(np.ones(3))
    y = Tensor(np.ones(3), requires_grad=True)
    backward(tsum(mul(x, y)))
    assert x.grad is None and y.grad is not None


def test_finite_check_names_op():
    big = Tensor(np.array([1e200]))
    with np.errstate(over="ignore"), pytest.raises(NumericError, match="mul"):
        mul(big, big)  # overflows to inf
    # protected ops stay finite on the same magnitude
    assert np.isfinite(softplus(big).data).all()


def test_nan_input_rejected():
    with pytest.raises(NumericError):
        Tensor(np.array([np.nan]))


def test_forward_purity():
    x = _rand((2, 3, 8, 8), "pure")
    k = _rand((4, 3, 3, 3), "purek")
    a = conv2d(Tensor(x), Tensor(k), stride=2, pad=1).data
    b = conv2d(Tensor(x), Tensor(k), stride=2, pad=1).data
    assert np.array_equal(a, b)


# -- normalize_max ------------------------------------------------------------------


def test_normalize_max_scales_to_one():
    x = np.array([[[0.5, 2.0], [1.0, 0.0]]])
    out = normalize_max(Tensor(x))
    assert out.data.max() == 1.0
    assert np.allclose(out.data, x / 2.0)


def test_normalize_max_zero_channel():
    out = normalize_max(Tensor(np.zeros((2, 3, 3))))
    assert np.array_equal(out.data, np.zeros((2, 3, 3)))


def test_normalize_max_gate():
    x = np.ones((2, 2, 2))
    out = normalize_max(Tensor(x), gate=np.array([1.0, 0.0]))
    assert np.allclose(out.data[0], 1.0)
    assert np.array_equal(out.data[1], np.zeros((2, 2)))


# -- optimizer ------------------------------------------------------------------------


def test_sgd_zero_lr_keeps_params():
    p = Tensor(np.array([3.0]), requires_grad=True)
    st = make_sgd([p], lr=0.0, momentum=0.9, weight_decay=5e-4)
    sgd_step([p], [np.array([123.0])], st)
    assert p.data[0] == 3.0


def test_sgd_plain_descent():
    p = Tensor(np.array([3.0]), requires_grad=True)
    st = make_sgd([p], lr=1.0, momentum=0.0, weight_decay=0.0)
    sgd_step([p], [np.array([1.0])], st)
    assert p.data[0] == 2.0


def test_sgd_momentum_two_steps_hand():
    # v1 = 1, p1 = -1; v2 = 0.9 + 1 = 1.9, p2 = -2.9
    p = Tensor(np.array([0.0]), requires_grad=True)
    st = make_sgd([p], lr=1.0, momentum=0.9, weight_decay=0.0)
    g = np.array([1.0])
    sgd_step([p], [g], st)
    assert p.data[0] == pytest.approx(-1.0)
    sgd_step([p], [g], st)
    assert p.data[0] == pytest.approx(-2.9)


def test_sgd_weight_decay_enters_before_momentum():
    # v = g + wd*p = 1 + 0.1*2 = 1.2 ; p = 2 - 0.5*1.2 = 1.4
    p = Tensor(np.array([2.0]), requires_grad=True)
    st = make_sgd([p], lr=0.5, momentum=0.9, weight_decay=0.1)
    sgd_step([p], [np.array([1.0])], st)
    assert p.data[0] == pytest.approx(1.4)


def test_sgd_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    st = make_sgd([p], lr=0.1)
    with pytest.raises(ShapeError):
        sgd_step([p], [np.zeros(4)], st)


# -- dump format --------------------------------------------------------------------


def test_l2gt_roundtrip_layout():
    arr = _rand((2, 3, 4), "dump")
    buf = io.BytesIO()
    write_l2gt(buf, arr)
    raw = buf.getvalue()
    assert raw[:4] == b"L2GT"
    assert int.from_bytes(raw[4:8], "little") == 3
    assert int.from_bytes(raw[8:12], "little") == 2
    buf.seek(0)
    back = read_l2gt(buf)
    assert back.shape == arr.shape
    assert np.array_equal(back, arr.astype(np.float32).astype(np.float64))


def test_l2gt_bad_magic():
    with pytest.raises(IOError):
        read_l2gt(io.BytesIO(b"NOPE" + b"\x00" * 16))


def test_reshape_grad():
    x = Tensor(_rand((2, 6), "rsh"), requires_grad=True)
    backward(tsum(mul(reshape(x, (3, 4)), reshape(x, (3, 4)))))
    assert np.allclose(x.grad, 2 * x.data)
