"""Finite-difference verification of every layer operation and loss.

Each registered check builds a small fixed input, computes analytic
gradients through backward(), and compares them against central differences
with step 1e-5 in float64. Inputs for kinked operations (relu, the max
normalization) are kept away from their non-differentiable points so the
numeric derivative is valid. The detached-target check is exact: the
transfer loss must produce no gradient at all on the teacher network.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .losses import (attention_transfer_loss, classification_loss,
                     global_softmax, shape_transfer_loss, total_loss)
from .model import NetworkConfig, build_network, forward_features
from .rng import Rng, stream
from .tensor import (Tensor, backward, bilinear_resize, channel_softmax,
                     conv2d, crop, global_avg_pool, mul, normalize_max, relu,
                     reshape, sigmoid, softplus, sub, take_channels, tmean,
                     tsum)
from .views import Rect

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[CheckEntry]
    elapsed: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)


def _rand(rng: Rng, shape, lo=-1.0, hi=1.0) -> np.ndarray:
    return rng.uniform_array(int(np.prod(shape)), lo, hi).reshape(shape)


def _away_from_zero(arr: np.ndarray, margin: float = 0.05) -> np.ndarray:
    return np.where(np.abs(arr) < margin, margin + np.abs(arr), arr)


def _numeric_grad(f, arr: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(arr)
    flat, gflat = arr.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + STEP
        fp = f()
        flat[i] = orig - STEP
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * STEP)
    return grad


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float((np.abs(analytic - numeric) / denom).max())


def _compare(build, arrays: list[np.ndarray], wrt: list[int]) -> float:
    """Max relative error of analytic vs numeric grads over chosen inputs.

    ``build`` maps the shared array list to a scalar Tensor; it is re-run
    for every probe so the arrays can be perturbed in place.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(tensors)
    backward(loss)
    err = 0.0
    for i in wrt:
        analytic = tensors[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])

        def forward_only():
            fresh = [Tensor(a) for a in arrays]
            return float(build(fresh).data)

        numeric = _numeric_grad(forward_only, arrays[i])
        err = max(err, _rel_err(analytic, numeric))
    return err


def _proj(rng: Rng, shape) -> np.ndarray:
    # random projection so the scalarized check covers the whole Jacobian
    return _rand(rng, shape, -1.0, 1.0)


# -- individual checks -------------------------------------------------------


def _check_conv_input():
    rng = stream(7, "conv-in")
    x = _rand(rng, (2, 3, 6, 5))
    k = _rand(rng, (4, 3, 3, 3))
    p = _proj(rng, (2, 4, 4, 3))
    return _compare(lambda t: tsum(mul(conv2d(t[0], t[1]), Tensor(p))),
                    [x, k], wrt=[0])


def _check_conv_kernel():
    rng = stream(7, "conv-k")
    x = _rand(rng, (2, 3, 6, 5))
    k = _rand(rng, (4, 3, 3, 3))
    p = _proj(rng, (2, 4, 4, 3))
    return _compare(lambda t: tsum(mul(conv2d(t[0], t[1]), Tensor(p))),
                    [x, k], wrt=[1])


def _check_conv_stride_pad():
    rng = stream(7, "conv-sp")
    x = _rand(rng, (1, 2, 8, 8))
    k = _rand(rng, (3, 2, 3, 3))
    p = _proj(rng, (1, 3, 4, 4))
    return _compare(
        lambda t: tsum(mul(conv2d(t[0], t[1], stride=2, pad=1), Tensor(p))),
        [x, k], wrt=[0, 1])


def _check_relu():
    rng = stream(7, "relu")
    x = _away_from_zero(_rand(rng, (3, 4, 5)))
    p = _proj(rng, x.shape)
    return _compare(lambda t: tsum(mul(relu(t[0]), Tensor(p))), [x], wrt=[0])


def _check_sigmoid():
    rng = stream(7, "sigmoid")
    x = _rand(rng, (3, 7), -3.0, 3.0)
    p = _proj(rng, x.shape)
    return _compare(lambda t: tsum(mul(sigmoid(t[0]), Tensor(p))), [x], wrt=[0])


def _check_softplus():
    rng = stream(7, "softplus")
    x = _rand(rng, (3, 7), -4.0, 4.0)
    p = _proj(rng, x.shape)
    return _compare(lambda t: tsum(mul(softplus(t[0]), Tensor(p))), [x], wrt=[0])


def _check_channel_softmax():
    rng = stream(7, "softmax")
    x = _rand(rng, (2, 4, 3, 3), -2.0, 2.0)
    p = _proj(rng, x.shape)
    return _compare(lambda t: tsum(mul(channel_softmax(t[0]), Tensor(p))),
                    [x], wrt=[0])


def _check_gap():
    rng = stream(7, "gap")
    x = _rand(rng, (2, 3, 4, 5))
    p = _proj(rng, (2, 3))
    return _compare(lambda t: tsum(mul(global_avg_pool(t[0]), Tensor(p))),
                    [x], wrt=[0])


def _check_resize_up():
    rng = stream(7, "resize-up")
    x = _rand(rng, (2, 3, 4))
    p = _proj(rng, (2, 7, 9))
    return _compare(lambda t: tsum(mul(bilinear_resize(t[0], 7, 9), Tensor(p))),
                    [x], wrt=[0])


def _check_resize_down():
    rng = stream(7, "resize-down")
    x = _rand(rng, (2, 8, 8))
    p = _proj(rng, (2, 3, 5))
    return _compare(lambda t: tsum(mul(bilinear_resize(t[0], 3, 5), Tensor(p))),
                    [x], wrt=[0])


def _check_crop():
    rng = stream(7, "crop")
    x = _rand(rng, (3, 6, 6))
    p = _proj(rng, (3, 3, 4))
    return _compare(lambda t: tsum(mul(crop(t[0], 1, 2, 3, 4), Tensor(p))),
                    [x], wrt=[0])


def _check_take_channels():
    rng = stream(7, "take")
    x = _rand(rng, (5, 4, 4))
    p = _proj(rng, (2, 4, 4))
    return _compare(lambda t: tsum(mul(take_channels(t[0], 1, 3), Tensor(p))),
                    [x], wrt=[0])


def _check_add_broadcast():
    rng = stream(7, "add")
    a = _rand(rng, (2, 3, 4))
    b = _rand(rng, (3, 1))
    p = _proj(rng, (2, 3, 4))
    return _compare(lambda t: tsum(mul(t[0] + t[1], Tensor(p))), [a, b],
                    wrt=[0, 1])


def _check_sub():
    rng = stream(7, "sub")
    a = _rand(rng, (4, 4))
    b = _rand(rng, (4, 4))
    p = _proj(rng, (4, 4))
    return _compare(lambda t: tsum(mul(sub(t[0], t[1]), Tensor(p))), [a, b],
                    wrt=[0, 1])


def _check_mul_broadcast():
    rng = stream(7, "mul")
    a = _rand(rng, (2, 3, 4))
    b = _rand(rng, (1, 4))
    p = _proj(rng, (2, 3, 4))
    return _compare(lambda t: tsum(mul(mul(t[0], t[1]), Tensor(p))), [a, b],
                    wrt=[0, 1])


def _check_normalize_max():
    rng = stream(7, "norm")
    x = np.abs(_rand(rng, (2, 3, 4, 4))) + 0.1
    # make per-channel maxima unique so the argmax subgradient is stable
    x.reshape(6, 16)[:, 3] += np.linspace(2.0, 3.0, 6)
    gate = np.array([1.0, 0.0, 1.0])
    p = _proj(rng, x.shape)
    return _compare(lambda t: tsum(mul(normalize_max(t[0], gate=gate), Tensor(p))),
                    [x], wrt=[0])


def _check_mean():
    rng = stream(7, "mean")
    x = _rand(rng, (3, 5))
    return _compare(lambda t: tmean(t[0]), [x], wrt=[0])


def _check_sum():
    rng = stream(7, "sum")
    x = _rand(rng, (3, 5))
    return _compare(lambda t: tsum(mul(t[0], t[0])), [x], wrt=[0])


def _check_reshape():
    rng = stream(7, "reshape")
    x = _rand(rng, (2, 6))
    p = _proj(rng, (3, 4))
    return _compare(lambda t: tsum(mul(reshape(t[0], (3, 4)), Tensor(p))),
                    [x], wrt=[0])


def _check_classification_loss():
    rng = stream(7, "cls")
    logits = _rand(rng, (3, 4), -2.0, 2.0)
    y = np.array([1, 0, 1, 0], dtype=np.float64)
    return _compare(lambda t: classification_loss(t[0], y), [logits], wrt=[0])


def _check_global_softmax():
    rng = stream(7, "gsm")
    feats = _rand(rng, (3, 4, 4), -2.0, 2.0)
    p = _proj(rng, (3, 8, 8))
    return _compare(lambda t: tsum(mul(global_softmax(t[0], 8), Tensor(p))),
                    [feats], wrt=[0])


def _transfer_fixture(rng: Rng):
    feats = _rand(rng, (1, 3, 4, 4), -1.5, 1.5)   # 2 classes + background
    targets = [np.clip(np.abs(_rand(rng, (2, 6, 6))), 0.0, 1.0)
               for _ in range(2)]
    rects = [Rect(0, 0, 6, 6), Rect(2, 1, 6, 6)]
    return feats, targets, rects


def _check_attention_transfer():
    rng = stream(7, "at")
    feats, targets, rects = _transfer_fixture(rng)

    def build(t):
        probs = global_softmax(t[0], 8)
        loss, _ = attention_transfer_loss(targets, probs, rects)
        return loss

    return _compare(build, [feats], wrt=[0])


def _check_shape_transfer_salient():
    rng = stream(7, "st-sal")
    feats, targets, rects = _transfer_fixture(rng)
    sal = np.clip(np.abs(_rand(rng, (8, 8))), 0.0, 1.0)
    sal[sal < 0.3] = 0.8  # every window salient

    def build(t):
        probs = global_softmax(t[0], 8)
        loss, _, _ = shape_transfer_loss(targets, sal, probs, rects, tau=0.1)
        return loss

    return _compare(build, [feats], wrt=[0])


def _check_shape_transfer_fallback():
    rng = stream(7, "st-fb")
    feats, targets, rects = _transfer_fixture(rng)
    sal = np.zeros((8, 8))

    def build(t):
        probs = global_softmax(t[0], 8)
        loss, _, _ = shape_transfer_loss(targets, sal, probs, rects, tau=0.1)
        return loss

    return _compare(build, [feats], wrt=[0])


def _check_total_loss():
    rng = stream(7, "total")
    a = _rand(rng, (1,))
    b = _rand(rng, (1,))
    return _compare(
        lambda t: total_loss(tmean(mul(t[0], t[0])), tmean(mul(t[1], t[1])), 10.0),
        [a, b], wrt=[0, 1])


def _tiny_net(head: int, key: str):
    cfg = NetworkConfig(widths=(4, 4), strides=(1, 2))
    return build_network(cfg, head, stream(11, key))


def _check_network(head: int, key: str):
    """Classification loss through a full forward, wrt every parameter."""
    net = _tiny_net(head, key)
    rng = stream(7, key)
    x = _rand(rng, (1, 3, 8, 8), 0.0, 1.0)
    y = (np.arange(head) % 2).astype(np.float64)
    names = list(net.params)
    arrays = [net.params[n].data for n in names]

    def build(tensors):
        for n, t in zip(names, tensors):
            net.params[n] = t
        logits = global_avg_pool(forward_features(net, Tensor(x)))
        return classification_loss(logits, y)

    return _compare(build, arrays, wrt=list(range(len(arrays))))


def _check_local_network():
    return _check_network(3, "net-local")


def _check_global_network():
    return _check_network(4, "net-global")


def _check_detached_targets():
    """Transfer loss gradients on the teacher must be exactly zero."""
    local = _tiny_net(2, "det-local")
    glob = _tiny_net(3, "det-global")
    rng = stream(7, "det")
    image = _rand(rng, (1, 3, 8, 8), 0.0, 1.0)
    views = _rand(rng, (2, 3, 8, 8), 0.0, 1.0)
    y = np.array([1.0, 1.0])

    feats_l = forward_features(local, Tensor(views))
    from .attention import local_attention_targets
    targets = local_attention_targets(feats_l.data, y, 8)
    probs = global_softmax(forward_features(glob, Tensor(image)), 8)
    loss, _ = attention_transfer_loss(list(targets), probs,
                                      [Rect(0, 0, 8, 8), Rect(0, 0, 8, 8)])
    backward(loss)
    for p in local.params.values():
        if p.grad is not None and np.any(p.grad != 0.0):
            return 1.0
    if all(p.grad is None for p in glob.params.values()):
        return 1.0  # the loss must still reach the student
    return 0.0


CHECKS: tuple[tuple[str, object], ...] = (
    ("conv2d/input", _check_conv_input),
    ("conv2d/kernel", _check_conv_kernel),
    ("conv2d/stride2_pad1", _check_conv_stride_pad),
    ("relu", _check_relu),
    ("sigmoid", _check_sigmoid),
    ("softplus", _check_softplus),
    ("channel_softmax", _check_channel_softmax),
    ("global_avg_pool", _check_gap),
    ("bilinear_resize/up", _check_resize_up),
    ("bilinear_resize/down", _check_resize_down),
    ("crop", _check_crop),
    ("take_channels", _check_take_channels),
    ("add/broadcast", _check_add_broadcast),
    ("sub", _check_sub),
    ("mul/broadcast", _check_mul_broadcast),
    ("normalize_max", _check_normalize_max),
    ("mean", _check_mean),
    ("sum", _check_sum),
    ("reshape", _check_reshape),
    ("loss/classification", _check_classification_loss),
    ("loss/global_softmax", _check_global_softmax),
    ("loss/attention_transfer", _check_attention_transfer),
    ("loss/shape_transfer_salient", _check_shape_transfer_salient),
    ("loss/shape_transfer_fallback", _check_shape_transfer_fallback),
    ("loss/total", _check_total_loss),
    ("network/local_end_to_end", _check_local_network),
    ("network/global_end_to_end", _check_global_network),
    ("transfer/detached_teacher_zero_grad", _check_detached_targets),
)


def run_grad_check(extra_checks=()) -> GradCheckReport:
    start = time.monotonic()
    entries = []
    for name, fn in tuple(CHECKS) + tuple(extra_checks):
        err = float(fn())
        entries.append(CheckEntry(name=name, max_rel_err=err,
                                  passed=err <= TOLERANCE))
    return GradCheckReport(entries=entries, elapsed=time.monotonic() - start)


def format_report(report: GradCheckReport) -> str:
    lines = []
    for e in report.entries:
        status = "ok " if e.passed else "FAIL"
        lines.append(f"[{status}] {e.name:<40s} max rel err {e.max_rel_err:.3e}")
    lines.append(
        f"{'PASS' if report.passed else 'FAIL'}: {len(report.entries)} checks "
        f"in {report.elapsed:.1f}s (tolerance {TOLERANCE:g})")
    return "\n".join(lines)
