"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: a ``Tensor`` wraps a numpy array, every
operation records its parents and a backward closure, and ``backward`` walks
the implicit DAG once in reverse topological order. Conventions that callers
rely on:

* float64 end to end; checkpoints down-cast to float32 on disk only.
* Resizing is bilinear with the align-corners-false convention: output pixel
  ``i`` samples source coordinate ``(i + 0.5) * in / out - 0.5``, clamped to
  the valid range. Constant maps stay constant and same-size resizing is an
  exact identity.
* Every operation checks its result for NaN/Inf and raises ``NumericError``
  naming the operation, so a diverging loss fails fast at its source.
* Forward passes are pure functions of their inputs.

Binary dump format ("L2GT"): magic ``b"L2GT"``, u32 rank, u32 dims, all
little-endian, then the row-major payload as little-endian float32 (values
are down-cast on write and up-cast to float64 on read).
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from functools import lru_cache

import numpy as np

from .errors import GeometryError, NumericError, ShapeError

_grad_enabled = True
_finite_checks = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op NaN/Inf detection; returns the previous setting."""
    global _finite_checks
    prev = _finite_checks
    _finite_checks = enabled
    return prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if _finite_checks and not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by '{op}'")


class Tensor:
    """A float64 array plus the bookkeeping needed for backward()."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor")
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents, backward, op: str) -> "Tensor":
        _check_finite(data, op)
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        out._op = op
        return out

    # -- introspection -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        grad = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires-grad tensor reachable from a scalar.

    Iterative reverse topological traversal: each recorded node is visited
    exactly once. Raises if the root is not a scalar.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar, got shape {loss.data.shape}")
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- elementwise arithmetic --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor._from_op(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor._from_op(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(out, (a, b), bw, "mul")


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(x.data.sum())

    def bw(g):
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return Tensor._from_op(out, (x,), bw, "sum")


def tmean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    out = np.asarray(x.data.mean())

    def bw(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape).copy())

    return Tensor._from_op(out, (x,), bw, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def bw(g):
        _accum(x, g.reshape(x.data.shape))

    return Tensor._from_op(out, (x,), bw, "reshape")


# -- activations --------------------------------------------------------------


def relu(x) -> Tensor:
    """Clamp negatives to zero; subgradient 0 at the kink."""
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bw(g):
        _accum(x, g * (x.data > 0.0))

    return Tensor._from_op(out, (x,), bw, "relu")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        _accum(x, g * out * (1.0 - out))

    return Tensor._from_op(out, (x,), bw, "sigmoid")


def softplus(x) -> Tensor:
    """log(1 + exp(x)) computed without overflow; derivative is sigmoid."""
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def bw(g):
        _accum(x, g / (1.0 + np.exp(-x.data)))

    return Tensor._from_op(out, (x,), bw, "softplus")


def channel_softmax(x, axis: int = -3) -> Tensor:
    """Softmax over the channel axis; sums to one at every other index."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, out * (g - dot))

    return Tensor._from_op(out, (x,), bw, "channel_softmax")


def global_avg_pool(x) -> Tensor:
    """Spatial mean of a [B,C,H,W] map, giving [B,C] logits."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [B,C,H,W], got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def bw(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy())

    return Tensor._from_op(out, (x,), bw, "global_avg_pool")


# -- convolution ---------------------------------------------------------------


def conv2d(x, kernel, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of [B,Cin,H,W] with [Cout,Cin,kH,kW].

    Output spatial size is (H + 2*pad - kH)//stride + 1 (same for W).
    Differentiable with respect to both the input and the kernel.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be [B,Cin,H,W], got {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be [Cout,Cin,kH,kW], got {kernel.shape}")
    b, cin, h, w = x.shape
    cout, ck, kh, kw = kernel.shape
    if ck != cin:
        raise ShapeError(
            f"conv2d: kernel channels {ck} (kernel axis 1) != input channels "
            f"{cin} (input axis 1)"
        )
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * pad}x{w + 2 * pad} (axes 2,3)"
        )
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1

    # im2col: one GEMM instead of per-offset accumulation
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                      # [B,C,Ho,Wo,kh,kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, cin * kh * kw)
    kmat = kernel.data.reshape(cout, cin * kh * kw)
    out = (cols @ kmat.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
        if kernel.requires_grad:
            _accum(kernel, (gmat.T @ cols).reshape(kernel.data.shape))
        if x.requires_grad:
            gcols = gmat @ kmat
            gwin = gcols.reshape(b, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for dy in range(kh):
                ye = dy + stride * (ho - 1) + 1
                for dx in range(kw):
                    xe = dx + stride * (wo - 1) + 1
                    gxp[:, :, dy:ye:stride, dx:xe:stride] += gwin[..., dy, dx]
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
            _accum(x, gx)

    return Tensor._from_op(np.ascontiguousarray(out), (x, kernel), bw, "conv2d")


# -- resampling and windows ----------------------------------------------------


@lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic [n_out, n_in] bilinear weights (align-corners-false)."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        s = (i + 0.5) * scale - 0.5
        s = min(max(s, 0.0), n_in - 1.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, n_in - 1)
        f = s - i0
        m[i, i0] += 1.0 - f
        m[i, i1] += f
    return m


def resize_bilinear_np(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain-numpy resize of the trailing two axes (shared with the op)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target {out_h}x{out_w} must be positive")
    h, w = arr.shape[-2], arr.shape[-1]
    wr = _interp_matrix(h, out_h)
    wc = _interp_matrix(w, out_w)
    flat = np.ascontiguousarray(arr).reshape(-1, h, w)
    out = np.matmul(wr, flat @ wc.T)
    return out.reshape(arr.shape[:-2] + (out_h, out_w))


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the trailing two axes, align-corners-false."""
    x = _as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize target {out_h}x{out_w} must be positive")
    h, w = x.shape[-2], x.shape[-1]
    if (out_h, out_w) == (h, w):
        out = x.data.copy()

        def bw_same(g):
            _accum(x, g)

        return Tensor._from_op(out, (x,), bw_same, "bilinear_resize")

    wr = _interp_matrix(h, out_h)
    wc = _interp_matrix(w, out_w)
    lead = x.shape[:-2]
    flat = x.data.reshape(-1, h, w)
    out = np.matmul(wr, flat @ wc.T).reshape(lead + (out_h, out_w))

    def bw(g):
        gf = np.ascontiguousarray(g).reshape(-1, out_h, out_w)
        gx = np.matmul(wr.T, gf @ wc)
        _accum(x, gx.reshape(x.data.shape))

    return Tensor._from_op(out, (x,), bw, "bilinear_resize")


def crop(x, y0: int, x0: int, h: int, w: int) -> Tensor:
    """Exact sub-grid [y0:y0+h, x0:x0+w] of the trailing two axes."""
    x = _as_tensor(x)
    hh, ww = x.shape[-2], x.shape[-1]
    if y0 < 0 or x0 < 0 or h < 1 or w < 1 or y0 + h > hh or x0 + w > ww:
        raise GeometryError(
            f"crop window (y0={y0}, x0={x0}, h={h}, w={w}) out of bounds "
            f"for grid {hh}x{ww}"
        )
    out = x.data[..., y0:y0 + h, x0:x0 + w].copy()

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[..., y0:y0 + h, x0:x0 + w] = g
        _accum(x, gx)

    return Tensor._from_op(out, (x,), bw, "crop")


def take_channels(x, start: int, stop: int) -> Tensor:
    """Slice [start:stop] of the channel axis (third from the end)."""
    x = _as_tensor(x)
    c = x.shape[-3]
    if not (0 <= start < stop <= c):
        raise ShapeError(f"channel slice [{start}:{stop}] invalid for {c} channels")
    out = x.data[..., start:stop, :, :].copy()

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop, :, :] = g
        _accum(x, gx)

    return Tensor._from_op(out, (x,), bw, "take_channels")


def normalize_max(x, gate: np.ndarray | None = None) -> Tensor:
    """Per-channel max-normalization over the trailing two axes.

    Channels whose maximum is not positive come out identically zero (0/0 is
    defined as 0). ``gate`` is an optional per-channel 0/1 multiplier of
    length C; gated-off channels are zero and receive no gradient. The
    gradient at the per-channel argmax follows the quotient rule, routing
    through the first maximal element in row-major order.
    """
    x = _as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"normalize_max expects [...,C,H,W], got {x.shape}")
    c, h, w = x.shape[-3], x.shape[-2], x.shape[-1]
    flat = x.data.reshape(-1, h * w)
    m = flat.max(axis=1)
    pos = m > 0.0
    safe = np.where(pos, m, 1.0)
    out_flat = np.where(pos[:, None], flat / safe[:, None], 0.0)
    gmul = None
    if gate is not None:
        gate = np.asarray(gate, dtype=np.float64)
        if gate.shape != (c,):
            raise ShapeError(f"gate must have shape ({c},), got {gate.shape}")
        reps = flat.shape[0] // c
        gmul = np.tile(gate, reps)
        out_flat = out_flat * gmul[:, None]
    out = out_flat.reshape(x.data.shape)

    def bw(g):
        gf = g.reshape(-1, h * w).copy()
        if gmul is not None:
            gf *= gmul[:, None]
        gx = np.where(pos[:, None], gf / safe[:, None], 0.0)
        amax = flat.argmax(axis=1)
        rows = np.arange(flat.shape[0])
        correction = (gf * flat).sum(axis=1) / (safe * safe)
        gx[rows, amax] -= np.where(pos, correction, 0.0)
        _accum(x, gx.reshape(x.data.shape))

    return Tensor._from_op(out, (x,), bw, "normalize_max")


# -- binary dump format ---------------------------------------------------------


MAGIC = b"L2GT"


def write_l2gt(fobj, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    fobj.write(MAGIC)
    fobj.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        fobj.write(struct.pack("<I", d))
    fobj.write(arr.astype("<f4").tobytes(order="C"))


def read_l2gt(fobj) -> np.ndarray:
    magic = fobj.read(4)
    if magic != MAGIC:
        raise IOError(f"bad tensor magic {magic!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack("<I", fobj.read(4))
    dims = struct.unpack("<" + "I" * rank, fobj.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    payload = fobj.read(4 * count)
    if len(payload) != 4 * count:
        raise IOError("truncated tensor payload")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(dims)


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_l2gt(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_l2gt(f)
