"""The training loss stack: multi-view classification, attention transfer,
and its saliency-gated shape variant.

Transfer targets are detached by default: the teacher's attention maps enter
as constants and no gradient reaches the network that produced them. The
shape variant's empty-saliency fallback reuses the exact attention-transfer
term, so the two losses agree bit for bit whenever every saliency crop is
empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import (Tensor, bilinear_resize, channel_softmax, crop, mul,
                     reshape, softplus, sub, take_channels, tmean)
from .views import Rect


@dataclass
class LossReport:
    """Scalar loss terms for one training step; total = cls + weight * kt."""
    step: int
    l_cls: float
    l_kt: float
    weight: float
    total: float
    per_view: list[float] = field(default_factory=list)
    fallback_count: int = 0

    def csv_row(self) -> list:
        return [self.step, repr(self.l_cls), repr(self.l_kt),
                repr(self.weight), repr(self.total), self.fallback_count]

    CSV_HEADER = ["step", "L_cls", "L_kt", "lambda", "L", "fallback_count"]


def classification_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean sigmoid cross-entropy over views and classes.

    ``logits`` is [N,C]; the same binary label vector supervises every view.
    Uses the stable identity softplus(x) - x*y for
    -(y*log(sigmoid(x)) + (1-y)*log(1-sigmoid(x))).
    """
    labels = np.asarray(labels, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != labels.shape[0]:
        raise ShapeError(
            f"logits {logits.shape} incompatible with {labels.shape[0]} classes"
        )
    return tmean(sub(softplus(logits), mul(logits, labels[None, :])))


def global_softmax(features: Tensor, out_size: int,
                   channels: int | None = None) -> Tensor:
    """Per-location channel softmax, upsampled to the global pixel grid.

    Accepts [C+1,h,w] or [B,C+1,h,w]; softmax runs at feature resolution and
    each channel is then resized bilinearly, which preserves the unit channel
    sum because interpolation weights are convex.
    """
    if channels is not None and features.shape[-3] != channels:
        raise ShapeError(
            f"expected {channels} channels, got {features.shape[-3]}"
        )
    probs = channel_softmax(features, axis=-3)
    return bilinear_resize(probs, out_size, out_size)


def _view_term(target, probs: Tensor, rect: Rect, n_classes: int) -> Tensor:
    """MSE between one view's target maps and the matching crop of probs.

    ``target`` is normally a plain array (detached teacher); a Tensor target
    keeps its graph alive, which the grad-to-local study flag relies on.
    """
    if target.shape[-2:] != (rect.h, rect.w):
        raise ShapeError(f"target {target.shape} does not match rect {rect}")
    fg = take_channels(probs, 0, n_classes)
    window = crop(fg, rect.y0, rect.x0, rect.h, rect.w)
    if isinstance(target, Tensor):
        t = reshape(target, window.shape)
    else:
        t = Tensor(np.asarray(target).reshape(window.shape))
    diff = sub(window, t)
    return tmean(mul(diff, diff))


def attention_transfer_loss(targets, probs: Tensor,
                            rects: list[Rect]) -> tuple[Tensor, list[float]]:
    """Mean over views of MSE between attention targets and probability crops.

    ``targets`` is [N,C,l,l] (or a list of [C,l,l]); only the first C
    channels of ``probs`` enter the distance, so the background channel is
    trained implicitly through the softmax coupling. Gradient flows into
    ``probs`` only — targets are plain arrays.
    """
    n = len(targets)
    if n != len(rects):
        raise ShapeError(f"{n} target maps vs {len(rects)} rects")
    n_classes = targets[0].shape[0]
    total = None
    breakdown = []
    for target, rect in zip(targets, rects):
        term = _view_term(target, probs, rect, n_classes)
        breakdown.append(term.item())
        total = term if total is None else total + term
    return total * (1.0 / n), breakdown


def binarize(maps: np.ndarray, tau: float) -> np.ndarray:
    """0/1 masks: 1 exactly where the map is >= tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {tau}")
    return (np.asarray(maps) >= tau).astype(np.float64)


def shape_transfer_loss(targets, saliency: np.ndarray, probs: Tensor,
                        rects: list[Rect], tau: float
                        ) -> tuple[Tensor, list[float], int]:
    """Saliency-gated transfer: targets become binarized-attention x saliency.

    Per view, the saliency window is taken at the view's rect; its
    cardinality is the count of values above 0.5. Non-empty windows
    supervise with the per-class binary mask multiplied by the (soft)
    saliency values; empty windows fall back to the plain attention target,
    through the identical code path as the attention transfer term.
    """
    n = len(targets)
    if n != len(rects):
        raise ShapeError(f"{n} target maps vs {len(rects)} rects")
    n_classes = targets[0].shape[0]
    total = None
    breakdown = []
    fallbacks = 0
    for target, rect in zip(targets, rects):
        window = saliency[rect.y0:rect.y0 + rect.h, rect.x0:rect.x0 + rect.w]
        if window.shape != (rect.h, rect.w):
            raise ShapeError(
                f"saliency grid {saliency.shape} does not cover rect {rect}"
            )
        if (window > 0.5).sum() > 0:
            arr = target.data if isinstance(target, Tensor) else np.asarray(target)
            shaped = binarize(arr, tau) * window[None]
        else:
            shaped = target
            fallbacks += 1
        term = _view_term(shaped, probs, rect, n_classes)
        breakdown.append(term.item())
        total = term if total is None else total + term
    return total * (1.0 / n), breakdown, fallbacks


def total_loss(l_cls: Tensor, l_kt: Tensor | None, weight: float) -> Tensor:
    """Weighted sum of the classification and knowledge-transfer terms."""
    for name, term in (("L_cls", l_cls), ("L_kt", l_kt)):
        if term is not None and not np.isfinite(term.data).all():
            raise NumericError(f"loss term {name} is not finite")
    if l_kt is None:
        return l_cls
    return l_cls + l_kt * weight
