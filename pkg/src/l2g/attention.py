"""Class attention maps from classifier features.

A per-class attention map is the ReLU of that class's feature channel
divided by its spatial maximum; an all-non-positive channel normalizes to
the zero map (0/0 is defined as 0), and channels for classes absent from
the image-level labels are zeroed outright. Fusion conventions, fixed here
and relied on by tests: raw ReLU'd features are upsampled to the pixel grid
and averaged across scales/flips first, and the max-normalization is applied
once at the end; sliding-window aggregation composes per-window normalized
maps with a per-pixel maximum, then renormalizes.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ShapeError
from .model import Network, forward_features
from .pnm import write_pnm
from .tensor import Tensor, no_grad, resize_bilinear_np, save_tensor
from .views import Rect


@dataclass
class AttentionMaps:
    maps: np.ndarray     # [C,H,W] float64 in [0,1]
    labels: np.ndarray   # [C] uint8 gate the maps were zeroed by


def normalize_and_gate(maps: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-channel max-normalization plus absent-class zeroing (numpy path)."""
    if maps.shape[-3] != len(labels):
        raise ShapeError(
            f"{maps.shape[-3]} channels vs {len(labels)} label entries"
        )
    m = maps.max(axis=(-2, -1), keepdims=True)
    safe = np.where(m > 0.0, m, 1.0)
    out = np.where(m > 0.0, maps / safe, 0.0)
    gate = np.asarray(labels, dtype=np.float64).reshape(
        (1,) * (maps.ndim - 3) + (-1, 1, 1))
    return out * gate


def cam(features: np.ndarray, labels: np.ndarray) -> AttentionMaps:
    """Attention maps from a [C,h,w] feature array on its own grid."""
    if features.ndim != 3:
        raise ShapeError(f"cam expects [C,h,w] features, got {features.shape}")
    maps = normalize_and_gate(np.maximum(features, 0.0), labels)
    return AttentionMaps(maps=maps, labels=np.asarray(labels, dtype=np.uint8))


def local_attention_targets(features: np.ndarray, labels: np.ndarray,
                            out_size: int) -> np.ndarray:
    """Per-view attention targets [N,C,out,out] from local features.

    ReLU'd raw features are upsampled to the view's pixel grid first, then
    normalized and gated per view, so each nonzero present-class map peaks
    at exactly 1 on the grid where the transfer loss compares it.
    """
    if features.ndim != 4:
        raise ShapeError(f"expected [N,C,h,w] features, got {features.shape}")
    up = resize_bilinear_np(np.maximum(features, 0.0), out_size, out_size)
    return normalize_and_gate(up, labels)


def _round_to_multiple(value: float, multiple: int) -> int:
    return max(multiple, int(round(value / multiple)) * multiple)


def multi_scale_attention(net: Network, image: np.ndarray, scales,
                          flip: bool, labels: np.ndarray) -> AttentionMaps:
    """Scale/flip-fused attention for one [3,H,W] image at its pixel grid.

    Each requested scale is rounded to the nearest feature-stride multiple.
    Only the first len(labels) feature channels contribute, which ignores
    the background channel of a (C+1)-headed network.
    """
    scales = tuple(scales)
    if not scales:
        raise ValueError("scale list must not be empty")
    c = len(labels)
    h, w = image.shape[-2], image.shape[-1]
    stride = net.feature_stride
    acc = np.zeros((c, h, w))
    terms = 0
    with no_grad():
        for s in scales:
            sh = _round_to_multiple(h * s, stride)
            sw = _round_to_multiple(w * s, stride)
            scaled = image if (sh, sw) == (h, w) else resize_bilinear_np(image, sh, sw)
            for flipped in (False, True) if flip else (False,):
                x = scaled[..., ::-1] if flipped else scaled
                feats = forward_features(net, Tensor(np.ascontiguousarray(x)[None])).data[0]
                up = resize_bilinear_np(np.maximum(feats[:c], 0.0), h, w)
                acc += up[..., ::-1] if flipped else up
                terms += 1
    maps = normalize_and_gate(acc / terms, labels)
    return AttentionMaps(maps=maps, labels=np.asarray(labels, dtype=np.uint8))


def aggregate_windows(per_window: list[AttentionMaps], rects: list[Rect],
                      g: int) -> AttentionMaps:
    """Per-pixel, per-class max over window maps pasted at their rects.

    Pixels no window covers stay zero; the composite is renormalized so each
    nonzero class map peaks at 1 again.
    """
    if len(per_window) != len(rects):
        raise ShapeError(f"{len(per_window)} maps vs {len(rects)} rects")
    labels = per_window[0].labels
    canvas = np.zeros((len(labels), g, g))
    for att, rect in zip(per_window, rects):
        if att.maps.shape[-2:] != (rect.h, rect.w):
            raise GeometryError(
                f"window map {att.maps.shape[-2:]} does not match rect {rect}"
            )
        if not rect.in_bounds(g, g):
            raise GeometryError(f"rect {rect} out of bounds for {g}x{g} grid")
        region = canvas[:, rect.y0:rect.y0 + rect.h, rect.x0:rect.x0 + rect.w]
        np.maximum(region, att.maps, out=region)
    maps = normalize_and_gate(canvas, labels)
    return AttentionMaps(maps=maps, labels=labels)


def export_attention(out_dir: str, sample_id: str, att: AttentionMaps,
                     index_rows: list, raw: bool = False) -> None:
    """One 0-255 PGM per present class, plus optional exact L2GT dumps."""
    os.makedirs(out_dir, exist_ok=True)
    for c in range(att.maps.shape[0]):
        if not att.labels[c]:
            continue
        name = f"{sample_id}_class{c + 1}.pgm"
        quant = np.round(np.clip(att.maps[c], 0.0, 1.0) * 255.0).astype(np.uint8)
        write_pnm(os.path.join(out_dir, name), quant)
        index_rows.append([sample_id, c + 1, name])
    if raw:
        save_tensor(os.path.join(out_dir, f"{sample_id}.l2gt"), att.maps)


def write_attention_index(out_dir: str, index_rows: list) -> None:
    with open(os.path.join(out_dir, "index.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "class", "file"])
        writer.writerows(index_rows)
