"""View-set construction: one global crop plus N random local crops.

All rectangles live in the pixel frame of the grid they were sampled from
(the canvas for the global view, the global view for local views), so a map
aligned to that grid can be cropped at the same coordinates exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Sample
from .errors import GeometryError
from .rng import Rng


@dataclass(frozen=True)
class Rect:
    x0: int
    y0: int
    w: int
    h: int

    def in_bounds(self, width: int, height: int) -> bool:
        return (self.x0 >= 0 and self.y0 >= 0
                and self.x0 + self.w <= width and self.y0 + self.h <= height)


@dataclass
class ViewSet:
    global_view: np.ndarray        # [3,g,g]
    global_rect: Rect              # placement on the source canvas
    local_views: np.ndarray        # [N,3,l,l]
    local_rects: list[Rect]        # placements on the global view


def crop_map(arr: np.ndarray, rect: Rect) -> np.ndarray:
    """Exact sub-grid of the trailing two axes; channels preserved."""
    h, w = arr.shape[-2], arr.shape[-1]
    if not rect.in_bounds(w, h):
        raise GeometryError(f"rect {rect} out of bounds for {h}x{w} grid")
    return arr[..., rect.y0:rect.y0 + rect.h, rect.x0:rect.x0 + rect.w].copy()


def paste_map(dst: np.ndarray, src: np.ndarray, rect: Rect) -> None:
    h, w = dst.shape[-2], dst.shape[-1]
    if not rect.in_bounds(w, h):
        raise GeometryError(f"rect {rect} out of bounds for {h}x{w} grid")
    if src.shape[-2:] != (rect.h, rect.w):
        raise GeometryError(f"source {src.shape[-2:]} does not match rect {rect}")
    dst[..., rect.y0:rect.y0 + rect.h, rect.x0:rect.x0 + rect.w] = src


def sample_global_view(sample: Sample, g: int, rng: Rng) -> tuple[np.ndarray, Rect]:
    """Uniformly placed g-by-g crop of the sample image."""
    size = sample.image.shape[-1]
    if g > size:
        raise ValueError(f"global view {g} exceeds canvas {size}")
    x0 = rng.randint(0, size - g)
    y0 = rng.randint(0, size - g)
    rect = Rect(x0, y0, g, g)
    return crop_map(sample.image, rect), rect


def sample_local_views(global_view: np.ndarray, n: int, l: int,
                       rng: Rng) -> list[tuple[np.ndarray, Rect]]:
    """n independent uniformly placed l-by-l crops of the global view."""
    g = global_view.shape[-1]
    if l > g:
        raise ValueError(f"local view {l} exceeds global view {g}")
    if n < 1:
        raise ValueError(f"need at least one local view, got {n}")
    out = []
    for _ in range(n):
        x0 = rng.randint(0, g - l)
        y0 = rng.randint(0, g - l)
        rect = Rect(x0, y0, l, l)
        out.append((crop_map(global_view, rect), rect))
    return out


def build_viewset(sample: Sample, g: int, l: int, n: int, rng: Rng) -> ViewSet:
    gv, grect = sample_global_view(sample, g, rng)
    pairs = sample_local_views(gv, n, l, rng)
    return ViewSet(
        global_view=gv,
        global_rect=grect,
        local_views=np.stack([v for v, _ in pairs]),
        local_rects=[r for _, r in pairs],
    )


def center_rect(canvas: int, g: int) -> Rect:
    """Deterministic centered placement used for inference views."""
    if g > canvas:
        raise ValueError(f"global view {g} exceeds canvas {canvas}")
    off = (canvas - g) // 2
    return Rect(off, off, g, g)


def sliding_window_rects(g: int, window: int, stride: int) -> list[Rect]:
    """Row-major uniform grid of windows covering every pixel.

    The last row/column is clamped so the final window touches the boundary
    even when the stride does not divide evenly.
    """
    if window > g:
        raise ValueError(f"window {window} exceeds grid {g}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    positions = list(range(0, g - window + 1, stride))
    if positions[-1] != g - window:
        positions.append(g - window)
    return [Rect(x, y, window, window) for y in positions for x in positions]
