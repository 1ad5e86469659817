"""Synthetic multi-label shapes dataset with pixel ground truth and saliency.

Each sample is a textured canvas with 1-3 colored shapes drawn onto it
(later shapes overwrite earlier ones). The image-level label vector, the
pixel mask, and a degradable class-agnostic saliency map all derive from the
same draw, so label/mask consistency holds by construction. Generation is a
pure function of (seed, config): sample ``i`` of a dataset uses the
substream ``stream(seed, "sample", i)`` and nothing else.

Images and saliency maps are quantized to the 8-bit grid at generation time
(stored as k/255 floats), which makes the PPM/PGM round trip exact.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DatasetError
from .pnm import read_pnm, write_pnm
from .rng import Rng, stream
from .tensor import resize_bilinear_np

SHAPE_NAMES = ("disk", "square", "triangle", "cross", "ring")

# one base RGB per class; jitter and color_strength blend away from these
_PALETTE = np.array([
    [0.85, 0.30, 0.30],   # disk
    [0.30, 0.80, 0.35],   # square
    [0.30, 0.40, 0.90],   # triangle
    [0.90, 0.85, 0.30],   # cross
    [0.80, 0.35, 0.85],   # ring
])

_VAL_INDEX_OFFSET = 1_000_000


@dataclass
class GenConfig:
    canvas: int = 96
    classes: int = 5
    shapes_min: int = 1
    shapes_max: int = 3
    diameter_min: int = 24
    diameter_max: int = 48
    noise_cell: int = 16          # value-noise lattice spacing, pixels
    noise_lo: float = 0.15
    noise_hi: float = 0.60
    color_strength: float = 0.5   # 0 = fully random shape color, 1 = pure class color
    color_jitter: float = 0.10
    pixel_noise: float = 0.03
    sal_radius: int = 1           # max erosion/dilation radius on the saliency
    sal_flip: float = 0.006       # per-pixel flip probability
    sal_p_empty: float = 0.02     # chance of an all-zero saliency map
    allow_empty: bool = False     # permit images with no shapes at all
    seed: int = 42

    def validate(self) -> None:
        problems = []
        if self.canvas < self.diameter_max:
            problems.append(
                f"canvas {self.canvas} smaller than max shape diameter {self.diameter_max}"
            )
        if not 1 <= self.classes <= len(SHAPE_NAMES):
            problems.append(f"classes must be in 1..{len(SHAPE_NAMES)}, got {self.classes}")
        if self.shapes_min < 0 or self.shapes_max < self.shapes_min:
            problems.append(
                f"bad shapes range [{self.shapes_min}, {self.shapes_max}]"
            )
        if not 0 < self.diameter_min <= self.diameter_max:
            problems.append(
                f"bad diameter range [{self.diameter_min}, {self.diameter_max}]"
            )
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class Sample:
    image: np.ndarray      # [3,H,W] float64 in [0,1], on the 1/255 grid
    labels: np.ndarray     # [C] uint8, 1 iff the class has at least one pixel
    gt_mask: np.ndarray    # [H,W] uint8 in {0..C}, 0 = background
    saliency: np.ndarray   # [H,W] float64 in [0,1], on the 1/255 grid
    sample_id: str = ""


def class_names(n_classes: int) -> list[str]:
    return ["background"] + list(SHAPE_NAMES[:n_classes])


def _quantize(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def _render_shape(kind: str, yy: np.ndarray, xx: np.ndarray,
                  cy: float, cx: float, d: float) -> np.ndarray:
    r = d / 2.0
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy * dy + dx * dx <= r * r
    if kind == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "triangle":
        # upward isoceles: apex at cy-r, base at cy+r spanning the diameter
        t = (dy + r) / d
        return (t >= 0.0) & (t <= 1.0) & (np.abs(dx) <= t * r)
    if kind == "cross":
        arm = d / 6.0
        return ((np.abs(dy) <= r) & (np.abs(dx) <= arm)) | (
            (np.abs(dx) <= r) & (np.abs(dy) <= arm))
    if kind == "ring":
        rin = 0.55 * r
        dist = dy * dy + dx * dx
        return (dist <= r * r) & (dist >= rin * rin)
    raise ValueError(f"unknown shape kind {kind!r}")


def _value_noise(rng: Rng, size: int, cell: int, lo: float, hi: float) -> np.ndarray:
    nodes = size // cell + 2
    grid = rng.uniform_array(nodes * nodes, lo, hi).reshape(nodes, nodes)
    return resize_bilinear_np(grid, size, size)


def _shift(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    yd = slice(max(-dy, 0), min(h - dy, h))
    xd = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = mask[yd, xd]
    return out


def _morph(mask: np.ndarray, radius: int, dilate: bool) -> np.ndarray:
    if radius <= 0:
        return mask
    acc = mask.copy()
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = _shift(mask, dy, dx)
            acc = acc | shifted if dilate else acc & shifted
    return acc


def degrade_saliency(gt_mask: np.ndarray, cfg: GenConfig, rng: Rng) -> np.ndarray:
    """Noisy class-agnostic foreground map derived from the pixel mask.

    Starts from the union of all foreground pixels, randomly erodes or
    dilates the boundary by up to ``sal_radius``, flips individual pixels at
    rate ``sal_flip``, and with probability ``sal_p_empty`` returns an
    all-zero map instead.
    """
    if rng.uniform() < cfg.sal_p_empty:
        return np.zeros(gt_mask.shape, dtype=np.float64)
    fg = gt_mask > 0
    radius = rng.randint(0, cfg.sal_radius) if cfg.sal_radius > 0 else 0
    dilate = rng.uniform() < 0.5
    fg = _morph(fg, radius, dilate)
    if cfg.sal_flip > 0.0:
        flips = rng.bernoulli_mask(fg.shape, cfg.sal_flip)
        fg = fg ^ flips
    return _quantize(fg.astype(np.float64)) / 255.0


def gen_sample(seed: int, cfg: GenConfig) -> Sample:
    """Deterministically render one sample from (seed, cfg)."""
    cfg.validate()
    rng = Rng(seed)
    size = cfg.canvas
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    img = np.stack([
        _value_noise(rng, size, cfg.noise_cell, cfg.noise_lo, cfg.noise_hi)
        for _ in range(3)
    ])
    mask = np.zeros((size, size), dtype=np.uint8)

    lo = 0 if cfg.allow_empty else max(cfg.shapes_min, 1)
    n_shapes = rng.randint(lo, cfg.shapes_max)
    for _ in range(n_shapes):
        cls = rng.randint(1, cfg.classes)
        kind = SHAPE_NAMES[cls - 1]
        d = rng.randint(cfg.diameter_min, cfg.diameter_max)
        half = d // 2 + 1
        cy = rng.randint(half, size - half)
        cx = rng.randint(half, size - half)
        region = _render_shape(kind, yy, xx, float(cy), float(cx), float(d))
        base = _PALETTE[cls - 1]
        rand_rgb = np.array([rng.uniform(0.1, 0.9) for _ in range(3)])
        jitter = np.array([rng.uniform(-cfg.color_jitter, cfg.color_jitter)
                           for _ in range(3)])
        color = np.clip(cfg.color_strength * base
                        + (1.0 - cfg.color_strength) * rand_rgb + jitter, 0.0, 1.0)
        img[:, region] = color[:, None]
        mask[region] = cls

    if cfg.pixel_noise > 0.0:
        speckle = rng.uniform_array(img.size, -cfg.pixel_noise, cfg.pixel_noise)
        img = img + speckle.reshape(img.shape)

    img = _quantize(img).astype(np.float64) / 255.0
    labels = np.array([(mask == c + 1).any() for c in range(cfg.classes)],
                      dtype=np.uint8)
    saliency = degrade_saliency(mask, cfg, rng)
    return Sample(image=img, labels=labels, gt_mask=mask, saliency=saliency)


def build_dataset(cfg: GenConfig, n: int, val: bool = False) -> list[Sample]:
    """Generate n samples; the val split lives in a disjoint index space."""
    offset = _VAL_INDEX_OFFSET if val else 0
    samples = []
    for i in range(n):
        s = gen_sample(stream(cfg.seed, "sample", offset + i).u64(), cfg)
        s.sample_id = f"s{offset + i:07d}"
        samples.append(s)
    return samples


# -- disk format ----------------------------------------------------------------
#
# directory layout:
#   manifest.txt   key=value lines for every GenConfig field plus n_samples
#   labels.csv     header "sample_id,c0,...,c{C-1}", one row per sample
#   <id>.ppm       image, binary P6 maxval 255
#   <id>_mask.pgm  ground-truth class indices, binary P5
#   <id>_sal.pgm   saliency quantized to 0..255, binary P5


def write_dataset(samples: list[Sample], out_dir: str, cfg: GenConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        for fld in fields(GenConfig):
            f.write(f"{fld.name}={getattr(cfg, fld.name)}\n")
        f.write(f"n_samples={len(samples)}\n")
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id"] + [f"c{i}" for i in range(cfg.classes)])
        for s in samples:
            writer.writerow([s.sample_id] + [int(v) for v in s.labels])
    for s in samples:
        rgb = _quantize(s.image).transpose(1, 2, 0)
        write_pnm(os.path.join(out_dir, f"{s.sample_id}.ppm"), rgb)
        write_pnm(os.path.join(out_dir, f"{s.sample_id}_mask.pgm"), s.gt_mask)
        write_pnm(os.path.join(out_dir, f"{s.sample_id}_sal.pgm"),
                  _quantize(s.saliency))


def _parse_value(raw: str, target_type):
    if target_type is bool:
        return raw.lower() in ("true", "1", "yes")
    return target_type(raw)


def read_manifest(path: str) -> tuple[GenConfig, int]:
    cfg = GenConfig()
    n_samples = 0
    field_types = {f.name: type(getattr(cfg, f.name)) for f in fields(GenConfig)}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            if key == "n_samples":
                n_samples = int(raw)
            elif key in field_types:
                setattr(cfg, key, _parse_value(raw, field_types[key]))
    return cfg, n_samples


def read_dataset(in_dir: str) -> tuple[list[Sample], GenConfig]:
    """Load a dataset directory, validating labels against masks."""
    manifest = os.path.join(in_dir, "manifest.txt")
    if not os.path.exists(manifest):
        raise DatasetError(f"missing manifest: {manifest}")
    cfg, _ = read_manifest(manifest)
    labels_path = os.path.join(in_dir, "labels.csv")
    if not os.path.exists(labels_path):
        raise DatasetError(f"missing label index: {labels_path}")
    samples = []
    with open(labels_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        n_cls = len(header) - 1
        for row in reader:
            sid = row[0]
            labels = np.array([int(v) for v in row[1:]], dtype=np.uint8)
            rgb = read_pnm(os.path.join(in_dir, f"{sid}.ppm"))
            mask = read_pnm(os.path.join(in_dir, f"{sid}_mask.pgm"))
            sal = read_pnm(os.path.join(in_dir, f"{sid}_sal.pgm"))
            derived = np.array([(mask == c + 1).any() for c in range(n_cls)],
                               dtype=np.uint8)
            if not np.array_equal(derived, labels):
                raise DatasetError(
                    f"sample {sid}: labels.csv row {labels.tolist()} disagrees "
                    f"with mask-derived labels {derived.tolist()}"
                )
            samples.append(Sample(
                image=rgb.transpose(2, 0, 1).astype(np.float64) / 255.0,
                labels=labels,
                gt_mask=mask,
                saliency=sal.astype(np.float64) / 255.0,
                sample_id=sid,
            ))
    return samples, cfg
