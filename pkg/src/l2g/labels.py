"""Pseudo segmentation labels from attention maps, and mIoU scoring.

A pixel's label is the argmax over [background threshold, A^1 .. A^C] with
the constant threshold occupying slot 0, so ties resolve toward background
first and then toward the lowest class index. IoU uses an integer confusion
matrix accumulated over samples; classes whose union is zero across the
whole set are excluded from the mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attention import AttentionMaps
from .errors import ShapeError


def pseudo_labels(att: AttentionMaps, bg_threshold: float) -> np.ndarray:
    """Per-pixel class indices in {0..C}, 0 = background."""
    if not 0.0 < bg_threshold < 1.0:
        raise ValueError(f"background threshold must be in (0,1), got {bg_threshold}")
    c, h, w = att.maps.shape
    scores = np.concatenate(
        [np.full((1, h, w), bg_threshold), att.maps], axis=0)
    return scores.argmax(axis=0).astype(np.uint8)


def confusion_matrix(preds, gts, n_classes: int) -> np.ndarray:
    """Accumulated [n,n] counts; entry (i,j) is pixels with gt=i, pred=j."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for k, (pred, gt) in enumerate(zip(preds, gts)):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(
                f"sample {k}: prediction {pred.shape} vs ground truth {gt.shape}"
            )
        idx = gt.astype(np.int64).ravel() * n_classes + pred.astype(np.int64).ravel()
        cm += np.bincount(idx, minlength=n_classes * n_classes).reshape(
            n_classes, n_classes)
    return cm


@dataclass
class IoUReport:
    intersection: np.ndarray   # [n] int64
    union: np.ndarray          # [n] int64
    iou: np.ndarray            # [n] float64, 0 where union is 0
    present: np.ndarray        # [n] bool, union > 0
    miou: float                # mean IoU over present classes
    pixels: int


def miou(cm: np.ndarray) -> IoUReport:
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {cm.shape}")
    inter = np.diag(cm).copy()
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    present = union > 0
    iou = np.zeros(len(inter))
    iou[present] = inter[present] / union[present]
    mean = float(iou[present].mean()) if present.any() else 0.0
    return IoUReport(intersection=inter, union=union, iou=iou,
                     present=present, miou=mean, pixels=int(cm.sum()))


def write_eval_csv(path: str, report: IoUReport, names: list[str]) -> None:
    """One row per class (name, intersection, union, IoU) plus a mean row."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "intersection", "union", "iou"])
        for i, name in enumerate(names):
            writer.writerow([name, int(report.intersection[i]),
                             int(report.union[i]), repr(float(report.iou[i]))])
        writer.writerow(["mean", "", "", repr(report.miou)])
