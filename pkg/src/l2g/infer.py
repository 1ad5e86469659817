"""Inference: attention maps and pseudo labels from a trained checkpoint.

Every sample is evaluated on its deterministic centered global view, so all
run modes produce labels on the same grid and against the same ground-truth
windows. Transfer-mode checkpoints use the global network's foreground
channels; classifier checkpoints use their single network, either with the
scale/flip-fused attention path or, for the sliding-window mode, with
per-window attention aggregated by pixelwise maximum.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, fields

import numpy as np

from .attention import (AttentionMaps, aggregate_windows, cam, export_attention,
                        multi_scale_attention, normalize_and_gate,
                        write_attention_index)
from .config import RunConfig, apply_kv
from .data import Sample, class_names, read_dataset
from .errors import ConfigError
from .labels import IoUReport, confusion_matrix, miou, pseudo_labels, write_eval_csv
from .model import (Network, build_network, forward_features, load_checkpoint,
                    restore_params)
from .pnm import read_pnm, write_pnm
from .tensor import Tensor, no_grad, resize_bilinear_np
from .views import Rect, center_rect, crop_map, sliding_window_rects

_CLS_MODES = ("baseline_cam", "sliding_window", "local_only")


@dataclass
class InferResult:
    sample_ids: list[str]
    pred_labels: list[np.ndarray]
    gt_labels: list[np.ndarray]
    attentions: list[AttentionMaps]
    view_rect: Rect


def config_from_manifest(manifest: dict[str, str]) -> RunConfig:
    cfg = RunConfig()
    for key, value in manifest.items():
        apply_kv(cfg, key, value)
    return cfg


def nets_from_checkpoint(path: str) -> tuple[RunConfig, dict[str, Network]]:
    manifest, params = load_checkpoint(path)
    cfg = config_from_manifest(manifest)
    mcfg = cfg.model_config()
    n_cls = cfg.gen.classes
    if cfg.mode in ("l2g", "l2g_shape"):
        nets = {"local": build_network(mcfg, n_cls, _zero_rng()),
                "global": build_network(mcfg, n_cls + 1, _zero_rng())}
    else:
        nets = {"net": build_network(mcfg, n_cls, _zero_rng())}
    for name, net in nets.items():
        restore_params(net, params, name)
    return cfg, nets


def _zero_rng():
    from .rng import Rng
    return Rng(0)


def check_mode_compat(ckpt_mode: str, infer_mode: str) -> None:
    """Inference paths are tied to the head width the checkpoint trained."""
    cls_family = set(_CLS_MODES)
    if (ckpt_mode in cls_family) != (infer_mode in cls_family):
        raise ConfigError(
            f"checkpoint trained in mode {ckpt_mode!r} cannot serve "
            f"{infer_mode!r} inference"
        )


def _sliding_window_attention(net: Network, image: np.ndarray,
                              labels: np.ndarray, window: int,
                              stride: int) -> AttentionMaps:
    g = image.shape[-1]
    rects = sliding_window_rects(g, window, stride)
    per_window = []
    with no_grad():
        for rect in rects:
            win = crop_map(image, rect)
            feats = forward_features(net, Tensor(win[None])).data[0]
            up = resize_bilinear_np(np.maximum(feats[:len(labels)], 0.0),
                                    rect.h, rect.w)
            maps = normalize_and_gate(up, labels)
            per_window.append(AttentionMaps(maps=maps,
                                            labels=np.asarray(labels, np.uint8)))
    return aggregate_windows(per_window, rects, g)


def attention_for_sample(nets: dict[str, Network], cfg: RunConfig,
                         image: np.ndarray, labels: np.ndarray,
                         mode: str | None = None) -> AttentionMaps:
    mode = mode or cfg.mode
    if mode == "sliding_window":
        return _sliding_window_attention(nets["net"], image, labels,
                                         cfg.sw_window, cfg.sw_stride)
    net = nets["global"] if mode in ("l2g", "l2g_shape") else nets["net"]
    scales = tuple(cfg.scales) if cfg.multi_scale else (1.0,)
    flip = cfg.flip if cfg.multi_scale else False
    return multi_scale_attention(net, image, scales, flip, labels)


def infer_samples(nets: dict[str, Network], cfg: RunConfig,
                  samples: list[Sample], mode: str | None = None,
                  collect_attention: bool = False) -> InferResult:
    mode = mode or cfg.mode
    rect = center_rect(cfg.gen.canvas, cfg.global_size)
    ids, preds, gts, atts = [], [], [], []
    for sample in samples:
        image = crop_map(sample.image, rect)
        att = attention_for_sample(nets, cfg, image, sample.labels, mode)
        preds.append(pseudo_labels(att, cfg.bg_threshold))
        gts.append(crop_map(sample.gt_mask, rect))
        ids.append(sample.sample_id)
        if collect_attention:
            atts.append(att)
    return InferResult(sample_ids=ids, pred_labels=preds, gt_labels=gts,
                       attentions=atts, view_rect=rect)


def evaluate(result: InferResult, n_classes: int) -> IoUReport:
    cm = confusion_matrix(result.pred_labels, result.gt_labels, n_classes + 1)
    return miou(cm)


def infer(checkpoint: str, data_dir: str, out_dir: str,
          mode: str | None = None, multi_scale: bool | None = None,
          raw_attention: bool = False, figures: bool = True) -> InferResult:
    """CLI entry: run inference over a dataset directory and write artifacts.

    Writes ``labels/<id>.pgm`` (class indices as pixel values),
    ``attention/`` PGMs with an ``index.csv``, and a small preview figure.
    """
    cfg, nets = nets_from_checkpoint(checkpoint)
    if mode is not None:
        check_mode_compat(cfg.mode, mode)
    else:
        mode = cfg.mode
    if multi_scale is not None:
        cfg.multi_scale = multi_scale
    samples, _ = read_dataset(data_dir)
    result = infer_samples(nets, cfg, samples, mode=mode, collect_attention=True)

    labels_dir = os.path.join(out_dir, "labels")
    att_dir = os.path.join(out_dir, "attention")
    os.makedirs(labels_dir, exist_ok=True)
    index_rows: list = []
    for sid, pred, att in zip(result.sample_ids, result.pred_labels,
                              result.attentions):
        write_pnm(os.path.join(labels_dir, f"{sid}.pgm"), pred)
        export_attention(att_dir, sid, att, index_rows, raw=raw_attention)
    write_attention_index(att_dir, index_rows)

    if figures:
        from .report import render_sample_panel
        rect = result.view_rect
        panel = []
        for sample, pred, att in list(zip(samples, result.pred_labels,
                                          result.attentions))[:6]:
            panel.append((crop_map(sample.image, rect), att.maps,
                          pred, crop_map(sample.gt_mask, rect)))
        render_sample_panel(panel, os.path.join(out_dir, "preview.png"))
    return result


def eval_labels_dir(labels_dir: str, data_dir: str, out_dir: str,
                    figures: bool = True) -> IoUReport:
    """Score a directory of pseudo-label PGMs against dataset ground truth."""
    samples, gen_cfg = read_dataset(data_dir)
    preds, gts = [], []
    rect = None
    for sample in samples:
        path = os.path.join(labels_dir, f"{sample.sample_id}.pgm")
        pred = read_pnm(path)
        if rect is None:
            rect = center_rect(gen_cfg.canvas, pred.shape[0])
        preds.append(pred)
        gts.append(crop_map(sample.gt_mask, rect))
    cm = confusion_matrix(preds, gts, gen_cfg.classes + 1)
    report = miou(cm)
    os.makedirs(out_dir, exist_ok=True)
    names = class_names(gen_cfg.classes)
    write_eval_csv(os.path.join(out_dir, "eval.csv"), report, names)
    if figures:
        from .report import render_iou_bars
        render_iou_bars(report, names, os.path.join(out_dir, "eval.png"))
    return report
