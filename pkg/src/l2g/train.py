"""Training loops for the five run modes.

``baseline_cam`` (and ``sliding_window``, which differs only at inference)
trains one classifier on random global views; ``local_only`` trains one
classifier on the random local views. The transfer modes train two
networks jointly in a single backward pass per step: the local network
receives only the classification loss, the global network receives only the
weighted transfer loss (its gradients are disjoint because transfer targets
are detached). With a transfer weight of zero the global network is left
untouched entirely — no optimizer step, so weight decay cannot drift it.

When the ``global_cls_loss`` ablation flag is set, a classification loss on
the global network's foreground channels joins the optimized objective; the
loss report still records the standard cls + weight * kt decomposition.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .attention import local_attention_targets
from .config import RunConfig, to_manifest, write_manifest
from .data import Sample, build_dataset, read_dataset
from .errors import NumericError
from .losses import (LossReport, attention_transfer_loss, classification_loss,
                     global_softmax, shape_transfer_loss, total_loss)
from .model import (Network, build_network, forward_features, save_checkpoint,
                    share_backbone)
from .optim import OptimState, make_sgd, sgd_step, zero_grads
from .rng import stream
from .tensor import (Tensor, backward, bilinear_resize, global_avg_pool,
                     normalize_max, relu, take_channels)
from .views import build_viewset, crop_map, sample_global_view


@dataclass
class RunArtifacts:
    out_dir: str
    checkpoint: str
    losses_csv: str
    manifest: str
    reports: list[LossReport]
    nets: dict[str, Network]
    cfg: RunConfig


def load_or_generate(cfg: RunConfig, val: bool = False) -> list[Sample]:
    path = cfg.val_dir if val else cfg.data_dir
    if path:
        samples, _ = read_dataset(path)
        return samples
    n = cfg.n_val if val else cfg.n_train
    return build_dataset(cfg.gen, n, val=val)


def _build_nets(cfg: RunConfig) -> dict[str, Network]:
    mcfg = cfg.model_config()
    n_cls = cfg.gen.classes
    if cfg.mode in ("l2g", "l2g_shape"):
        local = build_network(mcfg, n_cls, stream(cfg.seed, "init-local"))
        glob = build_network(mcfg, n_cls + 1, stream(cfg.seed, "init-global"))
        if cfg.share_backbone:
            share_backbone(local, glob)
        return {"local": local, "global": glob}
    net = build_network(mcfg, n_cls, stream(cfg.seed, "init-local"))
    return {"net": net}


def _cls_only_step(cfg: RunConfig, net: Network, sample: Sample, rng) -> tuple:
    if cfg.mode == "local_only":
        vs = build_viewset(sample, cfg.global_size, cfg.local_size,
                           cfg.n_local, rng)
        batch = vs.local_views
    else:
        gv, _ = sample_global_view(sample, cfg.global_size, rng)
        batch = gv[None]
    feats = forward_features(net, Tensor(batch))
    l_cls = classification_loss(global_avg_pool(feats), sample.labels)
    backward(l_cls)
    return l_cls, None, [], 0


def _transfer_step(cfg: RunConfig, local: Network, glob: Network,
                   sample: Sample, rng) -> tuple:
    n_cls = cfg.gen.classes
    vs = build_viewset(sample, cfg.global_size, cfg.local_size, cfg.n_local, rng)
    feats_l = forward_features(local, Tensor(vs.local_views))
    l_cls = classification_loss(global_avg_pool(feats_l), sample.labels)

    if cfg.transfer_grad_to_local:
        up = bilinear_resize(relu(feats_l), cfg.local_size, cfg.local_size)
        targets = normalize_max(up, gate=sample.labels.astype(np.float64))
        target_views = _split_views(targets, cfg.n_local)
    else:
        arr = local_attention_targets(feats_l.data, sample.labels, cfg.local_size)
        target_views = [arr[i] for i in range(cfg.n_local)]

    feats_g = forward_features(glob, Tensor(vs.global_view[None]))
    probs = global_softmax(feats_g, cfg.global_size, channels=n_cls + 1)

    if cfg.mode == "l2g_shape":
        sal = crop_map(sample.saliency, vs.global_rect)
        l_kt, per_view, fallbacks = shape_transfer_loss(
            target_views, sal, probs, vs.local_rects, cfg.tau)
    else:
        l_kt, per_view = attention_transfer_loss(
            target_views, probs, vs.local_rects)
        fallbacks = 0

    objective = total_loss(l_cls, l_kt, cfg.lam)
    if cfg.global_cls_loss:
        g_logits = global_avg_pool(take_channels(feats_g, 0, n_cls))
        objective = objective + classification_loss(g_logits, sample.labels)
    backward(objective)
    return l_cls, l_kt, per_view, fallbacks


def _split_views(targets: Tensor, n: int) -> list[Tensor]:
    from .tensor import reshape
    c, h, w = targets.shape[1], targets.shape[2], targets.shape[3]
    flat = reshape(targets, (n * c, h, w))
    return [take_channels(flat, i * c, (i + 1) * c) for i in range(n)]


def _set_lr(optims: list[OptimState], cfg: RunConfig, epoch: int) -> None:
    lr = cfg.lr
    if cfg.lr_decay_epoch and epoch + 1 >= cfg.lr_decay_epoch:
        lr *= cfg.lr_decay_factor
    for opt in optims:
        opt.lr = lr


def train(cfg: RunConfig, samples: list[Sample] | None = None,
          figures: bool = True) -> RunArtifacts:
    cfg = cfg.resolved()
    os.makedirs(cfg.out_dir, exist_ok=True)
    manifest_path = os.path.join(cfg.out_dir, "manifest.txt")
    write_manifest(manifest_path, cfg)
    if samples is None:
        samples = load_or_generate(cfg)

    nets = _build_nets(cfg)
    if "local" in nets:
        local_params = nets["local"].param_list()
        local_ids = {id(p) for p in local_params}
        global_params = [p for p in nets["global"].param_list()
                         if id(p) not in local_ids]
        opt_local = make_sgd(local_params, cfg.lr, cfg.momentum, cfg.weight_decay)
        opt_global = make_sgd(global_params, cfg.lr, cfg.momentum, cfg.weight_decay)
        optims = [opt_local, opt_global]
    else:
        params = nets["net"].param_list()
        opt = make_sgd(params, cfg.lr, cfg.momentum, cfg.weight_decay)
        optims = [opt]

    rng_order = stream(cfg.seed, "order")
    rng_views = stream(cfg.seed, "views")
    reports: list[LossReport] = []
    step = 0
    for epoch in range(cfg.epochs):
        _set_lr(optims, cfg, epoch)
        order = list(range(len(samples)))
        rng_order.shuffle(order)
        for idx in order:
            sample = samples[idx]
            try:
                if "local" in nets:
                    l_cls, l_kt, per_view, fallbacks = _transfer_step(
                        cfg, nets["local"], nets["global"], sample, rng_views)
                else:
                    l_cls, l_kt, per_view, fallbacks = _cls_only_step(
                        cfg, nets["net"], sample, rng_views)
            except NumericError as e:
                last = reports[-1] if reports else None
                raise NumericError(
                    f"training aborted at step {step}: {e}; last report: {last}"
                ) from e
            kt_val = l_kt.item() if l_kt is not None else 0.0
            report = LossReport(
                step=step,
                l_cls=l_cls.item(),
                l_kt=kt_val,
                weight=cfg.lam,
                total=l_cls.item() + cfg.lam * kt_val,
                per_view=per_view,
                fallback_count=fallbacks,
            )
            if not np.isfinite(report.total):
                raise NumericError(
                    f"training aborted at step {step}: non-finite loss; {report}")
            reports.append(report)
            if "local" in nets:
                sgd_step(local_params, [p.grad for p in local_params], optims[0])
                if cfg.lam != 0.0 or cfg.global_cls_loss:
                    sgd_step(global_params, [p.grad for p in global_params],
                             optims[1])
                zero_grads(local_params)
                zero_grads(global_params)
            else:
                sgd_step(params, [p.grad for p in params], optims[0])
                zero_grads(params)
            step += 1

    losses_csv = os.path.join(cfg.out_dir, "losses.csv")
    with open(losses_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LossReport.CSV_HEADER)
        for r in reports:
            writer.writerow(r.csv_row())

    ckpt = os.path.join(cfg.out_dir, "checkpoint.l2g")
    save_checkpoint(ckpt, nets, to_manifest(cfg))

    if figures:
        from .report import render_loss_curves
        render_loss_curves(reports, os.path.join(cfg.out_dir, "losses.png"))

    return RunArtifacts(out_dir=cfg.out_dir, checkpoint=ckpt,
                        losses_csv=losses_csv, manifest=manifest_path,
                        reports=reports, nets=nets, cfg=cfg)
