"""Command-line interface.

Subcommands: gen-data, train, infer, eval, ablate, grad-check. Train-style
commands resolve their configuration as defaults < --config file < explicit
flags; every run writes a manifest.txt that can be fed back via --config.
"""

from __future__ import annotations

import argparse
import sys

from .config import MODES, RunConfig, load_config_file


def _add_config_flags(p: argparse.ArgumentParser, with_mode: bool = True) -> None:
    p.add_argument("--config", help="key=value config file applied before flags")
    p.add_argument("--out-dir", help="output directory for all artifacts")
    p.add_argument("--data-dir", help="train-split dataset directory")
    p.add_argument("--val-dir", help="val-split dataset directory")
    if with_mode:
        p.add_argument("--mode", choices=MODES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float,
                   help="transfer loss weight")
    p.add_argument("--n-local", type=int, help="local views per step")
    p.add_argument("--local-size", type=int)
    p.add_argument("--global-size", type=int)
    p.add_argument("--tau", type=float, help="attention binarization threshold")
    p.add_argument("--bg-threshold", type=float,
                   help="background slot value for pseudo labels")
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--lr-decay-epoch", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--canvas", type=int, help="generated image size")
    p.add_argument("--classes", type=int, help="number of shape classes")
    p.add_argument("--sw-window", type=int)
    p.add_argument("--sw-stride", type=int)
    p.add_argument("--scales", help="comma-separated attention test scales")
    p.add_argument("--no-flip", action="store_true",
                   help="disable the horizontal-flip attention pass")
    p.add_argument("--single-scale", action="store_true",
                   help="disable multi-scale attention at inference")
    p.add_argument("--share-backbone", action="store_true")
    p.add_argument("--global-cls-loss", action="store_true",
                   help="also apply the classification loss to the global network")
    p.add_argument("--no-figures", action="store_true")


_FLAG_TO_KEY = {
    "out_dir": "out_dir", "data_dir": "data_dir", "val_dir": "val_dir",
    "mode": "mode", "epochs": "epochs", "seed": "seed", "lam": "lam",
    "n_local": "n_local", "local_size": "local_size",
    "global_size": "global_size", "tau": "tau",
    "bg_threshold": "bg_threshold", "lr": "lr", "momentum": "momentum",
    "weight_decay": "weight_decay", "lr_decay_epoch": "lr_decay_epoch",
    "n_train": "n_train", "n_val": "n_val", "canvas": "gen.canvas",
    "classes": "gen.classes", "sw_window": "sw_window",
    "sw_stride": "sw_stride", "scales": "scales",
}


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config_file(args.config, cfg)
    from .config import apply_kv
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            apply_kv(cfg, key, str(value))
    if getattr(args, "no_flip", False):
        cfg.flip = False
    if getattr(args, "single_scale", False):
        cfg.multi_scale = False
    if getattr(args, "share_backbone", False):
        cfg.share_backbone = True
    if getattr(args, "global_cls_loss", False):
        cfg.global_cls_loss = True
    return cfg


def _cmd_gen_data(args) -> int:
    from .data import GenConfig, build_dataset, write_dataset

    cfg = GenConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.canvas is not None:
        cfg.canvas = args.canvas
    if args.classes is not None:
        cfg.classes = args.classes
    cfg.validate()
    samples = build_dataset(cfg, args.n, val=(args.split == "val"))
    write_dataset(samples, args.out_dir, cfg)
    print(f"wrote {len(samples)} samples to {args.out_dir}")
    return 0


def _cmd_train(args) -> int:
    from .train import train

    cfg = _resolve_config(args)
    art = train(cfg, figures=not args.no_figures)
    last = art.reports[-1]
    print(f"trained {cfg.mode} for {cfg.epochs} epochs "
          f"({len(art.reports)} steps); final L={last.total:.4f}")
    print(f"checkpoint: {art.checkpoint}")
    return 0


def _cmd_infer(args) -> int:
    from .infer import infer

    multi_scale = None
    if args.single_scale:
        multi_scale = False
    result = infer(args.checkpoint, args.data_dir, args.out_dir,
                   mode=args.as_mode, multi_scale=multi_scale,
                   raw_attention=args.raw_attention,
                   figures=not args.no_figures)
    print(f"wrote labels and attention for {len(result.sample_ids)} samples "
          f"to {args.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    from .infer import eval_labels_dir

    report = eval_labels_dir(args.labels_dir, args.data_dir, args.out_dir,
                             figures=not args.no_figures)
    print(f"mIoU: {100.0 * report.miou:.2f}% over {report.pixels} pixels")
    return 0


def _cmd_ablate(args) -> int:
    from .ablation import run_ablation

    cfg = _resolve_config(args)
    report = run_ablation(cfg, figures=not args.no_figures)
    for row in report.rows:
        if row.ok:
            print(f"{row.arm:<14s} train {row.miou_train:6.2f}  "
                  f"val {row.miou_val:6.2f}")
        else:
            print(f"{row.arm:<14s} FAILED: {row.error}")
    print(f"comparison CSV: {report.csv_path}")
    return 0 if report.passed else 1


def _cmd_grad_check(args) -> int:
    from .gradcheck import format_report, run_grad_check

    report = run_grad_check()
    print(format_report(report))
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="l2g",
        description="local-to-global attention transfer on synthetic shapes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--canvas", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--split", choices=("train", "val"), default="train")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train one mode")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="attention + pseudo labels from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--as-mode", choices=MODES,
                   help="override the inference path (e.g. sliding_window "
                        "on a baseline checkpoint)")
    p.add_argument("--single-scale", action="store_true")
    p.add_argument("--raw-attention", action="store_true",
                   help="also dump exact float maps in the L2GT format")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("eval", help="score pseudo labels against ground truth")
    p.add_argument("--labels-dir", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the five-arm comparison suite")
    _add_config_flags(p, with_mode=False)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.set_defaults(fn=_cmd_grad_check)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
