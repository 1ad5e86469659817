"""Run configuration: defaults, validation, and key=value serialization.

A run manifest is a config file: every resolved field is written out as one
``key=value`` line (nested generator fields carry a ``gen.`` prefix), so
feeding ``manifest.txt`` back through ``--config`` reproduces the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .data import GenConfig
from .errors import ConfigError
from .model import NetworkConfig

MODES = ("baseline_cam", "sliding_window", "local_only", "l2g", "l2g_shape")

VERSION = "l2g 0.1.0"


@dataclass
class RunConfig:
    # data
    data_dir: str = ""            # train split on disk; empty = generate
    val_dir: str = ""             # val split on disk; empty = generate
    n_train: int = 1000
    n_val: int = 200
    gen: GenConfig = field(default_factory=GenConfig)
    # geometry
    global_size: int = 64
    local_size: int = 48
    n_local: int = 4
    sw_window: int = 48
    sw_stride: int = 8
    # model
    widths: tuple[int, ...] = (16, 32, 32)
    strides: tuple[int, ...] = (1, 2, 2)
    share_backbone: bool = False
    # optimizer
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epoch: int = 0       # 0 = constant learning rate
    lr_decay_factor: float = 0.1
    # losses
    lam: float = 10.0             # transfer loss weight
    tau: float = 0.1              # attention binarization threshold
    transfer_grad_to_local: bool = False
    global_cls_loss: bool = False
    # labels / inference
    bg_threshold: float = 0.3
    scales: tuple[float, ...] = (0.5, 1.0, 1.5)
    flip: bool = True
    multi_scale: bool = True
    # run
    mode: str = "l2g"
    epochs: int = 8
    seed: int = 42
    out_dir: str = "runs/out"

    def model_config(self) -> NetworkConfig:
        return NetworkConfig(widths=tuple(self.widths), strides=tuple(self.strides))

    def resolved(self) -> "RunConfig":
        """Copy with derived fields pinned (dataset seed follows the run seed)."""
        cfg = replace(self, gen=replace(self.gen, seed=self.seed))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        problems: list[str] = []
        try:
            self.gen.validate()
        except ConfigError as e:
            problems.append(str(e))
        try:
            self.model_config().validate()
        except ConfigError as e:
            problems.append(str(e))
        if self.mode not in MODES:
            problems.append(f"mode {self.mode!r} not one of {MODES}")
        if self.global_size > self.gen.canvas:
            problems.append(
                f"global view {self.global_size} exceeds canvas {self.gen.canvas}")
        if self.local_size > self.global_size:
            problems.append(
                f"local view {self.local_size} exceeds global view {self.global_size}")
        if self.n_local < 1:
            problems.append(f"n_local must be >= 1, got {self.n_local}")
        if self.sw_window > self.global_size:
            problems.append(
                f"sliding window {self.sw_window} exceeds global view {self.global_size}")
        if self.sw_stride < 1:
            problems.append(f"sw_stride must be >= 1, got {self.sw_stride}")
        stride = self.model_config().feature_stride
        for name, size in (("global_size", self.global_size),
                           ("local_size", self.local_size),
                           ("sw_window", self.sw_window),
                           ("canvas", self.gen.canvas)):
            if size % stride:
                problems.append(
                    f"{name} {size} not divisible by feature stride {stride}")
        if not 0.0 < self.tau < 1.0:
            problems.append(f"tau must be in (0,1), got {self.tau}")
        if not 0.0 < self.bg_threshold < 1.0:
            problems.append(
                f"bg_threshold must be in (0,1), got {self.bg_threshold}")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if self.n_train < 1 and not self.data_dir:
            problems.append(f"n_train must be >= 1, got {self.n_train}")
        if self.lr <= 0:
            problems.append(f"lr must be positive, got {self.lr}")
        if not self.scales:
            problems.append("scales must not be empty")
        if self.lam < 0:
            problems.append(f"lambda must be >= 0, got {self.lam}")
        if problems:
            raise ConfigError("invalid config: " + "; ".join(problems))


def _format_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def to_manifest(cfg: RunConfig) -> dict[str, str]:
    out: dict[str, str] = {"version": VERSION}
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if f.name == "gen":
            for gf in fields(GenConfig):
                out[f"gen.{gf.name}"] = _format_value(getattr(v, gf.name))
        else:
            out[f.name] = _format_value(v)
    return out


def write_manifest(path: str, cfg: RunConfig) -> None:
    with open(path, "w") as f:
        for k, v in to_manifest(cfg).items():
            f.write(f"{k}={v}\n")


def _parse_typed(raw: str, example):
    if isinstance(example, bool):
        return raw.lower() in ("true", "1", "yes")
    if isinstance(example, int):
        return int(raw)
    if isinstance(example, float):
        return float(raw)
    if isinstance(example, tuple):
        elem = example[0] if example else 1.0
        return tuple(type(elem)(x) for x in raw.split(",") if x)
    return raw


def apply_kv(cfg: RunConfig, key: str, raw: str) -> None:
    if key == "version":
        return
    if key.startswith("gen."):
        target, name = cfg.gen, key[4:]
    else:
        target, name = cfg, key
    if not hasattr(target, name):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, _parse_typed(raw, getattr(target, name)))


def load_config_file(path: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            apply_kv(cfg, key.strip(), raw.strip())
    return cfg
