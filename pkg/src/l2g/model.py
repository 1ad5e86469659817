"""Plain convolutional classifiers for the local and global branches.

Both networks share one architecture: three 3x3 conv blocks with ReLU
(default widths 16/32/32, strides 1/2/2, so the feature stride is 4)
followed by a 1x1 head conv whose channel count is the class count for the
local network and class count + 1 for the global one. The classification
logit vector is the global average pool of the head output. Kernels are
initialized uniformly at +-1/sqrt(fan_in); biases start at zero.

Checkpoint file layout ("L2G1"): a UTF-8 manifest of key=value lines, a
blank line, then for each parameter a u32 name length, the UTF-8 name, and
the tensor in the L2GT dump format. Parameter names are stable
("<net>.block<i>.w" etc.), so checkpoints are interchangeable between runs
with the same configuration. Values pass through float32 on disk.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import Rng
from .tensor import Tensor, conv2d, global_avg_pool, read_l2gt, relu, reshape, write_l2gt


@dataclass
class NetworkConfig:
    widths: tuple[int, ...] = (16, 32, 32)
    strides: tuple[int, ...] = (1, 2, 2)
    in_channels: int = 3

    @property
    def feature_stride(self) -> int:
        s = 1
        for v in self.strides:
            s *= v
        return s

    def validate(self) -> None:
        problems = []
        if len(self.widths) != len(self.strides):
            problems.append(
                f"widths {self.widths} and strides {self.strides} differ in length"
            )
        if any(w < 1 for w in self.widths):
            problems.append(f"non-positive width in {self.widths}")
        if any(s < 1 for s in self.strides):
            problems.append(f"non-positive stride in {self.strides}")
        if problems:
            raise ConfigError("; ".join(problems))


class Network:
    """Parameter set plus forward graph builder for one classifier."""

    def __init__(self, cfg: NetworkConfig, head_channels: int):
        self.cfg = cfg
        self.head_channels = head_channels
        self.params: dict[str, Tensor] = {}

    @property
    def feature_stride(self) -> int:
        return self.cfg.feature_stride

    @property
    def backbone_names(self) -> list[str]:
        return [n for n in self.params if not n.startswith("head.")]

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())


def _uniform_init(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    n = int(np.prod(shape))
    return rng.uniform_array(n, -bound, bound).reshape(shape)


def build_network(cfg: NetworkConfig, head_channels: int, rng: Rng) -> Network:
    cfg.validate()
    net = Network(cfg, head_channels)
    cin = cfg.in_channels
    for i, (width, _) in enumerate(zip(cfg.widths, cfg.strides)):
        fan_in = cin * 3 * 3
        net.params[f"block{i}.w"] = Tensor(
            _uniform_init(rng, (width, cin, 3, 3), fan_in), requires_grad=True)
        net.params[f"block{i}.b"] = Tensor(
            np.zeros((width, 1, 1)), requires_grad=True)
        cin = width
    net.params["head.w"] = Tensor(
        _uniform_init(rng, (head_channels, cin, 1, 1), cin), requires_grad=True)
    net.params["head.b"] = Tensor(
        np.zeros((head_channels, 1, 1)), requires_grad=True)
    return net


def share_backbone(local: Network, glob: Network) -> None:
    """Alias the global network's backbone tensors to the local network's.

    Heads stay separate. Requires identical backbone configurations.
    """
    if local.cfg != glob.cfg:
        raise ConfigError(
            f"cannot share backbones across configs {local.cfg} vs {glob.cfg}"
        )
    for name in local.backbone_names:
        glob.params[name] = local.params[name]


def forward_features(net: Network, x: Tensor) -> Tensor:
    """Last-layer feature map [B, head_channels, H/stride, W/stride]."""
    if x.ndim != 4:
        raise ShapeError(f"expected [B,3,H,W] batch, got {x.shape}")
    stride = net.feature_stride
    h, w = x.shape[2], x.shape[3]
    if h % stride or w % stride:
        raise ShapeError(
            f"input {h}x{w} not divisible by feature stride {stride}"
        )
    out = x
    for i, s in enumerate(net.cfg.strides):
        out = conv2d(out, net.params[f"block{i}.w"], stride=s, pad=1)
        out = out + reshape(net.params[f"block{i}.b"], (1, -1, 1, 1))
        out = relu(out)
    out = conv2d(out, net.params["head.w"], stride=1, pad=0)
    out = out + reshape(net.params["head.b"], (1, -1, 1, 1))
    return out


def forward_logits(net: Network, x: Tensor) -> Tensor:
    """Classification logits: spatial mean of the feature map, [B, heads]."""
    return global_avg_pool(forward_features(net, x))


# -- checkpoints -----------------------------------------------------------------

_CKPT_MAGIC = b"L2G1\n"


def save_checkpoint(path: str, nets: dict[str, Network], manifest: dict[str, str]) -> None:
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        for k, v in manifest.items():
            f.write(f"{k}={v}\n".encode("utf-8"))
        f.write(b"\n")
        for net_name, net in nets.items():
            for pname, tensor in net.params.items():
                full = f"{net_name}.{pname}".encode("utf-8")
                f.write(struct.pack("<I", len(full)))
                f.write(full)
                write_l2gt(f, tensor.data)


def load_checkpoint(path: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    manifest: dict[str, str] = {}
    params: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise IOError(f"{path}: not a checkpoint file")
        while True:
            line = b""
            while not line.endswith(b"\n"):
                c = f.read(1)
                if not c:
                    raise IOError(f"{path}: truncated manifest")
                line += c
            line = line.decode("utf-8").strip()
            if not line:
                break
            key, _, value = line.partition("=")
            manifest[key] = value
        while True:
            raw = f.read(4)
            if not raw:
                break
            (n,) = struct.unpack("<I", raw)
            name = f.read(n).decode("utf-8")
            params[name] = read_l2gt(f)
    return manifest, params


def restore_params(net: Network, params: dict[str, np.ndarray], prefix: str) -> None:
    for pname, tensor in net.params.items():
        key = f"{prefix}.{pname}"
        if key not in params:
            raise IOError(f"checkpoint is missing parameter {key}")
        if params[key].shape != tensor.data.shape:
            raise ShapeError(
                f"checkpoint param {key} has shape {params[key].shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = params[key]
