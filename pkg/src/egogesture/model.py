"""Dual-head network: VGG-style features feeding a finger-probability head
and a fully convolutional ensemble-position head.

Input images are NHWC with pixel values scaled to [0, 1].
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from torch import nn

from .core import ConfigError, InputError, N_FINGERS

VGG16_BLOCKS = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
HEADS = ("ensemble", "ensemble_gap", "fc")


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 128
    blocks: tuple = VGG16_BLOCKS
    # Pool after each block; None means after every block.
    pools: Optional[tuple] = None
    fc_width: int = 1024
    dropout_rate: float = 0.5
    n_fingers: int = N_FINGERS
    upsample_factor: int = 3
    upsample_size: Optional[int] = None
    upsample_mode: str = "nearest"
    reg_kernel: int = 3
    head: str = "ensemble"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(int(v) for v in b) for b in self.blocks))
        if self.pools is not None:
            object.__setattr__(self, "pools", tuple(bool(p) for p in self.pools))

    @classmethod
    def shrunken(cls, input_size: int = 32, divisor: int = 8, **overrides) -> "NetworkConfig":
        """Same topology with channel widths divided by ``divisor``.

        Pooling is dropped from the leading blocks so the feature map still ends at 4x4.
        """
        n_pools = int(round(math.log2(input_size / 4)))
        blocks = tuple((n, max(1, c // divisor)) for n, c in VGG16_BLOCKS)
        pools = tuple(i >= len(blocks) - n_pools for i in range(len(blocks)))
        kw = dict(input_size=input_size, blocks=blocks, pools=pools, fc_width=1024 // divisor)
        kw.update(overrides)
        return cls(**kw)

    @property
    def pool_flags(self) -> tuple:
        return self.pools if self.pools is not None else (True,) * len(self.blocks)

    @property
    def feature_side(self) -> int:
        return self.input_size // (2 ** sum(self.pool_flags))

    @property
    def feature_channels(self) -> int:
        return self.blocks[-1][1]

    @property
    def flatten_width(self) -> int:
        return self.feature_side ** 2 * self.feature_channels

    @property
    def upsampled_side(self) -> int:
        if self.upsample_size is not None:
            return self.upsample_size
        return self.feature_side * self.upsample_factor

    @property
    def ensemble_side(self) -> int:
        return 2 * self.n_fingers

    def validate(self) -> None:
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.upsample_mode not in ("nearest", "bilinear"):
            raise ConfigError(f"upsample_mode must be nearest or bilinear, got {self.upsample_mode!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if len(self.pool_flags) != len(self.blocks):
            raise ConfigError("pools must have one flag per block")
        n_pools = sum(self.pool_flags)
        if self.input_size <= 0 or self.input_size % (2 ** n_pools):
            raise ConfigError(
                f"input_size {self.input_size} is not divisible by 2**{n_pools} (one halving per pool)")
        side = self.upsampled_side - self.reg_kernel + 1
        if side != self.ensemble_side:
            raise ConfigError(
                f"upsampled side - kernel + 1 must equal 2N: "
                f"{self.upsampled_side} - {self.reg_kernel} + 1 = {side} != {self.ensemble_side}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["blocks"] = [list(b) for b in self.blocks]
        d["pools"] = None if self.pools is None else list(self.pools)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["blocks"] = tuple(tuple(b) for b in d["blocks"])
        if d.get("pools") is not None:
            d["pools"] = tuple(d["pools"])
        return cls(**d)


def _features(config: NetworkConfig) -> nn.Sequential:
    layers: list[nn.Module] = []
    in_ch = 3
    for (n_convs, ch), pool in zip(config.blocks, config.pool_flags):
        for _ in range(n_convs):
            layers += [nn.Conv2d(in_ch, ch, kernel_size=3, padding=1), nn.ReLU(inplace=True)]
            in_ch = ch
        if pool:
            layers.append(nn.MaxPool2d(2, 2))
    return nn.Sequential(*layers)


class UnifiedNet(nn.Module):
    """Returns ``(probabilities B x N, positions)``.

    ``positions`` is B x 2N x 2N for the ensemble head and B x 2N for the
    in-network averaging and direct-FC heads.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        config.validate()
        self.config = config
        n = config.n_fingers
        self.features = _features(config)
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(config.flatten_width, config.fc_width),
            nn.ReLU(inplace=True),
            nn.Dropout(config.dropout_rate),
            nn.Linear(config.fc_width, config.fc_width),
            nn.ReLU(inplace=True),
            nn.Dropout(config.dropout_rate),
            nn.Linear(config.fc_width, n),
            nn.Sigmoid(),
        )
        if config.head == "fc":
            self.regressor = nn.Sequential(nn.Flatten(), nn.Linear(config.flatten_width, 2 * n),
                                           nn.Sigmoid())
        else:
            align = False if config.upsample_mode == "bilinear" else None
            self.regressor = nn.Sequential(
                nn.Upsample(size=config.upsampled_side, mode=config.upsample_mode, align_corners=align),
                nn.ReLU(inplace=True),
                nn.Conv2d(config.feature_channels, 1, kernel_size=config.reg_kernel, padding=0),
            )
        self._init_weights()

    def _init_weights(self):
        # He init for the backbone only; the heads keep torch's default init,
        # which leaves the short single-filter regression conv well scaled.
        for m in self.features.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor):
        feats = self.features(x)
        probs = self.classifier(feats)
        pos = self.regressor(feats)
        if self.config.head != "fc":
            pos = pos[:, 0]
            if self.config.head == "ensemble_gap":
                # Parameter-free averaging layer over the ensemble rows.
                pos = pos.mean(dim=1)
        return probs, pos


def build(config: NetworkConfig = NetworkConfig(), seed: int = 0) -> UnifiedNet:
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = UnifiedNet(config)
    return net


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def _as_nchw(net: UnifiedNet, batch) -> torch.Tensor:
    dtype = next(net.parameters()).dtype
    x = torch.as_tensor(batch, dtype=dtype)
    s = net.config.input_size
    if x.ndim != 4 or tuple(x.shape[1:]) != (s, s, 3):
        raise InputError(f"expected batch of shape B x {s} x {s} x 3, got {tuple(x.shape)}")
    if x.shape[0] < 1:
        raise InputError("batch must contain at least one image")
    return x.permute(0, 3, 1, 2).contiguous()


def forward(net: UnifiedNet, batch, train_mode: bool = False):
    """Evaluate the network on an NHWC batch; dropout is active only in train mode."""
    net.train(train_mode)
    return net(_as_nchw(net, batch))


@torch.no_grad()
def predict(net: UnifiedNet, batch) -> tuple[np.ndarray, np.ndarray]:
    probs, pos = forward(net, batch, train_mode=False)
    return probs.cpu().numpy().astype(np.float64), pos.cpu().numpy().astype(np.float64)


def load_backbone(net: UnifiedNet, source: Union[str, Path, dict]) -> int:
    """Copy pretrained VGG-16 feature weights into the backbone.

    ``source`` is a state dict (or a file holding one) using torchvision's
    ``features.<i>.weight`` naming. Returns the number of tensors copied.
    """
    state = torch.load(source, map_location="cpu") if isinstance(source, (str, Path)) else source
    own = net.state_dict()
    copied = 0
    for key, value in state.items():
        if not key.startswith("features."):
            continue
        if key not in own or own[key].shape != value.shape:
            raise ConfigError(f"pretrained tensor {key} {tuple(value.shape)} does not fit the backbone")
        own[key] = value.to(own[key].dtype)
        copied += 1
    net.load_state_dict(own)
    return copied


# -- checkpoints -------------------------------------------------------------

def _checksum(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    config: NetworkConfig
    arrays: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def manifest(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "arrays": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in self.arrays.items()},
            "checksum": _checksum(self.arrays),
            "extra": self.extra,
        }


def save_checkpoint(net: UnifiedNet, path: Union[str, Path], extra: Optional[dict] = None) -> Path:
    """Write weights plus manifest (config, shapes, checksum) to a ``.npz`` archive."""
    arrays = {k: v.detach().cpu().numpy().copy() for k, v in net.state_dict().items()}
    manifest = Checkpoint(net.config, arrays, extra or {}).manifest
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, __manifest__=np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)
    path.write_bytes(buf.getvalue())
    return path


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    with np.load(path, allow_pickle=False) as archive:
        if "__manifest__" not in archive:
            raise InputError(f"{path}: not a checkpoint (no manifest)")
        manifest = json.loads(archive["__manifest__"].tobytes().decode())
        arrays = {k: archive[k] for k in archive.files if k != "__manifest__"}
    if set(arrays) != set(manifest["arrays"]):
        raise InputError(f"{path}: manifest does not list the stored arrays")
    for k, meta in manifest["arrays"].items():
        if list(arrays[k].shape) != meta["shape"] or str(arrays[k].dtype) != meta["dtype"]:
            raise InputError(f"{path}: array {k} disagrees with its manifest entry")
    if _checksum(arrays) != manifest["checksum"]:
        raise InputError(f"{path}: checksum mismatch")
    return Checkpoint(NetworkConfig.from_dict(manifest["config"]), arrays, manifest.get("extra", {}))


def load_checkpoint(path: Union[str, Path]) -> UnifiedNet:
    ckpt = read_checkpoint(path)
    net = UnifiedNet(ckpt.config)
    state = {k: torch.from_numpy(np.array(v)) for k, v in ckpt.arrays.items()}
    dtype = next(iter(state.values())).dtype
    net.to(dtype)
    net.load_state_dict(state)
    return net
