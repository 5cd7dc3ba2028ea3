"""Training loop for the joint objective."""
from __future__ import annotations

import copy
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from ..core import AnnotatedSample, ConfigError, N_FINGERS, TrainingError
from ..model import NetworkConfig, UnifiedNet, build, save_checkpoint
from ..pipeline import crop_and_resize, to_network_input
from .adam import Adam, lr_for_epoch
from .augment import AugmentConfig, augment
from .losses import positional_loss, probabilistic_loss, total_loss

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_L1", "train_L2", "train_L", "val_L1", "val_L2", "val_L")
DEFAULT_SCHEDULE = ((1, 1e-5), (151, 1e-6), (251, 1e-7))


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 300
    lr_schedule: tuple = DEFAULT_SCHEDULE
    augment: bool = True
    augment_config: AugmentConfig = field(default_factory=AugmentConfig)
    bias_correction: bool = False
    renormalize_positional: bool = False
    seed: int = 0
    max_steps: Optional[int] = None
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    workers: int = 1
    shuffle: bool = True

    def __post_init__(self):
        self.lr_schedule = tuple((int(e), float(lr)) for e, lr in self.lr_schedule)
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        lrs = [lr for _, lr in sorted(self.lr_schedule)]
        if not lrs or any(lr <= 0 for lr in lrs):
            raise ConfigError("learning rates must be positive")
        if any(b > a for a, b in zip(lrs, lrs[1:])):
            raise ConfigError("learning-rate schedule must be non-increasing")


def ensemble_target(coords: np.ndarray, rows: int = 2 * N_FINGERS) -> np.ndarray:
    """Stack a 2N coordinate row ``rows`` times (ground-truth ensemble matrix)."""
    return np.tile(np.asarray(coords, dtype=np.float32), (rows, 1))


def sample_targets(sample: AnnotatedSample) -> tuple[np.ndarray, np.ndarray]:
    """Visibility bits and normalized 2N coordinate row (hidden fingers as 0)."""
    norm = sample.fingertips.to_normalized(sample.bbox)
    row = np.zeros(2 * N_FINGERS, dtype=np.float32)
    for f, c in enumerate(norm.coords):
        if c is not None:
            row[2 * f], row[2 * f + 1] = c
    return sample.code.as_array(), row


@dataclass
class Batch:
    images: np.ndarray
    codes: np.ndarray
    coords: np.ndarray

    def targets_for(self, head: str) -> np.ndarray:
        if head == "ensemble":
            return np.stack([ensemble_target(r) for r in self.coords])
        return self.coords


def prepare(samples: Sequence[AnnotatedSample], size: int) -> Batch:
    crops, codes, coords = [], [], []
    for s in samples:
        crops.append(crop_and_resize(s.image, s.bbox, size).pixels)
        c, r = sample_targets(s)
        codes.append(c)
        coords.append(r)
    return Batch(to_network_input(crops), np.stack(codes), np.stack(coords))


def compute_losses(net: UnifiedNet, batch: Batch, train_mode: bool, renormalize: bool = False):
    net.train(train_mode)
    dtype = next(net.parameters()).dtype
    x = torch.as_tensor(batch.images, dtype=dtype).permute(0, 3, 1, 2)
    probs, pos = net(x)
    codes = torch.as_tensor(batch.codes, dtype=dtype)
    target = torch.as_tensor(batch.targets_for(net.config.head), dtype=dtype)
    l1 = probabilistic_loss(codes, probs)
    l2 = positional_loss(target, pos, codes, renormalize=renormalize)
    return l1, l2, total_loss(l1, l2)


@torch.no_grad()
def evaluate_losses(net: UnifiedNet, samples: Sequence[AnnotatedSample], batch_size: int = 64,
                    renormalize: bool = False) -> tuple[float, float, float]:
    """Sample-weighted mean losses in eval mode (dropout off)."""
    sums = np.zeros(3)
    n = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        losses = compute_losses(net, prepare(chunk, net.config.input_size), False, renormalize)
        sums += np.array([float(v) for v in losses]) * len(chunk)
        n += len(chunk)
    return tuple(sums / max(n, 1))


def _augmented(samples, cfg: TrainConfig, epoch: int, pool: Optional[ThreadPoolExecutor]):
    if not cfg.augment:
        return samples

    def one(i):
        # Independent stream per (seed, epoch, sample index): independent of worker count.
        return augment(samples[i], np.random.default_rng([cfg.seed, epoch, i]), cfg.augment_config)

    idx = range(len(samples))
    return list(pool.map(one, idx)) if pool is not None else [one(i) for i in idx]


def write_history(history: Sequence[dict], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: ("" if row.get(k) is None else row[k]) for k in HISTORY_COLUMNS})


def read_history(path: Union[str, Path]) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for r in csv.DictReader(fh):
            rows.append({k: (int(v) if k == "epoch" else (float(v) if v != "" else None)) for k, v in r.items()})
        return rows


def train(dataset: Sequence[AnnotatedSample], config: TrainConfig,
          network_config: NetworkConfig = NetworkConfig(), val_dataset: Sequence[AnnotatedSample] = (),
          net: Optional[UnifiedNet] = None) -> tuple[UnifiedNet, list[dict]]:
    """Train on ``dataset``; returns the final network and per-epoch loss history."""
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    train_names = {s.name for s in dataset if s.name}
    if train_names & {s.name for s in val_dataset if s.name}:
        raise ConfigError("training and validation splits overlap")
    net = net if net is not None else build(network_config, seed=config.seed)
    history: list[dict] = []
    if config.epochs == 0:
        return net, history

    size = net.config.input_size
    opt = Adam(net.parameters(), lr=lr_for_epoch(config.lr_schedule, 1),
               bias_correction=config.bias_correction)
    order_rng = np.random.default_rng(config.seed)
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    last_good = copy.deepcopy(net.state_dict())
    last_path = None
    cached = None if config.augment else prepare(dataset, size)
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 and config.augment else None
    steps = 0
    try:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            for epoch in range(1, config.epochs + 1):
                for group in opt.param_groups:
                    group["lr"] = lr_for_epoch(config.lr_schedule, epoch)
                batch_all = cached if cached is not None else prepare(
                    _augmented(dataset, config, epoch, pool), size)
                n = len(dataset)
                order = order_rng.permutation(n) if config.shuffle else np.arange(n)
                sums, seen = np.zeros(3), 0
                for start in range(0, n, config.batch_size):
                    idx = order[start:start + config.batch_size]
                    batch = Batch(batch_all.images[idx], batch_all.codes[idx], batch_all.coords[idx])
                    l1, l2, loss = compute_losses(net, batch, True, config.renormalize_positional)
                    if not math.isfinite(loss.item()):
                        raise TrainingError("loss is not finite", step=steps + 1)
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                    steps += 1
                    sums += np.array([l1.item(), l2.item(), loss.item()]) * len(idx)
                    seen += len(idx)
                    if config.max_steps is not None and steps >= config.max_steps:
                        break
                tr = sums / seen
                row = {"epoch": epoch, "train_L1": tr[0], "train_L2": tr[1], "train_L": tr[2],
                       "val_L1": None, "val_L2": None, "val_L": None}
                if len(val_dataset):
                    v = evaluate_losses(net, val_dataset, config.batch_size, config.renormalize_positional)
                    row.update(val_L1=v[0], val_L2=v[1], val_L=v[2])
                history.append(row)
                last_good = copy.deepcopy(net.state_dict())
                if ckpt_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                    last_path = save_checkpoint(net, ckpt_dir / f"epoch_{epoch:04d}.npz", {"epoch": epoch})
                log.info("epoch %d: L1=%.5f L2=%.6f L=%.5f", epoch, tr[0], tr[1], tr[2])
                if config.max_steps is not None and steps >= config.max_steps:
                    break
    except TrainingError as exc:
        net.load_state_dict(last_good)
        if ckpt_dir is not None:
            last_path = save_checkpoint(net, ckpt_dir / "last_good.npz", {"step": exc.step})
        raise TrainingError(f"training diverged: {exc}", step=exc.step,
                            checkpoint=last_path if last_path is not None else last_good) from exc
    finally:
        if pool is not None:
            pool.shutdown()
    net.eval()
    return net, history
