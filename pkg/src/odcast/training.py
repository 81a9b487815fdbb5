"""Normalization statistics, loss, and the optimization loop.

Counts are z-scored with scalar statistics per matrix family: the OD family
pools incomplete-OD, both pending-destination estimates, and complete-OD
values from the training split; the DO family pools DO values. The model is
trained on mean absolute error in normalized space with step-decayed Adam,
and the retained checkpoint is the epoch with the lowest mean validation MAPE
(mean over horizons and over OD and DO, in raw count space).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .aggregation import SampleSet, SnapshotSample
from .errors import ConfigurationError, DivergenceError, InsufficientDataError
from .evaluation import network_mape
from .layers import DTYPE
from .model import Forecaster

STD_FLOOR = 1e-6


@dataclass
class NormStats:
    od_mean: float
    od_std: float
    do_mean: float
    do_std: float

    def __post_init__(self):
        self.od_std = max(float(self.od_std), STD_FLOOR)
        self.do_std = max(float(self.do_std), STD_FLOOR)

    def normalize_od(self, x):
        return (x - self.od_mean) / self.od_std

    def denormalize_od(self, x):
        return x * self.od_std + self.od_mean

    def normalize_do(self, x):
        return (x - self.do_mean) / self.do_std

    def denormalize_do(self, x):
        return x * self.do_std + self.do_mean

    def to_dict(self) -> dict:
        return {
            "od_mean": self.od_mean, "od_std": self.od_std,
            "do_mean": self.do_mean, "do_std": self.do_std,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(**data)


class _Accumulator:
    def __init__(self):
        self.count = 0
        self.total = 0.0
        self.total_sq = 0.0

    def add(self, arr: np.ndarray) -> None:
        arr = np.asarray(arr, dtype=np.float64)
        self.count += arr.size
        self.total += float(arr.sum())
        self.total_sq += float(np.square(arr).sum())

    def stats(self) -> tuple[float, float]:
        mean = self.total / self.count
        var = max(self.total_sq / self.count - mean * mean, 0.0)
        return mean, math.sqrt(var)


def fit_norm_stats(train_samples: list[SnapshotSample]) -> NormStats:
    """Scalar mean/std per family over the training split (population std)."""
    if not train_samples:
        raise InsufficientDataError("cannot fit normalization on an empty split")
    od_acc, do_acc = _Accumulator(), _Accumulator()
    for sample in train_samples:
        od_acc.add(sample.iod)
        od_acc.add(sample.uod_long)
        od_acc.add(sample.uod_short)
        od_acc.add(sample.od_targets)
        do_acc.add(sample.do_in)
        do_acc.add(sample.do_targets)
    od_mean, od_std = od_acc.stats()
    do_mean, do_std = do_acc.stats()
    return NormStats(od_mean, od_std, do_mean, do_std)


def mae_loss(od_preds, do_preds, od_targets, do_targets) -> torch.Tensor:
    """Equal-weight mean absolute error over the OD and DO prediction stacks."""
    if od_preds.shape != od_targets.shape or do_preds.shape != do_targets.shape:
        raise ValueError(
            f"prediction/target shapes differ: od {tuple(od_preds.shape)} vs "
            f"{tuple(od_targets.shape)}, do {tuple(do_preds.shape)} vs "
            f"{tuple(do_targets.shape)}"
        )
    od_term = (od_preds - od_targets).abs().mean()
    do_term = (do_preds - do_targets).abs().mean()
    return 0.5 * (od_term + do_term)


@dataclass
class TensorBatch:
    """Normalized model inputs/targets plus raw targets for metric evaluation."""

    iod: torch.Tensor
    uod_long: torch.Tensor
    uod_short: torch.Tensor
    u: torch.Tensor
    do_in: torch.Tensor
    od_targets: torch.Tensor
    do_targets: torch.Tensor
    od_targets_raw: np.ndarray
    do_targets_raw: np.ndarray

    def __len__(self) -> int:
        return self.iod.shape[0]

    def select(self, idx: torch.Tensor) -> "TensorBatch":
        np_idx = idx.numpy()
        return TensorBatch(
            self.iod[idx], self.uod_long[idx], self.uod_short[idx], self.u[idx],
            self.do_in[idx], self.od_targets[idx], self.do_targets[idx],
            self.od_targets_raw[np_idx], self.do_targets_raw[np_idx],
        )

    def inputs(self):
        return self.iod, self.uod_long, self.uod_short, self.u, self.do_in


def tensorize(samples: list[SnapshotSample], stats: NormStats) -> TensorBatch:
    def stack(attr):
        return np.stack([getattr(s, attr) for s in samples]).astype(np.float64)

    od_raw = stack("od_targets")
    do_raw = stack("do_targets")
    as_t = lambda arr: torch.as_tensor(arr, dtype=DTYPE)
    return TensorBatch(
        iod=as_t(stats.normalize_od(stack("iod"))),
        uod_long=as_t(stats.normalize_od(stack("uod_long"))),
        uod_short=as_t(stats.normalize_od(stack("uod_short"))),
        u=as_t(stats.normalize_od(stack("u"))),
        do_in=as_t(stats.normalize_do(stack("do_in"))),
        od_targets=as_t(stats.normalize_od(od_raw)),
        do_targets=as_t(stats.normalize_do(do_raw)),
        od_targets_raw=od_raw,
        do_targets_raw=do_raw,
    )


SCHEDULES = ("step", "flat_then_step")


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 300
    base_lr: float = 1e-3
    decay_factor: float = 0.2
    decay_every_epochs: int = 20
    schedule: str = "step"
    flat_epochs: int = 60
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ConfigurationError("batch_size and epochs must be positive")
        if self.base_lr < 0 or self.decay_factor <= 0 or self.decay_every_epochs <= 0:
            raise ConfigurationError("invalid learning-rate schedule values")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"schedule must be one of {SCHEDULES}")


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """lr(epoch) = base * factor^floor(epoch / decay_every) for the step
    schedule; the flat_then_step alternative holds base for flat_epochs and
    then decays every decay_every_epochs."""
    if cfg.schedule == "flat_then_step":
        if epoch < cfg.flat_epochs:
            return cfg.base_lr
        steps = (epoch - cfg.flat_epochs) // cfg.decay_every_epochs + 1
        return cfg.base_lr * cfg.decay_factor**steps
    return cfg.base_lr * cfg.decay_factor ** (epoch // cfg.decay_every_epochs)


@dataclass
class HistoryRow:
    step: int
    epoch: int
    train_loss: float
    val_mape_od_mean: float | None = None
    val_mape_do_mean: float | None = None


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_val_mape: float | None
    history: list[HistoryRow] = field(default_factory=list)


def _validation_mape(
    model: Forecaster, val: TensorBatch, stats: NormStats, eval_batch: int = 256
) -> tuple[float, float]:
    od_chunks, do_chunks = [], []
    with torch.no_grad():
        for lo in range(0, len(val), eval_batch):
            sl = slice(lo, min(lo + eval_batch, len(val)))
            od_n, do_n = model(
                val.iod[sl], val.uod_long[sl], val.uod_short[sl], val.u[sl], val.do_in[sl]
            )
            od_chunks.append(od_n.numpy())
            do_chunks.append(do_n.numpy())
    od_pred = np.clip(stats.denormalize_od(np.concatenate(od_chunks)), 0.0, None)
    do_pred = np.clip(stats.denormalize_do(np.concatenate(do_chunks)), 0.0, None)
    m = od_pred.shape[1]
    od_mapes = [network_mape(od_pred[:, j], val.od_targets_raw[:, j]) for j in range(m)]
    do_mapes = [network_mape(do_pred[:, j], val.do_targets_raw[:, j]) for j in range(m)]
    return float(np.mean(od_mapes)), float(np.mean(do_mapes))


def train(
    model: Forecaster,
    train_data: TensorBatch,
    val_data: TensorBatch | None,
    stats: NormStats,
    cfg: TrainConfig,
    max_steps: int | None = None,
) -> TrainResult:
    """Optimize in place; returns the best parameters and the loss history.

    The model is left loaded with the best checkpoint. Validation runs after
    every epoch and never contributes gradients. Raises DivergenceError naming
    the step if the loss goes non-finite.
    """
    cfg.validate()
    if len(train_data) == 0:
        raise InsufficientDataError("training split is empty")
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=cfg.base_lr,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )
    shuffler = torch.Generator().manual_seed(cfg.seed)
    history: list[HistoryRow] = []
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_epoch = -1
    best_mape: float | None = None
    step = 0
    done = False
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = torch.randperm(len(train_data), generator=shuffler)
        for lo in range(0, len(train_data), cfg.batch_size):
            batch = train_data.select(order[lo : lo + cfg.batch_size])
            optimizer.zero_grad()
            od_pred, do_pred = model(*batch.inputs())
            loss = mae_loss(od_pred, do_pred, batch.od_targets, batch.do_targets)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at step {step}")
            loss.backward()
            optimizer.step()
            history.append(HistoryRow(step, epoch, loss.item()))
            step += 1
            if max_steps is not None and step >= max_steps:
                done = True
                break
        if val_data is not None and len(val_data):
            od_mape, do_mape = _validation_mape(model, val_data, stats)
            history[-1].val_mape_od_mean = od_mape
            history[-1].val_mape_do_mean = do_mape
            mean_mape = 0.5 * (od_mape + do_mape)
            if best_mape is None or mean_mape < best_mape:
                best_mape = mean_mape
                best_epoch = epoch
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        else:
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if done:
            break
    model.load_state_dict(best_state)
    return TrainResult(
        best_state={k: v.numpy().copy() for k, v in best_state.items()},
        best_epoch=best_epoch,
        best_val_mape=best_mape,
        history=history,
    )


HISTORY_HEADER = ["step", "epoch", "train_loss", "val_mape_od_mean", "val_mape_do_mean"]


def write_history_csv(history: list[HistoryRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        for row in history:
            writer.writerow(
                [
                    row.step,
                    row.epoch,
                    repr(row.train_loss),
                    "" if row.val_mape_od_mean is None else repr(row.val_mape_od_mean),
                    "" if row.val_mape_do_mean is None else repr(row.val_mape_do_mean),
                ]
            )
