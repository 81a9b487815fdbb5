"""Scikit-learn style estimator wrapping the forecaster.

RidershipForecaster exposes the usual fit/predict/get_params surface so the
model composes with standard tooling; hyperparameters live in the constructor,
fitted state in trailing-underscore attributes. Inputs are SampleSet objects
produced by the aggregation pipeline.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import checkpoint
from .aggregation import SampleSet
from .evaluation import HistoricalAverageForecaster, network_mape
from .model import Forecaster, ModelConfig
from .training import (
    NormStats,
    TensorBatch,
    TrainConfig,
    fit_norm_stats,
    tensorize,
    train,
)

__all__ = ["RidershipForecaster", "HistoricalAverageForecaster"]


class RidershipForecaster(BaseEstimator):
    """Joint OD/DO ridership forecaster with a fit/predict interface.

    Predictions are de-normalized passenger counts clamped at zero, shaped
    (num_samples, output_len, N, K) per family.
    """

    def __init__(
        self,
        hidden_dim: int = 96,
        num_heads: int = 4,
        use_uod_long: bool = True,
        use_uod_short: bool = True,
        use_u_raw: bool = False,
        interaction: str = "dit",
        scaled_attention: bool = True,
        batch_size: int = 32,
        epochs: int = 300,
        base_lr: float = 1e-3,
        decay_factor: float = 0.2,
        decay_every_epochs: int = 20,
        schedule: str = "step",
        flat_epochs: int = 60,
        adam_beta1: float = 0.9,
        adam_beta2: float = 0.999,
        adam_eps: float = 1e-8,
        seed: int = 0,
        max_steps: int | None = None,
    ):
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.use_uod_long = use_uod_long
        self.use_uod_short = use_uod_short
        self.use_u_raw = use_u_raw
        self.interaction = interaction
        self.scaled_attention = scaled_attention
        self.batch_size = batch_size
        self.epochs = epochs
        self.base_lr = base_lr
        self.decay_factor = decay_factor
        self.decay_every_epochs = decay_every_epochs
        self.schedule = schedule
        self.flat_epochs = flat_epochs
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.seed = seed
        self.max_steps = max_steps

    def _model_config(self, sample_set: SampleSet) -> ModelConfig:
        return ModelConfig(
            num_stations=sample_set.num_stations,
            num_pairs=sample_set.num_pairs,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            input_len=sample_set.input_len,
            output_len=sample_set.output_len,
            use_uod_long=self.use_uod_long,
            use_uod_short=self.use_uod_short,
            use_u_raw=self.use_u_raw,
            interaction=self.interaction,
            scaled_attention=self.scaled_attention,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            base_lr=self.base_lr,
            decay_factor=self.decay_factor,
            decay_every_epochs=self.decay_every_epochs,
            schedule=self.schedule,
            flat_epochs=self.flat_epochs,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            seed=self.seed,
        )

    def fit(self, sample_set: SampleSet, y=None, val_set: SampleSet | None = None):
        cfg = self._model_config(sample_set)
        cfg.validate()
        self.norm_stats_ = fit_norm_stats(sample_set.samples)
        train_data = tensorize(sample_set.samples, self.norm_stats_)
        val_data = (
            tensorize(val_set.samples, self.norm_stats_) if val_set and len(val_set) else None
        )
        self.model_ = Forecaster(cfg, np.asarray(sample_set.graph.weights), seed=self.seed)
        result = train(
            self.model_, train_data, val_data, self.norm_stats_, self._train_config(),
            max_steps=self.max_steps,
        )
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_val_mape_ = result.best_val_mape
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit or from_checkpoint before predict")

    def predict(self, sample_set: SampleSet) -> tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        data = tensorize(sample_set.samples, self.norm_stats_)
        od_chunks, do_chunks = [], []
        with torch.no_grad():
            for lo in range(0, len(data), 256):
                sl = slice(lo, lo + 256)
                od_n, do_n = self.model_(
                    data.iod[sl], data.uod_long[sl], data.uod_short[sl],
                    data.u[sl], data.do_in[sl],
                )
                od_chunks.append(od_n.numpy())
                do_chunks.append(do_n.numpy())
        od = self.norm_stats_.denormalize_od(np.concatenate(od_chunks))
        do = self.norm_stats_.denormalize_do(np.concatenate(do_chunks))
        return np.clip(od, 0.0, None), np.clip(do, 0.0, None)

    def score(self, sample_set: SampleSet, y=None) -> float:
        """Negative mean network MAPE over horizons and families (higher is better)."""
        od_pred, do_pred = self.predict(sample_set)
        od_truth = np.stack([s.od_targets for s in sample_set.samples])
        do_truth = np.stack([s.do_targets for s in sample_set.samples])
        m = sample_set.output_len
        mapes = [network_mape(od_pred[:, j], od_truth[:, j]) for j in range(m)]
        mapes += [network_mape(do_pred[:, j], do_truth[:, j]) for j in range(m)]
        return -float(np.mean(mapes))

    def save(self, path) -> None:
        self._check_fitted()
        checkpoint.save_model(
            path,
            self.model_,
            extra={
                "norm_stats": self.norm_stats_.to_dict(),
                "best_epoch": self.best_epoch_,
                "best_val_mape": self.best_val_mape_,
                "params": {k: v for k, v in self.get_params().items() if k != "max_steps"},
            },
        )

    @classmethod
    def from_checkpoint(cls, path) -> "RidershipForecaster":
        model, extra = checkpoint.load_model(path)
        est = cls(**{k: v for k, v in extra.get("params", {}).items()})
        est.model_ = model
        est.norm_stats_ = NormStats.from_dict(extra["norm_stats"])
        est.best_epoch_ = extra.get("best_epoch", -1)
        est.best_val_mape_ = extra.get("best_val_mape")
        est.history_ = []
        return est
