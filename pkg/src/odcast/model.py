"""Dual-branch recurrent forecaster for joint OD and DO ridership.

The encoder digests, per past interval, the incomplete OD matrix, the two
estimated pending-destination matrices (or the raw unfinished vector), and the
DO matrix through parallel graph-GRU stacks; an optional cross-branch exchange
couples the OD-side and DO-side states after each recurrence level. The decoder
mirrors the structure without the pending-destination cells, feeds back its own
predictions, and maps the final states to per-station output rows.

Inputs and outputs are in normalized (z-scored) units; de-normalization is the
caller's concern.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError
from .layers import (
    DTYPE,
    CrossBranchAttention,
    GraphGRUCell,
    SingleStationExchange,
    init_parameters,
)

INTERACTION_MODES = ("none", "single_station", "dit")


@dataclass
class ModelConfig:
    num_stations: int
    num_pairs: int
    hidden_dim: int = 96
    num_heads: int = 4
    input_len: int = 4
    output_len: int = 4
    use_uod_long: bool = True
    use_uod_short: bool = True
    use_u_raw: bool = False
    interaction: str = "dit"
    scaled_attention: bool = True

    def validate(self) -> None:
        for name in ("num_stations", "num_pairs", "hidden_dim", "num_heads",
                     "input_len", "output_len"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.interaction not in INTERACTION_MODES:
            raise ConfigurationError(
                f"interaction must be one of {INTERACTION_MODES}, got {self.interaction!r}"
            )
        if self.use_u_raw and (self.use_uod_long or self.use_uod_short):
            raise ConfigurationError(
                "use_u_raw replaces the estimated pending-destination inputs; "
                "disable use_uod_long/use_uod_short"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        cfg = cls(**data)
        cfg.validate()
        return cfg


def _build_exchange(cfg: ModelConfig) -> nn.Module | None:
    if cfg.interaction == "dit":
        return CrossBranchAttention(cfg.hidden_dim, cfg.num_heads, cfg.scaled_attention)
    if cfg.interaction == "single_station":
        return SingleStationExchange(cfg.hidden_dim)
    return None


@dataclass
class EncoderState:
    """Per-cell hidden states; the level-2 entries hold the post-exchange
    states, which is what the next step's recurrences consume."""

    h_long: torch.Tensor | None
    h_short: torch.Tensor | None
    h_raw: torch.Tensor | None
    h_iod: torch.Tensor
    h_do1: torch.Tensor
    h_od2: torch.Tensor
    h_do2: torch.Tensor

    @classmethod
    def zeros(cls, cfg: ModelConfig, batch: int) -> "EncoderState":
        def z():
            return torch.zeros(batch, cfg.num_stations, cfg.hidden_dim, dtype=DTYPE)

        return cls(
            h_long=z() if cfg.use_uod_long else None,
            h_short=z() if cfg.use_uod_short else None,
            h_raw=z() if cfg.use_u_raw else None,
            h_iod=z(), h_do1=z(), h_od2=z(), h_do2=z(),
        )


@dataclass
class DecoderState:
    h_od1: torch.Tensor
    h_do1: torch.Tensor
    h_od2: torch.Tensor
    h_do2: torch.Tensor


class EncoderCell(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        k, d = cfg.num_pairs, cfg.hidden_dim
        self.iod_cell = GraphGRUCell(k, d)
        self.long_cell = GraphGRUCell(k, d) if cfg.use_uod_long else None
        self.short_cell = GraphGRUCell(k, d) if cfg.use_uod_short else None
        self.raw_cell = GraphGRUCell(1, d) if cfg.use_u_raw else None
        n_extra = sum(c is not None for c in (self.long_cell, self.short_cell, self.raw_cell))
        self.fuse = nn.Linear(n_extra * d, d, dtype=DTYPE) if n_extra else None
        self.do1_cell = GraphGRUCell(k, d)
        self.od2_cell = GraphGRUCell(d, d)
        self.do2_cell = GraphGRUCell(d, d)
        self.exchange1 = _build_exchange(cfg)
        self.exchange2 = _build_exchange(cfg)

    def forward(
        self,
        state: EncoderState,
        iod: torch.Tensor,
        uod_long: torch.Tensor,
        uod_short: torch.Tensor,
        u: torch.Tensor,
        do: torch.Tensor,
        weights: torch.Tensor,
    ) -> EncoderState:
        h_iod = self.iod_cell(iod, state.h_iod, weights)
        extras = []
        h_long = h_short = h_raw = None
        if self.long_cell is not None:
            h_long = self.long_cell(uod_long, state.h_long, weights)
            extras.append(h_long)
        if self.short_cell is not None:
            h_short = self.short_cell(uod_short, state.h_short, weights)
            extras.append(h_short)
        if self.raw_cell is not None:
            h_raw = self.raw_cell(u.unsqueeze(-1), state.h_raw, weights)
            extras.append(h_raw)
        if extras:
            h_od1 = h_iod + self.fuse(torch.cat(extras, dim=-1))
        else:
            h_od1 = h_iod
        h_do1 = self.do1_cell(do, state.h_do1, weights)
        od1_hat, do1_hat = _apply_exchange(self.exchange1, h_od1, h_do1)
        h_od2 = self.od2_cell(od1_hat, state.h_od2, weights)
        h_do2 = self.do2_cell(do1_hat, state.h_do2, weights)
        od2_hat, do2_hat = _apply_exchange(self.exchange2, h_od2, h_do2)
        return EncoderState(h_long, h_short, h_raw, h_iod, h_do1, od2_hat, do2_hat)


def _apply_exchange(exchange, h_od, h_do):
    if exchange is None:
        return h_od, h_do
    return exchange(h_od, h_do)


class DecoderCell(nn.Module):
    """Simplified cell for the forecasting stage: no pending-destination cells,
    both branch inputs are the previous step's predictions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        k, d = cfg.num_pairs, cfg.hidden_dim
        self.od1_cell = GraphGRUCell(k, d)
        self.do1_cell = GraphGRUCell(k, d)
        self.od2_cell = GraphGRUCell(d, d)
        self.do2_cell = GraphGRUCell(d, d)
        self.exchange1 = _build_exchange(cfg)
        self.exchange2 = _build_exchange(cfg)
        self.od_head = nn.Sequential(
            nn.Linear(d, d, dtype=DTYPE), nn.PReLU(dtype=DTYPE), nn.Linear(d, k, dtype=DTYPE)
        )
        self.do_head = nn.Sequential(
            nn.Linear(d, d, dtype=DTYPE), nn.PReLU(dtype=DTYPE), nn.Linear(d, k, dtype=DTYPE)
        )

    def init_state(self, enc: EncoderState) -> DecoderState:
        return DecoderState(
            h_od1=enc.h_iod, h_do1=enc.h_do1, h_od2=enc.h_od2, h_do2=enc.h_do2
        )

    def step(
        self,
        state: DecoderState | None,
        prev_od: torch.Tensor,
        prev_do: torch.Tensor,
        weights: torch.Tensor,
    ) -> tuple[DecoderState, torch.Tensor, torch.Tensor]:
        if state is None:
            raise RuntimeError(
                "decoder state not initialized; run the encoder and init_state first"
            )
        h_od1 = self.od1_cell(prev_od, state.h_od1, weights)
        h_do1 = self.do1_cell(prev_do, state.h_do1, weights)
        od1_hat, do1_hat = _apply_exchange(self.exchange1, h_od1, h_do1)
        h_od2 = self.od2_cell(od1_hat, state.h_od2, weights)
        h_do2 = self.do2_cell(do1_hat, state.h_do2, weights)
        od2_hat, do2_hat = _apply_exchange(self.exchange2, h_od2, h_do2)
        od_pred = self.od_head(od2_hat)
        do_pred = self.do_head(do2_hat)
        return DecoderState(h_od1, h_do1, od2_hat, do2_hat), od_pred, do_pred


class Forecaster(nn.Module):
    """Seq2seq wrapper: encoder over the observed window, state handoff, and
    closed-loop decoding of the forecast horizon."""

    def __init__(self, cfg: ModelConfig, graph_weights: np.ndarray, seed: int = 0):
        super().__init__()
        cfg.validate()
        if graph_weights.shape != (cfg.num_stations, cfg.num_stations):
            raise ConfigurationError(
                f"graph weights shape {graph_weights.shape} does not match "
                f"num_stations {cfg.num_stations}"
            )
        self.cfg = cfg
        self.register_buffer(
            "graph_weights", torch.as_tensor(np.array(graph_weights), dtype=DTYPE)
        )
        self.encoder = EncoderCell(cfg)
        self.decoder = DecoderCell(cfg)
        generator = torch.Generator().manual_seed(seed)
        init_parameters(self, generator)

    def forward(
        self,
        iod: torch.Tensor,
        uod_long: torch.Tensor,
        uod_short: torch.Tensor,
        u: torch.Tensor,
        do: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Normalized inputs (batch, n, N, K) (u: (batch, n, N)) to normalized
        prediction stacks (batch, m, N, K) for OD and DO."""
        squeeze = iod.dim() == 3
        if squeeze:
            iod, uod_long, uod_short, u, do = (
                t.unsqueeze(0) for t in (iod, uod_long, uod_short, u, do)
            )
        cfg = self.cfg
        expected = (cfg.input_len, cfg.num_stations, cfg.num_pairs)
        if tuple(iod.shape[1:]) != expected:
            raise ValueError(
                f"input shape {tuple(iod.shape[1:])} does not match model {expected}"
            )
        batch = iod.shape[0]
        w = self.graph_weights
        state = EncoderState.zeros(cfg, batch)
        for i in range(cfg.input_len):
            state = self.encoder(
                state, iod[:, i], uod_long[:, i], uod_short[:, i], u[:, i], do[:, i], w
            )
        dstate = self.decoder.init_state(state)
        prev_od = torch.zeros(batch, cfg.num_stations, cfg.num_pairs, dtype=DTYPE)
        prev_do = torch.zeros_like(prev_od)
        od_steps, do_steps = [], []
        for _ in range(cfg.output_len):
            dstate, od_pred, do_pred = self.decoder.step(dstate, prev_od, prev_do, w)
            od_steps.append(od_pred)
            do_steps.append(do_pred)
            prev_od, prev_do = od_pred, do_pred
        od_out = torch.stack(od_steps, dim=1)
        do_out = torch.stack(do_steps, dim=1)
        if squeeze:
            od_out, do_out = od_out.squeeze(0), do_out.squeeze(0)
        return od_out, do_out

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {
            name: p.detach().cpu().numpy().copy() for name, p in self.named_parameters()
        }
