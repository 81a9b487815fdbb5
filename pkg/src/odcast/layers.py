"""Differentiable building blocks: graph convolution, graph-convolutional GRU,
and cross-branch attention.

All parameters are ordinary torch parameters addressable via named_parameters,
created in float64. Weight matrices follow the (out, in) layout and are
initialized Xavier-uniform (bound sqrt(6 / (fan_in + fan_out)) with fan_in the
second axis and fan_out the first); biases start at zero, PReLU slopes at 0.25.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError

DTYPE = torch.float64


def graph_conv(
    x: torch.Tensor,
    weights: torch.Tensor,
    theta_loop: torch.Tensor,
    theta_neigh: torch.Tensor,
    bias: torch.Tensor | None = None,
) -> torch.Tensor:
    """Self-loop plus weighted-neighbor-average feature transform.

    x: (..., N, in); weights: (N, N) row-normalized adjacency;
    theta_loop/theta_neigh: (out, in). Row i of the result is
    theta_loop @ x_i + sum_j weights[i, j] * (theta_neigh @ x_j).
    """
    n = weights.shape[0]
    if x.shape[-2] != n:
        raise ValueError(f"expected {n} station rows, got input shape {tuple(x.shape)}")
    if theta_loop.shape != theta_neigh.shape:
        raise ValueError(
            f"theta shapes differ: {tuple(theta_loop.shape)} vs {tuple(theta_neigh.shape)}"
        )
    if theta_loop.shape[1] != x.shape[-1]:
        raise ValueError(
            f"feature width {x.shape[-1]} does not match theta input {theta_loop.shape[1]}"
        )
    out = x @ theta_loop.mT + weights @ (x @ theta_neigh.mT)
    if bias is not None:
        out = out + bias
    return out


class GraphGRUCell(nn.Module):
    """GRU cell whose gate transforms are graph convolutions over the station
    graph, applied to the concatenation of input features and hidden state."""

    def __init__(self, in_dim: int, hidden_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        width = in_dim + hidden_dim
        for gate in ("reset", "update", "cand"):
            self.register_parameter(
                f"{gate}_loop", nn.Parameter(torch.empty(hidden_dim, width, dtype=DTYPE))
            )
            self.register_parameter(
                f"{gate}_neigh", nn.Parameter(torch.empty(hidden_dim, width, dtype=DTYPE))
            )
            self.register_parameter(
                f"{gate}_bias", nn.Parameter(torch.zeros(hidden_dim, dtype=DTYPE))
            )

    def forward(
        self, x: torch.Tensor, h: torch.Tensor, weights: torch.Tensor
    ) -> torch.Tensor:
        if x.shape[-1] != self.in_dim or h.shape[-1] != self.hidden_dim:
            raise ValueError(
                f"expected input width {self.in_dim} and state width {self.hidden_dim}, "
                f"got {x.shape[-1]} and {h.shape[-1]}"
            )
        xh = torch.cat([x, h], dim=-1)
        r = torch.sigmoid(
            graph_conv(xh, weights, self.reset_loop, self.reset_neigh, self.reset_bias)
        )
        z = torch.sigmoid(
            graph_conv(xh, weights, self.update_loop, self.update_neigh, self.update_bias)
        )
        xrh = torch.cat([x, r * h], dim=-1)
        c = torch.tanh(
            graph_conv(xrh, weights, self.cand_loop, self.cand_neigh, self.cand_bias)
        )
        return z * h + (1.0 - z) * c


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    # (..., N, d) -> (..., heads, N, d // heads)
    return x.unflatten(-1, (heads, x.shape[-1] // heads)).transpose(-3, -2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    return x.transpose(-3, -2).flatten(-2)


class CrossBranchAttention(nn.Module):
    """Dual cross-attention exchanging information between two branch states.

    Each branch projects queries, keys, and values; the first branch attends
    over the second's keys/values and vice versa. Attention scores are
    normalized over source stations, so every attention row is a convex
    combination, and the attended context is added residually after a
    per-branch output projection.
    """

    def __init__(self, dim: int, heads: int, scaled: bool = True):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"hidden dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.scaled = scaled
        for name in ("q_a", "k_a", "v_a", "q_b", "k_b", "v_b", "out_a", "out_b"):
            self.add_module(name, nn.Linear(dim, dim, bias=False, dtype=DTYPE))

    def attention_weights(
        self, h_a: torch.Tensor, h_b: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(b_to_a, a_to_b) coefficients, each (..., heads, N_target, N_source)."""
        scale = math.sqrt(self.dim / self.heads) if self.scaled else 1.0
        q_a = _split_heads(self.q_a(h_a), self.heads)
        k_a = _split_heads(self.k_a(h_a), self.heads)
        q_b = _split_heads(self.q_b(h_b), self.heads)
        k_b = _split_heads(self.k_b(h_b), self.heads)
        b_to_a = torch.softmax(q_a @ k_b.mT / scale, dim=-1)
        a_to_b = torch.softmax(q_b @ k_a.mT / scale, dim=-1)
        return b_to_a, a_to_b

    def forward(
        self, h_a: torch.Tensor, h_b: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        b_to_a, a_to_b = self.attention_weights(h_a, h_b)
        v_a = _split_heads(self.v_a(h_a), self.heads)
        v_b = _split_heads(self.v_b(h_b), self.heads)
        ctx_a = _merge_heads(b_to_a @ v_b)
        ctx_b = _merge_heads(a_to_b @ v_a)
        return h_a + self.out_a(ctx_a), h_b + self.out_b(ctx_b)


class SingleStationExchange(nn.Module):
    """Station-local branch interaction: per-station concatenation of the two
    branch states passed through one linear layer and split back."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mix = nn.Linear(2 * dim, 2 * dim, dtype=DTYPE)

    def forward(
        self, h_a: torch.Tensor, h_b: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        mixed = self.mix(torch.cat([h_a, h_b], dim=-1))
        return mixed[..., : self.dim], mixed[..., self.dim :]


def xavier_uniform_(tensor: torch.Tensor, generator: torch.Generator) -> None:
    fan_out, fan_in = tensor.shape[0], tensor.shape[1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Xavier-uniform weights, zero biases, 0.25 PReLU slopes; deterministic
    given the generator (parameters are visited in registration order)."""
    for sub in module.modules():
        if isinstance(sub, nn.Linear):
            xavier_uniform_(sub.weight, generator)
            if sub.bias is not None:
                with torch.no_grad():
                    sub.bias.zero_()
        elif isinstance(sub, GraphGRUCell):
            for gate in ("reset", "update", "cand"):
                xavier_uniform_(getattr(sub, f"{gate}_loop"), generator)
                xavier_uniform_(getattr(sub, f"{gate}_neigh"), generator)
                with torch.no_grad():
                    getattr(sub, f"{gate}_bias").zero_()
        elif isinstance(sub, nn.PReLU):
            with torch.no_grad():
                sub.weight.fill_(0.25)


def gradients(loss: torch.Tensor, module: nn.Module) -> dict[str, np.ndarray]:
    """Reverse-mode derivatives of a scalar loss for every named parameter.

    Parameters the loss does not reach get exact zero gradients.
    """
    if loss.numel() != 1:
        raise ValueError("loss must be a scalar")
    named = list(module.named_parameters())
    grads = torch.autograd.grad(
        loss, [p for _, p in named], allow_unused=True, materialize_grads=False
    )
    out = {}
    for (name, param), grad in zip(named, grads):
        if grad is None:
            grad = torch.zeros_like(param)
        out[name] = grad.detach().cpu().numpy().copy()
    return out
