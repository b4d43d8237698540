"""Attention and channel-MLP primitives shared by the fusion blocks."""
from __future__ import annotations

import math

import torch
import torch.nn as nn


class CrossAttention(nn.Module):
    """Multi-head scaled dot-product attention with separate query and key/value inputs.

    Inputs carry any number of leading batch dims: ``q`` is ``[..., Lq, C]`` and
    ``kv`` is ``[..., Lk, C]``. No positional encoding is added, so the output is
    invariant to a permutation of the ``kv`` rows.
    """

    def __init__(self, dim: int, n_heads: int = 4):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"dim={dim} is not divisible by n_heads={n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # [..., L, C] -> [..., heads, L, head_dim]
        return x.unflatten(-1, (self.n_heads, self.head_dim)).transpose(-3, -2)

    def weights(self, q: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        """Attention probabilities ``[..., heads, Lq, Lk]``; rows sum to one."""
        self._check(q, kv)
        qh = self._split(self.q_proj(q))
        kh = self._split(self.k_proj(kv))
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(self.head_dim)
        return scores.softmax(dim=-1)

    def forward(self, q: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        attn = self.weights(q, kv)
        vh = self._split(self.v_proj(kv))
        out = (attn @ vh).transpose(-3, -2).flatten(-2)
        return self.out_proj(out)

    def _check(self, q: torch.Tensor, kv: torch.Tensor) -> None:
        if q.shape[-1] != self.dim or kv.shape[-1] != self.dim:
            raise ValueError(
                f"channel mismatch: attention width {self.dim}, "
                f"query {q.shape[-1]}, key/value {kv.shape[-1]}"
            )


class MLP(nn.Module):
    """Two linear layers that compress the channels by ``ratio`` and restore them.

    ``out_dim`` defaults to ``dim``; setting it lets the block also change width
    (used where concatenated features are mapped back down).
    """

    def __init__(self, dim: int, ratio: float = 0.5, out_dim: int | None = None,
                 act: type[nn.Module] = nn.GELU):
        super().__init__()
        hidden = max(1, int(round(dim * ratio)))
        self.fc1 = nn.Linear(dim, hidden)
        self.act = act()
        self.fc2 = nn.Linear(hidden, out_dim or dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))
