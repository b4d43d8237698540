"""Temporal modelling blocks: learnable temporal tokens and the pixel-attention baseline."""
from __future__ import annotations

import torch
import torch.nn as nn

from .attention import CrossAttention

TEMPORAL_MODES = ("tokenized", "pixel", "none")


class TokenizedTemporalBlock(nn.Module):
    """Summarizes a clip into ``n_tokens`` learnable tokens and redistributes them to pixels.

    Operates on stage features ``[B, T, h, w, C]``. Pixels are the queries when
    reading from the tokens. With ``residual=False`` the output replaces the input.
    """

    def __init__(self, c_stage: int, c_embed: int, n_tokens: int = 8, n_heads: int = 4,
                 residual: bool = False, token_std: float = 0.02):
        super().__init__()
        self.c_embed = c_embed
        self.residual = residual
        self.align = nn.Linear(c_stage, c_embed)
        self.tokens = nn.Parameter(torch.randn(n_tokens, c_embed) * token_std)
        self.token_attn = CrossAttention(c_embed, n_heads)
        self.pixel_attn = CrossAttention(c_embed, n_heads)
        self.restore = nn.Linear(c_embed, c_stage)

    def summarize(self, x: torch.Tensor) -> torch.Tensor:
        """Per-frame spatial average of the channel-aligned features, ``[B, T, C_e]``."""
        return self.align(x).mean(dim=(-3, -2))

    def update_tokens(self, z: torch.Tensor) -> torch.Tensor:
        tokens = self.tokens.expand(*z.shape[:-2], *self.tokens.shape)
        return self.token_attn(tokens, z)

    def inject(self, tokens: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        b, t, h, w, _ = x.shape
        pixels = self.align(x).reshape(b, t * h * w, self.c_embed)
        out = self.restore(self.pixel_attn(pixels, tokens)).reshape(x.shape)
        return x + out if self.residual else out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.inject(self.update_tokens(self.summarize(x)), x)


class PixelSpatiotemporalAttention(nn.Module):
    """Baseline: one transformer layer with self-attention over all ``T*h*w`` positions.

    Refuses inputs with more than ``max_positions`` positions, because the score
    matrix grows quadratically.
    """

    def __init__(self, c_stage: int, n_heads: int = 4, mlp_ratio: float = 4.0,
                 max_positions: int = 16384):
        super().__init__()
        self.max_positions = max_positions
        self.norm1 = nn.LayerNorm(c_stage)
        self.attn = CrossAttention(c_stage, n_heads)
        self.norm2 = nn.LayerNorm(c_stage)
        hidden = int(c_stage * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(c_stage, hidden), nn.GELU(), nn.Linear(hidden, c_stage))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, h, w, c = x.shape
        n = t * h * w
        if n > self.max_positions:
            raise ValueError(
                f"pixel attention over {n} positions exceeds the limit of {self.max_positions}"
            )
        seq = x.reshape(b, n, c)
        y = self.norm1(seq)
        seq = seq + self.attn(y, y)
        seq = seq + self.mlp(self.norm2(seq))
        return seq.reshape(x.shape)


def attention_cost(mode: str, t: int, h: int, w: int, n_tokens: int) -> int:
    """Number of attention-score elements one temporal block materializes (per head)."""
    if mode == "tokenized":
        return n_tokens * t + t * h * w * n_tokens
    if mode == "pixel":
        return (t * h * w) ** 2
    if mode == "none":
        return 0
    raise ValueError(f"unknown temporal mode {mode!r}; expected one of {TEMPORAL_MODES}")
