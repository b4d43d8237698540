"""Dark-aware semantic block: injects the text contexts into an encoder stage."""
from __future__ import annotations

import torch
import torch.nn as nn

from .attention import CrossAttention


class DarkAwareSemanticBlock(nn.Module):
    """Fuses shadow/dark contexts into stage features ``x`` of shape ``[B, T, h, w, C_b]``.

    ``alpha`` and ``beta`` start at zero, so a freshly built block is the identity
    on features. Returns the enhanced features and a soft auxiliary mask
    ``[B, T, h, w]`` in (0, 1).
    """

    def __init__(self, c_stage: int, c_embed: int, n_heads: int = 4):
        super().__init__()
        self.c_embed = c_embed
        self.compress = nn.Linear(c_stage, c_embed)
        self.attn_shadow = CrossAttention(c_embed, n_heads)
        self.attn_dark = CrossAttention(c_embed, n_heads)
        self.alpha = nn.Parameter(torch.zeros(()))
        self.beta = nn.Parameter(torch.zeros(()))
        self.aux_head = nn.Linear(c_embed, 1)
        # no bias: zero fused features must leave x untouched
        self.expand = nn.Linear(c_embed, c_stage, bias=False)

    def forward(self, x: torch.Tensor, e_s: torch.Tensor, e_d: torch.Tensor):
        if e_s.shape[-1] != self.c_embed or e_d.shape[-1] != self.c_embed:
            raise ValueError(
                f"context width must be {self.c_embed}, got {e_s.shape[-1]} and {e_d.shape[-1]}"
            )
        b, t, h, w, _ = x.shape
        xc = self.compress(x).reshape(b, t * h * w, self.c_embed)
        x_s = self.attn_shadow(xc, e_s)
        x_d = self.attn_dark(xc, e_d)
        fused = self.alpha * x_s + self.beta * x_d
        aux = torch.sigmoid(self.aux_head(fused)).reshape(b, t, h, w)
        out = x + self.expand(fused).reshape(x.shape)
        return out, aux
