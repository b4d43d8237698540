"""Vision-language matching: text priors for shadow and dark regions attend to image patches."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import MLP, CrossAttention


@dataclass
class EmbeddingBundle:
    """Frozen upstream embeddings for one clip (or a batch of clips).

    ``p_s`` is ``[..., L_s, C_l]``, ``p_d`` is ``[..., L_d, C_l]`` and ``p_x`` holds the
    image patch embeddings flattened over frames, ``[..., T*M, C_m]``.
    """

    p_s: torch.Tensor
    p_d: torch.Tensor
    p_x: torch.Tensor

    def to(self, *args, **kwargs) -> "EmbeddingBundle":
        return EmbeddingBundle(*(t.to(*args, **kwargs) for t in (self.p_s, self.p_d, self.p_x)))


class VisionLanguageMatch(nn.Module):
    """Produces the shadow context ``e_s`` and dark-region context ``e_d``.

    Dark context: ``e_d = MLP(attn(p_d, p_x))``. Shadow context reuses the
    pre-MLP dark feature: ``e_s = MLP(cat(p_s', attn(p_s', p_d')))`` with
    ``p_s' = attn(p_s, p_x)``.
    """

    def __init__(self, c_text: int, c_image: int, c_embed: int, n_heads: int = 4):
        super().__init__()
        self.proj_s = nn.Linear(c_text, c_embed)
        self.proj_d = nn.Linear(c_text, c_embed)
        self.proj_x = nn.Linear(c_image, c_embed)
        self.attn_dark = CrossAttention(c_embed, n_heads)
        self.mlp_dark = MLP(c_embed)
        self.attn_shadow = CrossAttention(c_embed, n_heads)
        self.attn_shadow_dark = CrossAttention(c_embed, n_heads)
        self.mlp_shadow = MLP(2 * c_embed, ratio=0.5, out_dim=c_embed)

    def project(self, bundle: EmbeddingBundle):
        return self.proj_s(bundle.p_s), self.proj_d(bundle.p_d), self.proj_x(bundle.p_x)

    def match_dark(self, p_d: torch.Tensor, p_x: torch.Tensor):
        """Returns ``(e_d, p_d_prime)``; the second is needed by :meth:`match_shadow`."""
        p_d_prime = self.attn_dark(p_d, p_x)
        return self.mlp_dark(p_d_prime), p_d_prime

    def match_shadow(self, p_s: torch.Tensor, p_x: torch.Tensor, p_d_prime: torch.Tensor):
        p_s_prime = self.attn_shadow(p_s, p_x)
        guided = self.attn_shadow_dark(p_s_prime, p_d_prime)
        return self.mlp_shadow(torch.cat([p_s_prime, guided], dim=-1))

    def forward(self, bundle: EmbeddingBundle):
        p_s, p_d, p_x = self.project(bundle)
        e_d, p_d_prime = self.match_dark(p_d, p_x)
        e_s = self.match_shadow(p_s, p_x, p_d_prime)
        return e_s, e_d
