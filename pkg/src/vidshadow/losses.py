"""Semantic, edge and mask losses and their weighted sum."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

DICE_EPS = 1.0


@dataclass(frozen=True)
class LossWeights:
    lambda_sem: float = 1.0
    lambda_edge: float = 0.5
    lambda_mask: float = 1.0

    def __post_init__(self):
        for name in ("lambda_sem", "lambda_edge", "lambda_mask"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    sem: torch.Tensor
    edge: torch.Tensor
    mask: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("sem", "edge", "mask", "total")}


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def bce_logits(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _same_shape(logits, target)
    return F.binary_cross_entropy_with_logits(logits, target)


def dice(probs: torch.Tensor, target: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """Soft Dice loss over all elements: ``1 - (2 sum(p t) + eps) / (sum p + sum t + eps)``."""
    _same_shape(probs, target)
    inter = (probs * target).sum()
    return 1.0 - (2.0 * inter + eps) / (probs.sum() + target.sum() + eps)


def sem_loss(aux_masks, targets) -> torch.Tensor:
    """Unweighted sum over stages of the per-stage mean squared error."""
    if len(aux_masks) != len(targets):
        raise ValueError(f"{len(aux_masks)} auxiliary masks for {len(targets)} targets")
    if not aux_masks:
        raise ValueError("at least one stage is required")
    total = 0.0
    for a, t in zip(aux_masks, targets):
        _same_shape(a, t)
        total = total + F.mse_loss(a, t)
    return total


def seg_loss(logits: torch.Tensor, target: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """BCE-with-logits plus Dice on the sigmoid probabilities (used for both edge and mask)."""
    return bce_logits(logits, target) + dice(torch.sigmoid(logits), target, eps)


edge_loss = seg_loss
mask_loss = seg_loss


def total_loss(sem, edge, mask, weights: LossWeights = LossWeights(),
               check_finite: bool = True) -> LossBreakdown:
    """Weighted sum of the three terms; callers that report divergence themselves
    pass ``check_finite=False``."""
    parts = [torch.as_tensor(v) for v in (sem, edge, mask)]
    if check_finite and not all(torch.isfinite(v).all() for v in parts):
        raise ValueError("non-finite loss term: " + ", ".join(f"{float(v):g}" for v in parts))
    sem, edge, mask = parts
    total = weights.lambda_sem * sem + weights.lambda_edge * edge + weights.lambda_mask * mask
    return LossBreakdown(sem, edge, mask, total)
