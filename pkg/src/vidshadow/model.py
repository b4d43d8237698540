"""Frozen toy encoder, per-stage temporal/semantic adapters and the two-head decoder."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dsb import DarkAwareSemanticBlock
from .ttb import TEMPORAL_MODES, PixelSpatiotemporalAttention, TokenizedTemporalBlock
from .vmm import EmbeddingBundle, VisionLanguageMatch

STAGE_STRIDE = 16


@dataclass
class ModelConfig:
    image_size: int = 64
    patch_size: int = 4
    n_stages: int = 4
    c_b: int = 64
    c_e: int = 64
    c_dec: int = 64
    l_k: int = 8
    n_heads: int = 4
    c_text: int = 32
    c_image: int = 48
    freeze_backbone: bool = True
    temporal_mode: str = "tokenized"
    ttb_residual: bool = True
    decoder_fusion: str = "sum"
    decoder_stages: list[int] | None = None
    pixel_attention_limit: int = 16384
    backbone_seed: int = 0

    def validate(self) -> None:
        if self.image_size % STAGE_STRIDE or self.image_size % self.patch_size:
            raise ValueError(
                f"image_size {self.image_size} must be divisible by {STAGE_STRIDE} "
                f"and by patch_size {self.patch_size}"
            )
        if STAGE_STRIDE % self.patch_size:
            raise ValueError(f"patch_size must divide {STAGE_STRIDE}, got {self.patch_size}")
        if self.n_stages < 1:
            raise ValueError("n_stages must be >= 1")
        if self.temporal_mode not in TEMPORAL_MODES:
            raise ValueError(f"temporal_mode must be one of {TEMPORAL_MODES}")
        if self.decoder_fusion not in ("sum", "concat"):
            raise ValueError("decoder_fusion must be 'sum' or 'concat'")
        for c in (self.c_b, self.c_e):
            if c % self.n_heads:
                raise ValueError(f"width {c} not divisible by n_heads {self.n_heads}")

    @property
    def grid(self) -> int:
        return self.image_size // STAGE_STRIDE

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderBlock(nn.Module):
    """Depthwise spatial mixing followed by a channel MLP, both residual."""

    def __init__(self, dim: int):
        super().__init__()
        self.spatial = nn.Conv2d(dim, dim, 3, padding=1, groups=dim)
        self.norm = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, T, h, w, C]
        b, t, h, w, c = x.shape
        y = self.spatial(x.reshape(b * t, h, w, c).permute(0, 3, 1, 2))
        x = x + y.permute(0, 2, 3, 1).reshape(x.shape)
        return x + self.mlp(self.norm(x))


class ToyEncoder(nn.Module):
    """Stand-in backbone: patch embedding down to ``H/16`` plus ``n_stages`` blocks.

    Any backbone that maps frames ``[B, T, 3, H, W]`` to a ``[B, T, H/16, W/16, C_b]``
    token grid and exposes per-stage blocks can replace it.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c0 = max(8, cfg.c_b // 2)
        rest = STAGE_STRIDE // cfg.patch_size
        self.patch_embed = nn.Conv2d(3, c0, cfg.patch_size, stride=cfg.patch_size)
        self.reduce = nn.Conv2d(c0, cfg.c_b, rest, stride=rest)
        self.stages = nn.ModuleList(EncoderBlock(cfg.c_b) for _ in range(cfg.n_stages))

    def embed(self, frames: torch.Tensor) -> torch.Tensor:
        b, t, _, h, w = frames.shape
        y = self.patch_embed(frames.reshape(b * t, *frames.shape[2:]))
        y = self.reduce(F.gelu(y))
        return y.permute(0, 2, 3, 1).reshape(b, t, *y.shape[-2:], y.shape[1])

    def forward(self, frames: torch.Tensor) -> list[torch.Tensor]:
        x = self.embed(frames)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class UpBlock(nn.Module):
    """Convolution first, then a fixed 2x bilinear interpolation."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm = nn.BatchNorm2d(c_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.norm(self.conv(x)))
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class Decoder(nn.Module):
    """Fuses stage features at ``H/16``, upsamples to ``H/4`` and emits shadow/edge logits."""

    def __init__(self, c_stage: int, c_dec: int, n_inputs: int, fusion: str = "sum"):
        super().__init__()
        self.fusion = fusion
        self.stage_mlps = nn.ModuleList(
            nn.Sequential(nn.Linear(c_stage, c_dec), nn.GELU(), nn.Linear(c_dec, c_dec))
            for _ in range(n_inputs)
        )
        c_fused = c_dec * (n_inputs if fusion == "concat" else 1)
        self.fuse = nn.Sequential(
            nn.Conv2d(c_fused, c_dec, 3, padding=1),
            nn.BatchNorm2d(c_dec),
            nn.ReLU(),
            nn.Conv2d(c_dec, c_dec, 3, padding=1),
        )
        self.up1 = UpBlock(c_dec, c_dec)
        self.up2 = UpBlock(c_dec, c_dec)
        self.mask_conv = nn.Conv2d(c_dec, c_dec, 3, padding=1)
        self.shadow_head = nn.Conv2d(c_dec, 1, 1)
        self.edge_head = nn.Conv2d(c_dec, 1, 1)

    def forward(self, feats: list[torch.Tensor], out_size: int):
        b, t, h, w, _ = feats[0].shape
        mapped = [mlp(f) for mlp, f in zip(self.stage_mlps, feats)]
        y = torch.cat(mapped, dim=-1) if self.fusion == "concat" else torch.stack(mapped).sum(0)
        y = y.reshape(b * t, h, w, -1).permute(0, 3, 1, 2)
        y = self.up2(self.up1(self.fuse(y)))
        y = F.relu(self.mask_conv(y))
        # heads stay in separate graphs so an unused head receives no gradient at all
        return tuple(
            F.interpolate(head(y), size=(out_size, out_size), mode="bilinear",
                          align_corners=False).reshape(b, t, out_size, out_size)
            for head in (self.shadow_head, self.edge_head))


@dataclass
class Prediction:
    shadow_logits: torch.Tensor  # [B, T, H, W]
    edge_logits: torch.Tensor  # [B, T, H, W]
    aux_masks: list[torch.Tensor] = field(default_factory=list)  # per stage [B, T, h, w]


class ShadowVideoModel(nn.Module):
    """Full detector: frozen encoder with temporal blocks before and semantic blocks after each stage."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        # the backbone is frozen, so its weights come from a fixed generator
        # independent of the training seed
        with torch.random.fork_rng():
            torch.manual_seed(cfg.backbone_seed)
            self.encoder = ToyEncoder(cfg)
        self.vmm = VisionLanguageMatch(cfg.c_text, cfg.c_image, cfg.c_e, cfg.n_heads)
        if cfg.temporal_mode == "tokenized":
            self.temporal = nn.ModuleList(
                TokenizedTemporalBlock(cfg.c_b, cfg.c_e, cfg.l_k, cfg.n_heads, cfg.ttb_residual)
                for _ in range(cfg.n_stages)
            )
        elif cfg.temporal_mode == "pixel":
            self.temporal = nn.ModuleList(
                PixelSpatiotemporalAttention(cfg.c_b, cfg.n_heads,
                                             max_positions=cfg.pixel_attention_limit)
                for _ in range(cfg.n_stages)
            )
        else:
            self.temporal = None
        self.dsb = nn.ModuleList(
            DarkAwareSemanticBlock(cfg.c_b, cfg.c_e, cfg.n_heads) for _ in range(cfg.n_stages)
        )
        self.decoder_stages = (
            list(range(cfg.n_stages)) if cfg.decoder_stages is None else list(cfg.decoder_stages)
        )
        self.decoder = Decoder(cfg.c_b, cfg.c_dec, len(self.decoder_stages), cfg.decoder_fusion)
        if cfg.freeze_backbone:
            self.encoder.requires_grad_(False)

    def forward(self, frames: torch.Tensor, bundle: EmbeddingBundle) -> Prediction:
        """``frames`` is ``[B, T, 3, H, W]`` in [0, 1]; bundle tensors carry the same batch dim."""
        h = frames.shape[-1]
        if frames.shape[-2] != h or h % self.cfg.patch_size or h % STAGE_STRIDE:
            raise ValueError(f"frames must be square with size divisible by {STAGE_STRIDE}")
        e_s, e_d = self.vmm(bundle)
        x = self.encoder.embed(frames)
        stage_out, aux = [], []
        for j, stage in enumerate(self.encoder.stages):
            if self.temporal is not None:
                x = self.temporal[j](x)
            x = stage(x)
            x, aux_j = self.dsb[j](x, e_s, e_d)
            stage_out.append(x)
            aux.append(aux_j)
        shadow, edge = self.decoder([stage_out[i] for i in self.decoder_stages], h)
        return Prediction(shadow, edge, aux)

    def backbone_parameters(self):
        return list(self.encoder.parameters())

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def parameter_counts(self) -> dict[str, int]:
        total = sum(p.numel() for p in self.parameters())
        trainable = sum(p.numel() for p in self.trainable_parameters())
        return {"total": total, "trainable": trainable}


def backbone_checksum(model: ShadowVideoModel) -> str:
    digest = hashlib.sha256()
    for name, p in model.encoder.named_parameters():
        digest.update(name.encode())
        digest.update(p.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
