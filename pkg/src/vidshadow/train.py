"""Training, evaluation, ablation runs and mask preprocessing."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (BundleDirectoryProvider, DatasetIndex, SyntheticBundleProvider, VideoClip,
                   clip_starts, distractor_masks, load_clip, sample_clips, scan_dataset,
                   synth_shadow_videos)
from .maskops import (edge_mask, penumbra_reweight, read_mask, stage_targets, write_mask,
                      write_soft_mask)
from .metrics import aggregate, frame_records, MetricReport
from .model import STAGE_STRIDE, ShadowVideoModel, backbone_checksum
from .ttb import TEMPORAL_MODES, attention_cost
from .vmm import EmbeddingBundle

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, breakdown: dict):
        super().__init__(f"non-finite loss at step {step}: {breakdown}")
        self.step = step
        self.breakdown = breakdown


@dataclass
class ClipSample:
    frames: torch.Tensor  # [T, 3, H, W]
    mask: torch.Tensor  # [T, H, W]
    edge: torch.Tensor  # [T, H, W]
    stage: torch.Tensor  # [T, h, w]
    bundle: EmbeddingBundle
    clip_id: str


@dataclass
class TrainResult:
    model: ShadowVideoModel
    log: list[dict]
    checkpoint: Path | None
    parameter_counts: dict
    backbone_checksum: tuple[str, str]
    evals: list[dict] = field(default_factory=list)


def make_provider(cfg: RunConfig):
    if cfg.data.bundle_dir:
        return BundleDirectoryProvider(cfg.data.bundle_dir)
    return SyntheticBundleProvider(
        l_s=cfg.data.text_tokens, l_d=cfg.data.text_tokens, patches=cfg.data.image_patches,
        c_l=cfg.model.c_text, c_m=cfg.model.c_image, seed=cfg.data.synth_seed)


def ensure_dataset(cfg: RunConfig, split: str | None = None) -> DatasetIndex:
    split = split or cfg.data.split
    root = Path(cfg.paths.data)
    if not (root / split / "images").is_dir() and cfg.data.synthesize_if_missing:
        size = cfg.model.image_size
        log.info("synthesizing %d videos into %s", cfg.data.synth_videos, root)
        synth_shadow_videos(root, cfg.data.synth_videos, cfg.data.synth_frames, size, size,
                            seed=cfg.data.synth_seed, split=split)
    return scan_dataset(root, split, cfg.data.frame_glob)


def edge_target(mask: np.ndarray, kernel: int, mode: str) -> np.ndarray:
    if mode == "hard":
        return edge_mask(mask, kernel).astype(np.float32)
    # soft: the penumbra band weighted by how far the reweighted mask falls below 1
    return (mask * (1.0 - penumbra_reweight(mask, kernel))).astype(np.float32)


def prepare_clip(clip: VideoClip, cfg: RunConfig, provider) -> ClipSample:
    k = cfg.losses.erosion_kernel
    masks = clip.masks
    return ClipSample(
        frames=torch.from_numpy(np.ascontiguousarray(clip.frames.transpose(0, 3, 1, 2))).float(),
        mask=torch.from_numpy(masks.astype(np.float32)),
        edge=torch.from_numpy(np.stack([edge_target(m, k, cfg.losses.edge_target) for m in masks])),
        stage=torch.from_numpy(
            np.stack([stage_targets(m, [STAGE_STRIDE], k)[0] for m in masks]).astype(np.float32)),
        bundle=provider(clip),
        clip_id=clip.clip_id,
    )


def collate(samples: list[ClipSample]):
    frames = torch.stack([s.frames for s in samples])
    bundle = EmbeddingBundle(*(torch.stack([getattr(s.bundle, n) for s in samples])
                               for n in ("p_s", "p_d", "p_x")))
    targets = {k: torch.stack([getattr(s, k) for s in samples]) for k in ("mask", "edge", "stage")}
    return frames, bundle, targets


def compute_losses(pred, targets, cfg: RunConfig) -> L.LossBreakdown:
    """Disabled terms are constant zeros, so they add nothing to any gradient."""
    lc = cfg.losses
    zero = torch.zeros((), dtype=pred.shadow_logits.dtype)
    sem = (L.sem_loss(pred.aux_masks, [targets["stage"]] * len(pred.aux_masks))
           if lc.enable_sem else zero)
    edge = L.edge_loss(pred.edge_logits, targets["edge"]) if lc.enable_edge else zero
    mask = L.mask_loss(pred.shadow_logits, targets["mask"]) if lc.enable_mask else zero
    return L.total_loss(sem, edge, mask, lc.weights, check_finite=False)


def build_model(cfg: RunConfig) -> ShadowVideoModel:
    torch.manual_seed(cfg.seed)
    return ShadowVideoModel(cfg.model_config())


def _flat(params) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in params]) if params else torch.zeros(0)


def train(cfg: RunConfig, out_dir=None, save: bool = True) -> TrainResult:
    """AdamW over the trainable parameters; fully deterministic for a given config."""
    cfg.validate()
    torch.use_deterministic_algorithms(True)
    out = Path(out_dir or cfg.paths.out)
    index = ensure_dataset(cfg)
    provider = make_provider(cfg)
    sc = cfg.schedule
    samples = [prepare_clip(c, cfg, provider)
               for c in sample_clips(index, sc.frames_per_clip, sc.clip_stride)]
    if not samples:
        raise ValueError(f"no clips of {sc.frames_per_clip} frames in {index.root}")

    model = build_model(cfg)
    counts = model.parameter_counts()
    log.info("parameters: %d trainable of %d total", counts["trainable"], counts["total"])
    before = backbone_checksum(model)
    params = model.trainable_parameters()
    opt = torch.optim.AdamW(params, lr=cfg.optimizer.lr, weight_decay=cfg.optimizer.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    batch = min(sc.batch_clips, len(samples))
    records, evals, timing = [], [], []
    model.train()
    for step in range(sc.steps):
        t0 = time.perf_counter()
        chosen = [samples[i] for i in rng.choice(len(samples), batch, replace=False)]
        flips = rng.random(batch) < cfg.data.flip_p
        chosen = [_flip(s) if f else s for s, f in zip(chosen, flips)]
        frames, bundle, targets = collate(chosen)
        pred = model(frames, bundle)
        parts = compute_losses(pred, targets, cfg)
        values = parts.as_floats()
        if not all(np.isfinite(list(values.values()))):
            raise TrainingDiverged(step, values)
        prev = _flat(params)
        opt.zero_grad(set_to_none=True)
        parts.total.backward()
        opt.step()
        update = float((_flat(params) - prev).norm())
        records.append({"step": step, **values, "update_norm": update,
                        "clips": [s.clip_id for s in chosen]})
        timing.append(time.perf_counter() - t0)
        if sc.log_every and (step % sc.log_every == 0 or step == sc.steps - 1):
            log.info("step %d loss %.4f (sem %.4f edge %.4f mask %.4f)", step, values["total"],
                     values["sem"], values["edge"], values["mask"])
        if sc.eval_every and (step + 1) % sc.eval_every == 0:
            report = evaluate(model, index, cfg, provider)
            evals.append({"step": step, **report.summary()})
            model.train()
    model.eval()
    after = backbone_checksum(model)
    ckpt = None
    if save:
        out.mkdir(parents=True, exist_ok=True)
        ckpt = save_checkpoint(model, out / "checkpoint.ckpt", extra={"run_config": cfg.to_dict()})
        (out / "train_log.json").write_text(json.dumps(
            {"parameter_counts": counts, "steps": records, "evals": evals}, indent=1))
        (out / "timing.json").write_text(json.dumps({"step_seconds": timing}))
    return TrainResult(model, records, ckpt, counts, (before, after), evals)


def _flip(s: ClipSample) -> ClipSample:
    return dataclasses.replace(
        s, frames=s.frames.flip(-1), mask=s.mask.flip(-1), edge=s.edge.flip(-1),
        stage=s.stage.flip(-1), clip_id=s.clip_id + ":flip")


@torch.no_grad()
def predict_video(model: ShadowVideoModel, video, cfg: RunConfig, provider) -> tuple[np.ndarray, np.ndarray]:
    """Shadow probabilities for every frame of ``video`` as ``(probs, gt)``, both ``[N, H, W]``.

    Frames are covered by windows of ``frames_per_clip``; each frame is scored by
    the first window containing it.
    """
    model.eval()
    n, t = len(video), cfg.schedule.frames_per_clip
    starts = clip_starts(n, t, t) or [0]
    length = min(t, n)
    if starts[-1] + length < n:
        starts.append(n - length)
    probs, gts = [None] * n, [None] * n
    for s in starts:
        clip = load_clip(video, s, length)
        sample = prepare_clip(clip, cfg, provider)
        frames, bundle, _ = collate([sample])
        p = torch.sigmoid(model(frames, bundle).shadow_logits[0]).numpy()
        for i in range(length):
            if probs[s + i] is None:
                probs[s + i], gts[s + i] = p[i], clip.masks[i]
    return np.stack(probs), np.stack(gts)


def evaluate(model: ShadowVideoModel, index: DatasetIndex, cfg: RunConfig,
             provider=None) -> MetricReport:
    provider = provider or make_provider(cfg)
    records = []
    for video in index.videos:
        probs, gts = predict_video(model, video, cfg, provider)
        records += frame_records(probs, gts, video.video_id,
                                 [p.stem for p in video.frames], cfg.eval.threshold,
                                 cfg.eval.beta_sq)
    return aggregate(records, cfg.eval.aggregation, dataset=f"{index.root}/{index.split}")


def distractor_false_positive_rate(model: ShadowVideoModel, index: DatasetIndex,
                                   cfg: RunConfig, provider=None) -> float:
    """Fraction of distractor pixels (pooled over all frames) predicted as shadow."""
    provider = provider or make_provider(cfg)
    hits = total = 0
    for video in index.videos:
        dmask = distractor_masks(index, video)
        if dmask is None:
            continue
        probs, _ = predict_video(model, video, cfg, provider)
        hits += int(((probs >= cfg.eval.threshold) & dmask).sum())
        total += int(dmask.sum())
    if total == 0:
        raise ValueError("dataset has no distractor annotations")
    return hits / total


def evaluate_checkpoint(ckpt, data_root, cfg: RunConfig | None = None, split: str | None = None):
    model = load_checkpoint(ckpt)
    if cfg is None:
        from .checkpoint import read_manifest
        from .config import from_dict
        saved = read_manifest(ckpt)["extra"].get("run_config")
        cfg = from_dict(saved) if saved else RunConfig()
    index = scan_dataset(data_root, split or cfg.data.eval_split, cfg.data.frame_glob)
    return evaluate(model, index, cfg), model, cfg


def temporal_cost_report(mode: str, t: int, grid: int, n_tokens: int, n_heads: int,
                         n_stages: int, batch: int) -> dict:
    per_block = attention_cost(mode, t, grid, grid, n_tokens)
    return {
        "attention_cost": per_block,
        # score elements held for backward across all temporal blocks in a batch
        "activation_elements": per_block * n_heads * n_stages * batch,
    }


REFERENCE_GRID = {"t": 5, "grid": 32, "n_tokens": 8}


def ablate_temporal(cfg: RunConfig, out_dir=None) -> dict:
    """Trains and evaluates every temporal mode on the same data and seed."""
    out = Path(out_dir or cfg.paths.out)
    rows = {}
    for mode in TEMPORAL_MODES:
        run = dataclasses.replace(cfg, temporal_mode=mode)
        t0 = time.perf_counter()
        result = train(run, out / f"temporal_{mode}")
        seconds = time.perf_counter() - t0
        report = evaluate(result.model, ensure_dataset(run, run.data.eval_split), run)
        m = run.model_config()
        rows[mode] = {
            "metrics": report.summary(),
            "parameters": result.parameter_counts,
            "final_loss": result.log[-1]["total"] if result.log else None,
            "train_seconds": seconds,
            "run_grid": temporal_cost_report(mode, cfg.schedule.frames_per_clip, m.grid, m.l_k,
                                             m.n_heads, m.n_stages, cfg.schedule.batch_clips),
            "reference_grid": temporal_cost_report(mode, REFERENCE_GRID["t"], REFERENCE_GRID["grid"],
                                                   REFERENCE_GRID["n_tokens"], m.n_heads,
                                                   m.n_stages, cfg.schedule.batch_clips),
        }
    ref_tok = rows["tokenized"]["reference_grid"]["attention_cost"]
    ref_pix = rows["pixel"]["reference_grid"]["attention_cost"]
    report = {
        "seed": cfg.seed,
        "reference_grid": REFERENCE_GRID,
        "modes": rows,
        "pixel_to_tokenized_cost_ratio": ref_pix / ref_tok,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablate_temporal.json").write_text(json.dumps(report, indent=1))
    return report


LOSS_ROWS = {
    "mask": {"enable_mask": True, "enable_edge": False, "enable_sem": False},
    "mask+edge": {"enable_mask": True, "enable_edge": True, "enable_sem": False},
    "all": {"enable_mask": True, "enable_edge": True, "enable_sem": True},
}


def _param_groups(model: ShadowVideoModel) -> dict[str, torch.Tensor]:
    return {
        "edge_head": _flat(list(model.decoder.edge_head.parameters())),
        "aux_heads": _flat([p for d in model.dsb for p in d.aux_head.parameters()]),
        "shadow_head": _flat(list(model.decoder.shadow_head.parameters())),
    }


def ablate_losses(cfg: RunConfig, out_dir=None) -> dict:
    """Runs the mask / mask+edge / all-losses configurations with identical seeds.

    For each row, reports whether the heads fed only by each loss moved; a
    disabled loss must leave its head bit-identical to initialization.
    """
    out = Path(out_dir or cfg.paths.out)
    init = _param_groups(build_model(cfg))
    rows = {}
    for name, flags in LOSS_ROWS.items():
        run = dataclasses.replace(cfg, losses=dataclasses.replace(cfg.losses, **flags))
        result = train(run, out / f"losses_{name.replace('+', '_')}")
        report = evaluate(result.model, ensure_dataset(run, run.data.eval_split), run)
        trained = _param_groups(result.model)
        rows[name] = {
            "enabled": flags,
            "metrics": report.summary(),
            "final_losses": {k: result.log[-1][k] for k in ("sem", "edge", "mask", "total")}
            if result.log else None,
            "changed": {k: bool(not torch.equal(init[k], trained[k])) for k in init},
        }
    report = {"seed": cfg.seed, "rows": rows}
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablate_losses.json").write_text(json.dumps(report, indent=1))
    return report


def preprocess_masks(index: DatasetIndex, out_dir, kernel: int = 3) -> int:
    """Writes the reweighted soft mask (float32 blob) and edge mask (PNG) for every label."""
    out = Path(out_dir)
    n = 0
    for video in index.videos:
        vdir = out / video.video_id
        vdir.mkdir(parents=True, exist_ok=True)
        for path in video.masks:
            m = read_mask(path)
            write_soft_mask(vdir / f"{path.stem}.soft.f32", penumbra_reweight(m, kernel))
            write_mask(vdir / f"{path.stem}.edge.png", edge_mask(m, kernel))
            n += 1
    return n
