"""Shadow detection metrics: MAE, F-beta, IoU and the balanced error rate family.

Every function accepts masks with arbitrary leading batch dims, ``[..., H, W]``,
and reduces over the last two axes. Undefined values are returned as NaN and
reported as ``None`` (absent) in per-frame records.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

BETA_SQ = 0.3
THRESHOLD = 0.5
METRIC_NAMES = ("mae", "f_beta", "iou", "ber", "s_ber", "n_ber")


class ConfusionCounts(NamedTuple):
    tp: np.ndarray
    tn: np.ndarray
    fp: np.ndarray
    fn: np.ndarray


def _pair(pred, gt):
    p, g = np.asarray(pred), np.asarray(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return p, g


def binarize(prob, threshold: float = THRESHOLD) -> np.ndarray:
    return np.asarray(prob) >= threshold


def confusion(pred, gt) -> ConfusionCounts:
    p, g = _pair(pred, gt)
    p, g = p.astype(bool), g.astype(bool)
    ax = (-2, -1)
    return ConfusionCounts(
        (p & g).sum(ax), (~p & ~g).sum(ax), (p & ~g).sum(ax), (~p & g).sum(ax))


def mae(pred_prob, gt) -> np.ndarray:
    p, g = _pair(pred_prob, gt)
    return np.abs(p.astype(np.float64) - g.astype(np.float64)).mean(axis=(-2, -1))


def _div(num, den):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def f_beta_from_counts(c: ConfusionCounts, beta_sq: float = BETA_SQ) -> np.ndarray:
    """0 whenever precision, recall or the F denominator is undefined; NaN if both masks are empty."""
    if beta_sq <= 0:
        raise ValueError("beta_sq must be positive")
    precision = _div(c.tp, c.tp + c.fp)
    recall = _div(c.tp, c.tp + c.fn)
    f = _div((1 + beta_sq) * precision * recall, beta_sq * precision + recall)
    both_empty = (c.tp + c.fp + c.fn) == 0
    return np.where(both_empty, np.nan, f)


def f_beta(pred, gt, beta_sq: float = BETA_SQ) -> np.ndarray:
    return f_beta_from_counts(confusion(pred, gt), beta_sq)


def iou_from_counts(c: ConfusionCounts) -> np.ndarray:
    union = c.tp + c.fp + c.fn
    return np.where(union == 0, 1.0, _div(c.tp, union))


def iou(pred, gt) -> np.ndarray:
    return iou_from_counts(confusion(pred, gt))


def ber_family(c: ConfusionCounts):
    """``(ber, s_ber, n_ber)`` in percent. A class missing from ``gt`` makes its term NaN, and BER with it."""
    pos = np.asarray(c.tp + c.fn)
    neg = np.asarray(c.tn + c.fp)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_ber = np.where(pos > 0, 100.0 * (1.0 - c.tp / np.where(pos > 0, pos, 1)), np.nan)
        n_ber = np.where(neg > 0, 100.0 * (1.0 - c.tn / np.where(neg > 0, neg, 1)), np.nan)
    return (s_ber + n_ber) / 2.0, s_ber, n_ber


def frame_metrics(pred_prob, gt, threshold: float = THRESHOLD,
                  beta_sq: float = BETA_SQ) -> dict[str, np.ndarray]:
    """All six metrics for one frame or a stack of frames; NaN marks an absent value."""
    prob, g = _pair(pred_prob, gt)
    c = confusion(binarize(prob, threshold), g)
    ber, s_ber, n_ber = ber_family(c)
    return {
        "mae": mae(prob, g),
        "f_beta": f_beta_from_counts(c, beta_sq),
        "iou": iou_from_counts(c),
        "ber": ber,
        "s_ber": s_ber,
        "n_ber": n_ber,
    }


def _absent(v):
    v = float(v)
    return None if math.isnan(v) else v


@dataclass
class MetricReport:
    mae: float | None
    f_beta: float | None
    iou: float | None
    ber: float | None
    s_ber: float | None
    n_ber: float | None
    frame_count: int
    per_frame: list[dict] = field(default_factory=list)
    dataset: str = ""

    def to_dict(self) -> dict:
        out = {"dataset": self.dataset, "frame_count": self.frame_count}
        out.update({k: getattr(self, k) for k in METRIC_NAMES})
        out["per_frame"] = self.per_frame
        return out

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def frame_records(pred_prob, gt, video_id: str = "", frame_ids: Iterable | None = None,
                  threshold: float = THRESHOLD, beta_sq: float = BETA_SQ) -> list[dict]:
    """Per-frame metric dicts for a ``[T, H, W]`` stack."""
    values = frame_metrics(pred_prob, gt, threshold, beta_sq)
    n = len(values["mae"])
    frame_ids = list(frame_ids) if frame_ids is not None else list(range(n))
    return [
        {"video": video_id, "frame": frame_ids[i], **{k: _absent(values[k][i]) for k in METRIC_NAMES}}
        for i in range(n)
    ]


def _mean_present(values):
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def aggregate(records: list[dict], mode: str = "per_frame", dataset: str = "") -> MetricReport:
    """Unweighted mean of each metric over the records where it is present.

    ``per_video`` first averages within each video, then across videos.
    """
    if not records:
        raise ValueError("cannot aggregate an empty list of frame metrics")
    if mode == "per_frame":
        summary = {k: _mean_present(r[k] for r in records) for k in METRIC_NAMES}
    elif mode == "per_video":
        groups: dict[str, list[dict]] = {}
        for r in records:
            groups.setdefault(r.get("video", ""), []).append(r)
        per_video = [{k: _mean_present(r[k] for r in g) for k in METRIC_NAMES}
                     for g in groups.values()]
        summary = {k: _mean_present(v[k] for v in per_video) for k in METRIC_NAMES}
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return MetricReport(**summary, frame_count=len(records), per_frame=list(records),
                        dataset=dataset)
