"""Dataset layout scanning, synthetic shadow videos, clip sampling and embedding bundles."""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image
from scipy import ndimage

from .maskops import read_mask, write_mask
from .vmm import EmbeddingBundle

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    frames: tuple[Path, ...]
    masks: tuple[Path, ...]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class DatasetIndex:
    root: Path
    split: str
    videos: list[VideoEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.videos)

    @property
    def n_frames(self) -> int:
        return sum(len(v) for v in self.videos)


@dataclass
class VideoClip:
    frames: np.ndarray  # [T, H, W, 3] float32 in [0, 1]
    masks: np.ndarray  # [T, H, W] bool
    video_id: str
    clip_id: str

    def __post_init__(self):
        if len(self.frames) != len(self.masks):
            raise ValueError("frames and masks must have the same length")
        if self.frames.shape[1:3] != self.masks.shape[1:]:
            raise ValueError("frame and mask sizes differ")

    def flipped(self) -> "VideoClip":
        """Horizontal flip applied identically to every frame and mask."""
        return VideoClip(self.frames[:, :, ::-1].copy(), self.masks[:, :, ::-1].copy(),
                         self.video_id, self.clip_id + ":flip")


class DatasetError(ValueError):
    pass


def scan_dataset(root, split: str = "train", frame_glob: str = "*") -> DatasetIndex:
    """Index ``<root>/<split>/images/<video>/<frame>`` against ``<root>/<split>/labels/<video>/<frame>.png``.

    Frames and labels are paired by file stem; any unpaired file is an error.
    With a non-default ``frame_glob`` only labels of selected frames are considered.
    """
    root = Path(root)
    index = DatasetIndex(root=root, split=split)
    image_dir = root / split / "images"
    label_dir = root / split / "labels"
    if not image_dir.is_dir():
        log.warning("no images directory at %s; returning an empty index", image_dir)
        return index
    problems = []
    for vdir in sorted(p for p in image_dir.iterdir() if p.is_dir()):
        frames = {p.stem: p for p in vdir.glob(frame_glob) if p.suffix.lower() in IMAGE_SUFFIXES}
        ldir = label_dir / vdir.name
        masks = {p.stem: p for p in ldir.glob("*.png")} if ldir.is_dir() else {}
        if frame_glob != "*":
            masks = {k: m for k, m in masks.items() if k in frames}
        problems += [f"frame without mask: {frames[s]}" for s in sorted(frames.keys() - masks.keys())]
        problems += [f"mask without frame: {masks[s]}" for s in sorted(masks.keys() - frames.keys())]
        stems = sorted(frames.keys() & masks.keys())
        if stems:
            index.videos.append(VideoEntry(
                vdir.name, tuple(frames[s] for s in stems), tuple(masks[s] for s in stems)))
    if problems:
        raise DatasetError("unpaired dataset files:\n  " + "\n  ".join(problems))
    if not index.videos:
        log.warning("dataset at %s/%s is empty", root, split)
    return index


def read_frame(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def load_clip(video: VideoEntry, start: int, length: int) -> VideoClip:
    sl = slice(start, start + length)
    frames = np.stack([read_frame(p) for p in video.frames[sl]])
    masks = np.stack([read_mask(p) for p in video.masks[sl]])
    return VideoClip(frames, masks, video.video_id, f"{video.video_id}@{start}")


def clip_starts(n_frames: int, length: int, stride: int) -> list[int]:
    if length < 1 or stride < 1:
        raise ValueError("clip length and stride must be >= 1")
    if n_frames < length:
        return []
    return list(range(0, n_frames - length + 1, stride))


def sample_clips(index: DatasetIndex, length: int, stride: int = 1, seed: int | None = None,
                 shuffle: bool = False) -> Iterator[VideoClip]:
    """Contiguous windows of ``length`` frames from every video; short videos are skipped."""
    windows = []
    for v in index.videos:
        starts = clip_starts(len(v), length, stride)
        if not starts:
            log.warning("video %s has %d frames < clip length %d; skipped", v.video_id, len(v), length)
        windows += [(v, s) for s in starts]
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(windows))
        windows = [windows[i] for i in order]
    for v, s in windows:
        yield load_clip(v, s, length)


# --- synthetic videos -------------------------------------------------------------------

@dataclass
class SynthParams:
    """Sizes are fractions of the shorter frame side; ``margin`` is in pixels."""
    shadow_radii: tuple[float, float] = (13 / 64, 20 / 64)
    distractor_half: tuple[float, float] = (6 / 64, 9 / 64)
    attenuation: tuple[float, float] = (0.45, 0.6)
    rim_sigma: float = 1.2
    speed: float = 1.0
    margin: float = 3.0
    max_tries: int = 200


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    base = rng.uniform(0.45, 0.8, size=3)
    low = ndimage.gaussian_filter(rng.normal(size=(h, w)), 8) * 6.0
    fine = ndimage.gaussian_filter(rng.normal(size=(h, w, 3)), (0.8, 0.8, 0)) * 0.25
    img = base[None, None, :] * (1.0 + 0.25 * low[..., None]) + fine
    return np.clip(img, 0.25, 1.0)


def _ellipse(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _box(yy, xx, cy, cx, hy, hx):
    return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)


def _trajectory(rng, n, lo, hi, speed):
    start = rng.uniform(lo, hi, size=2)
    angle = rng.uniform(0, 2 * np.pi)
    vel = speed * np.array([np.sin(angle), np.cos(angle)])
    pts = start[None, :] + np.arange(n)[:, None] * vel[None, :]
    return np.clip(pts, lo, hi)


def render_video(rng: np.random.Generator, t: int, h: int, w: int,
                 params: SynthParams | None = None):
    """One synthetic video: ``(frames [T,H,W,3], shadow [T,H,W], distractor [T,H,W])``.

    The shadow multiplies a textured background by a blurred ellipse, keeping the
    texture visible. The distractor is a flat dark box that never touches the
    shadow support; layouts are resampled until that holds.
    """
    p = params or SynthParams()
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    side = min(h, w)
    for _ in range(p.max_tries):
        ry, rx = side * rng.uniform(*p.shadow_radii, size=2)
        theta = rng.uniform(0, np.pi)
        r = max(ry, rx)
        s_path = _trajectory(rng, t, 0.3 * r, min(h, w) - 0.3 * r, p.speed)
        hy, hx = side * rng.uniform(*p.distractor_half, size=2)
        d_path = _trajectory(rng, t, max(hy, hx), min(h, w) - max(hy, hx), p.speed)
        shadow = np.stack([_ellipse(yy, xx, cy, cx, ry, rx, theta) for cy, cx in s_path])
        distractor = np.stack([_box(yy, xx, cy, cx, hy, hx) for cy, cx in d_path])
        grown = ndimage.binary_dilation(shadow, structure=np.ones((1, 3, 3), bool),
                                        iterations=int(p.margin))
        if not (grown & distractor).any() and shadow.reshape(t, -1).any(1).all():
            break
    else:
        raise RuntimeError("could not place a non-overlapping distractor; relax SynthParams")
    bg = _texture(rng, h, w)
    strength = rng.uniform(*p.attenuation)
    tone = rng.uniform(0.08, 0.2) * np.array([1.0, 0.95, 1.05])
    frames = np.empty((t, h, w, 3))
    for i in range(t):
        alpha = ndimage.gaussian_filter(shadow[i].astype(np.float64), p.rim_sigma)
        f = bg * (1.0 - strength * alpha[..., None])
        f[distractor[i]] = tone + 0.01 * rng.normal(size=3)
        frames[i] = f
    frames = np.clip(frames, 0.0, 1.0)
    return frames, shadow, distractor


def synth_shadow_videos(out_dir, n_videos: int = 4, t: int = 8, h: int = 64, w: int = 64,
                        seed: int = 0, split: str = "train",
                        params: SynthParams | None = None) -> DatasetIndex:
    """Writes frames (PNG), shadow labels and distractor supports under ``out_dir/split``."""
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    for v in range(n_videos):
        vid = f"video{v:03d}"
        frames, shadow, distractor = render_video(rng, t, h, w, params)
        dirs = {k: out / split / k / vid for k in ("images", "labels", "distractors")}
        for d in dirs.values():
            d.mkdir(parents=True, exist_ok=True)
        for i in range(t):
            name = f"{i:05d}.png"
            Image.fromarray(np.round(frames[i] * 255).astype(np.uint8)).save(dirs["images"] / name)
            write_mask(dirs["labels"] / name, shadow[i])
            write_mask(dirs["distractors"] / name, distractor[i])
    return scan_dataset(out, split)


def distractor_masks(index: DatasetIndex, video: VideoEntry) -> np.ndarray | None:
    """Distractor supports written by the synthetic generator, if present."""
    d = index.root / index.split / "distractors" / video.video_id
    paths = [d / p.name for p in video.masks]
    if not all(p.exists() for p in paths):
        return None
    return np.stack([read_mask(p) for p in paths])


# --- embedding bundles ------------------------------------------------------------------

BUNDLE_ARRAYS = ("p_s", "p_d", "p_x")


def synth_bundle(l_s: int, l_d: int, t: int, m: int, c_l: int, c_m: int,
                 seed: int = 0) -> EmbeddingBundle:
    import torch

    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(shape).astype(np.float32)
              for shape in ((l_s, c_l), (l_d, c_l), (t * m, c_m))]
    return EmbeddingBundle(*(torch.from_numpy(a) for a in arrays))


def write_bundle(bundle: EmbeddingBundle, path) -> None:
    """One JSON header line, then raw little-endian float32 arrays in header order."""
    arrays = [np.ascontiguousarray(getattr(bundle, n).detach().cpu().numpy(), dtype="<f4")
              for n in BUNDLE_ARRAYS]
    header = {
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in zip(BUNDLE_ARRAYS, arrays)],
        "dtype": "f32",
        "order": "row-major",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        for a in arrays:
            fh.write(a.tobytes())


def read_bundle(path) -> EmbeddingBundle:
    import torch

    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("dtype") != "f32" or header.get("order") != "row-major":
            raise ValueError(f"unsupported bundle encoding in {path}")
        out = {}
        for entry in header["arrays"]:
            count = int(np.prod(entry["shape"]))
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"truncated bundle file {path}")
            out[entry["name"]] = torch.from_numpy(
                np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy())
    missing = set(BUNDLE_ARRAYS) - out.keys()
    if missing:
        raise ValueError(f"bundle {path} lacks arrays {sorted(missing)}")
    return EmbeddingBundle(out["p_s"], out["p_d"], out["p_x"])


class SyntheticBundleProvider:
    """Deterministic per-video embeddings, used when no real encoder output exists.

    Any callable ``(clip) -> EmbeddingBundle`` can replace this, e.g. one that
    reads precomputed bundles from disk.
    """

    def __init__(self, l_s: int = 6, l_d: int = 6, patches: int = 16, c_l: int = 32,
                 c_m: int = 48, seed: int = 0):
        self.l_s, self.l_d, self.patches = l_s, l_d, patches
        self.c_l, self.c_m, self.seed = c_l, c_m, seed

    def __call__(self, clip: VideoClip) -> EmbeddingBundle:
        key = zlib.crc32(f"{self.seed}:{clip.video_id}".encode())
        return synth_bundle(self.l_s, self.l_d, len(clip.frames), self.patches,
                            self.c_l, self.c_m, seed=key)


class BundleDirectoryProvider:
    """Reads ``<dir>/<video_id>.bundle`` files written by :func:`write_bundle`."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, clip: VideoClip) -> EmbeddingBundle:
        return read_bundle(self.directory / f"{clip.video_id}.bundle")
