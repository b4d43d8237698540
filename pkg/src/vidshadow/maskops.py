"""Penumbra-aware supervision targets derived from binary shadow masks."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

# 8-connectivity for grouping penumbra pixels into bands
_BAND_STRUCTURE = np.ones((3, 3), dtype=bool)


def as_binary(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D mask, got shape {m.shape}")
    if m.dtype != bool and not np.isin(m, (0, 1)).all():
        raise ValueError("binary mask values must be 0 or 1")
    return m.astype(bool)


def erode(mask, kernel: int = 3) -> np.ndarray:
    """Square-kernel binary erosion; pixels outside the image count as background."""
    if not isinstance(kernel, (int, np.integer)) or kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be a positive odd integer, got {kernel!r}")
    m = as_binary(mask)
    if kernel == 1:
        return m.copy()
    structure = np.ones((kernel, kernel), dtype=bool)
    return ndimage.binary_erosion(m, structure=structure, border_value=0)


def distance_transform(mask) -> np.ndarray:
    """Euclidean distance from each foreground pixel to the nearest background pixel.

    The ring just outside the image is treated as background, matching the
    zero padding used by :func:`erode`.
    """
    m = as_binary(mask)
    padded = np.pad(m, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def edge_mask(mask, kernel: int = 3) -> np.ndarray:
    """Penumbra band: shadow pixels removed by erosion."""
    m = as_binary(mask)
    return m & ~erode(m, kernel)


def penumbra_reweight(mask, kernel: int = 3) -> np.ndarray:
    """Soft target: 1 on the eroded core, attenuated distances on the band, 0 outside.

    Each 8-connected band is scaled by ``1 / (max distance in band + 1)`` so band
    values stay in (0, 1) and below the core.
    """
    m = as_binary(mask)
    core = erode(m, kernel)
    band = m & ~core
    out = core.astype(np.float64)
    if band.any():
        dist = distance_transform(m)
        labels, n = ndimage.label(band, structure=_BAND_STRUCTURE)
        peak = ndimage.maximum(dist, labels, index=np.arange(1, n + 1))
        scale = np.concatenate([[1.0], 1.0 / (np.asarray(peak) + 1.0)])
        out[band] = dist[band] * scale[labels[band]]
    return out


def downsample_supervision(soft, factor: int) -> np.ndarray:
    """Block-mean pooling by ``factor`` over the last two axes."""
    s = np.asarray(soft, dtype=np.float64)
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    h, w = s.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"mask shape {(h, w)} is not divisible by factor {factor}")
    blocks = s.reshape(*s.shape[:-2], h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(-3, -1))


def stage_targets(mask, factors, kernel: int = 3) -> list[np.ndarray]:
    """Reweight once at full resolution, then area-average to each stage size."""
    soft = penumbra_reweight(mask, kernel)
    return [downsample_supervision(soft, f) for f in factors]


def read_mask(path) -> np.ndarray:
    """Load an 8-bit mask image and binarize at 128."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) >= 128


def write_mask(path, mask) -> None:
    m = as_binary(mask)
    Image.fromarray(m.astype(np.uint8) * 255, mode="L").save(path)


def write_soft_mask(path, soft) -> None:
    """Raw little-endian float32 blob plus a ``.json`` sidecar with the shape."""
    path = Path(path)
    arr = np.ascontiguousarray(soft, dtype="<f4")
    path.write_bytes(arr.tobytes())
    sidecar = {"shape": list(arr.shape), "order": "row-major"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def read_soft_mask(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if meta.get("order", "row-major") != "row-major":
        raise ValueError(f"unsupported order {meta['order']!r}")
    return np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["shape"]).copy()
