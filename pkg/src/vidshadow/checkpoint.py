"""Single-file checkpoints: a zip archive with a JSON manifest and raw float32 blobs."""
from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, ShadowVideoModel

MANIFEST = "manifest.json"
# fixed timestamp so identical tensors give byte-identical archives
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    return info


def save_checkpoint(model: ShadowVideoModel, path, extra: dict | None = None) -> Path:
    """Parameters and buffers are stored row-major as little-endian float32.

    Integer buffers (BatchNorm step counters) are stored in the manifest.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors, counters = [], {}
    for kind, items in (("param", model.named_parameters()), ("buffer", model.named_buffers())):
        for name, t in items:
            if t.is_floating_point():
                tensors.append({"name": name, "kind": kind, "shape": list(t.shape),
                                "trainable": bool(t.requires_grad)})
            else:
                counters[name] = t.tolist()
    manifest = {
        "format": "vidshadow-ckpt/1",
        "dtype": "f32",
        "order": "row-major",
        "config": model.cfg.to_dict(),
        "tensors": tensors,
        "int_buffers": counters,
        "extra": extra or {},
    }
    state = model.state_dict()
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_entry(MANIFEST), json.dumps(manifest, indent=1, sort_keys=True))
        for entry in tensors:
            arr = state[entry["name"]].detach().cpu().numpy().astype("<f4", copy=False)
            zf.writestr(_entry(f"tensors/{entry['name']}.f32"), np.ascontiguousarray(arr).tobytes())
    return path


def read_manifest(path) -> dict:
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read(MANIFEST))


def load_checkpoint(path, map_dtype=torch.float32) -> ShadowVideoModel:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read(MANIFEST))
        cfg = ModelConfig(**manifest["config"])
        model = ShadowVideoModel(cfg)
        state = {}
        for entry in manifest["tensors"]:
            raw = zf.read(f"tensors/{entry['name']}.f32")
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
            state[entry["name"]] = torch.from_numpy(arr.copy()).to(map_dtype)
        for name, value in manifest["int_buffers"].items():
            state[name] = torch.tensor(value, dtype=torch.long)
    model.load_state_dict(state)
    return model
