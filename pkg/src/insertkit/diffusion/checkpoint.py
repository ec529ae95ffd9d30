"""Self-describing checkpoint archives.

A checkpoint is a zip holding:

    meta.json    format version, step, model/schedule/codec configs, and a
                 weights manifest (name, shape, dtype) in serialization order
    weights.bin  the tensors' raw bytes, little-endian float32, concatenated
                 in manifest order

Round-tripping is bit-exact for float32 models.  Writes go through a
temporary file in the destination directory followed by os.replace, so a
reader never observes a half-written archive.
"""

from __future__ import annotations

import json
import os
import tempfile
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from insertkit.diffusion.codec import LatentCodec, codec_from_json
from insertkit.diffusion.schedule import NoiseSchedule, schedule_from_json
from insertkit.diffusion.unet import DenoiserConfig, ToyDenoiser
from insertkit.errors import InvalidArgument

FORMAT_VERSION = 1


@dataclass
class CheckpointBundle:
    model: ToyDenoiser
    schedule: NoiseSchedule
    codec: LatentCodec
    step: int
    meta: dict


def save_checkpoint(
    path: str | Path,
    model: ToyDenoiser,
    schedule: NoiseSchedule,
    codec: LatentCodec,
    step: int,
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    manifest = []
    blobs = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "<f4"})
        blobs.append(np.ascontiguousarray(arr).tobytes())
    meta = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "model": model.config.to_json(),
        "schedule": schedule.to_json(),
        "codec": codec.to_json(),
        "weights": manifest,
    }
    if extra:
        meta["extra"] = extra

    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            with zipfile.ZipFile(handle, "w", compression=zipfile.ZIP_DEFLATED) as zf:
                zf.writestr("meta.json", json.dumps(meta, indent=2))
                zf.writestr("weights.bin", b"".join(blobs))
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    path = Path(path)
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json"))
        blob = zf.read("weights.bin")
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint format version {version!r}")

    model = ToyDenoiser(DenoiserConfig.from_json(meta["model"]))
    state = {}
    offset = 0
    for entry in meta["weights"]:
        if entry["dtype"] != "<f4":
            raise InvalidArgument(f"unsupported weight dtype {entry['dtype']!r}")
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise InvalidArgument("weights.bin is shorter than its manifest")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
        offset += nbytes
    if offset != len(blob):
        raise InvalidArgument("weights.bin is longer than its manifest")
    model.load_state_dict(state, strict=True)

    return CheckpointBundle(
        model=model,
        schedule=schedule_from_json(meta["schedule"]),
        codec=codec_from_json(meta["codec"]),
        step=int(meta["step"]),
        meta=meta,
    )
