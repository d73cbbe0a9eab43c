"""Versioned binary checkpoints.

Layout::

    b"OWLE" | u32 LE format version | u32 LE metadata length | UTF-8 JSON metadata
    | float32 LE tensors in the order listed by metadata["tensors"]

Batchnorm running statistics are stored as tensors alongside the trainable
parameters.
"""

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from owleyes import numcore as nc
from owleyes.errors import CheckpointError, MagicMismatchError, TruncatedCheckpointError, VersionMismatchError
from owleyes.model import Model, ModelConfig

MAGIC = b"OWLE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sII")


def _metadata(model: Model) -> dict:
    return {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "layers": model.layer_names(),
        "batchnorm": [{"epsilon": bp.epsilon, "momentum": bp.momentum} for bp in model.bns],
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in model.named_arrays()],
    }


def dumps(model: Model) -> bytes:
    meta = json.dumps(_metadata(model), separators=(",", ":")).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(meta)), meta]
    for _, arr in model.named_arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model))
    return path


def loads(blob: bytes) -> Model:
    if len(blob) < _HEADER.size:
        raise TruncatedCheckpointError("file shorter than the checkpoint header")
    magic, version, meta_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise MagicMismatchError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    offset = _HEADER.size + meta_len
    if len(blob) < offset:
        raise TruncatedCheckpointError("metadata extends past end of file")
    try:
        meta = json.loads(blob[_HEADER.size:offset].decode("utf-8"))
        config = ModelConfig.from_dict(meta["config"])
        specs = meta["tensors"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata: {exc}") from exc

    tensors = {}
    for spec in specs:
        count = math.prod(spec["shape"])
        end = offset + 4 * count
        if end > len(blob):
            raise TruncatedCheckpointError(f"tensor {spec['name']} truncated")
        tensors[spec["name"]] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(spec["shape"])
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after last tensor")

    bn_meta = meta.get("batchnorm") or [{}] * len(config.conv_channels)
    try:
        convs, bns, fcs = [], [], []
        for i in range(1, len(config.conv_channels) + 1):
            convs.append(nc.ConvParams(tensors[f"conv{i}.kernels"], tensors[f"conv{i}.bias"]))
            bns.append(nc.BNParams(
                gamma=tensors[f"bn{i}.gamma"],
                beta=tensors[f"bn{i}.beta"],
                running_mean=tensors[f"bn{i}.running_mean"],
                running_var=tensors[f"bn{i}.running_var"],
                **bn_meta[i - 1],
            ))
        for j in range(1, len(config.fc_widths) + 1):
            fcs.append(nc.FCParams(tensors[f"fc{j}.weights"], tensors[f"fc{j}.bias"]))
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks tensor {exc}") from exc
    model = Model(config=config, convs=convs, bns=bns, fcs=fcs, seed=int(meta.get("seed", 0)))
    if [n for n, _ in model.named_arrays()] != [s["name"] for s in specs]:
        raise CheckpointError("tensor order does not match the declared layer stack")
    return model


def load_checkpoint(path) -> Model:
    return loads(Path(path).read_bytes())


def checkpoint_id(path) -> str:
    """Short content hash identifying a checkpoint file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
