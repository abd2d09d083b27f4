"""Versioned binary checkpoint: magic, JSON header, raw float64 blocks.

Layout: 4 magic bytes, uint32 little-endian header length, UTF-8 JSON header
(schema version, model config, normalization stats, block name/shape list in
order), then each block's row-major float64 little-endian payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from swq.tensor_nn import Tensor2D
from swq.predictor.features import NormStats
from swq.predictor.model import ModelParams, PredictorConfig

CHECKPOINT_MAGIC = b"SWQ1"
CHECKPOINT_SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    header = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": asdict(params.config),
        "norm": {
            "means": params.norm.means.tolist(),
            "stds": params.norm.stds.tolist(),
        },
        "blocks": [[name, t.rows, t.cols] for name, t in params.blocks.items()],
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for t in params.blocks.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    version = header.get("schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(
            f"{path}: unsupported schema version {version} "
            f"(supported: {CHECKPOINT_SCHEMA_VERSION})"
        )
    config = PredictorConfig(**header["config"])
    norm = NormStats(
        np.asarray(header["norm"]["means"], dtype=float),
        np.asarray(header["norm"]["stds"], dtype=float),
    )
    blocks: dict[str, Tensor2D] = {}
    offset = 8 + header_len
    for name, rows, cols in header["blocks"]:
        nbytes = rows * cols * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated block '{name}'")
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype="<f8").reshape(rows, cols)
        blocks[name] = Tensor2D(arr.astype(np.float64), requires_grad=True)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return ModelParams(config=config, norm=norm, blocks=blocks)
