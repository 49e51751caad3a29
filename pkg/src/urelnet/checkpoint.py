"""Versioned binary checkpoints for model parameters.

Layout: 8 magic bytes, uint32 format version, uint32 header length, a JSON
header (UTF-8, sorted keys) holding the model configuration and the ordered
parameter block names/shapes, then the blocks as little-endian float64 in
header order. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Tuple

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, build_model

MAGIC = b"URELNETC"
FORMAT_VERSION = 1


def save_checkpoint(path, config: ModelConfig, params: Dict[str, np.ndarray]) -> None:
    names = sorted(params)
    header = {
        "config": config.to_json_dict(),
        "blocks": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[ModelConfig, Dict[str, np.ndarray]]:
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint file not found: {path}") from None
    with fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes {magic!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from None
        config = ModelConfig.from_json_dict(header["config"])
        params = {}
        for block in header["blocks"]:
            shape = tuple(block["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(
                    f"{path}: truncated block {block['name']!r} "
                    f"(expected {count * 8} bytes, got {len(raw)})"
                )
            params[block["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after parameter blocks")
    return config, params


def load_model(path, rng: np.random.Generator | None = None):
    """Rebuild the model architecture from the checkpoint and load weights."""
    config, params = load_checkpoint(path)
    model = build_model(config, rng if rng is not None else np.random.default_rng(0))
    try:
        model.load_parameters(params)
    except Exception as exc:
        raise CheckpointError(f"{path}: parameters do not fit the configuration ({exc})") from None
    return model
