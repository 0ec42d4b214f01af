"""Weight container format.

Layout: a text header followed by binary named-tensor records.

    TRMLAB-WEIGHTS 1
    config {"d_model": ..., ...}
    tensors <count>
    end-header
    <records>

Each record is ``u32 name_len | name utf-8 | u32 rank | u32 dims... |``
row-major float32 little-endian data. Tensors are stored float32 in memory
as well, so save -> load -> save reproduces identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ModelConfig, Parameters

MAGIC = b"TRMLAB-WEIGHTS 1\n"


class WeightFormatError(Exception):
    """The weight file is malformed or inconsistent with its header."""


def save_tensors(path, tensors: dict, config_fields: dict) -> None:
    """Write named float32 tensors with a config header."""
    path = Path(path)
    chunks = [MAGIC]
    chunks.append(b"config " + json.dumps(config_fields, sort_keys=True).encode() + b"\n")
    chunks.append(f"tensors {len(tensors)}\n".encode())
    chunks.append(b"end-header\n")
    for name, arr in tensors.items():
        if arr.dtype != np.float32:
            raise WeightFormatError(f"{name}: tensors must be float32, got {arr.dtype}")
        data = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        chunks.append(len(name_b).to_bytes(4, "little"))
        chunks.append(name_b)
        chunks.append(arr.ndim.to_bytes(4, "little"))
        for dim in arr.shape:
            chunks.append(int(dim).to_bytes(4, "little"))
        chunks.append(data.tobytes())
    path.write_bytes(b"".join(chunks))


def load_tensors(path) -> tuple:
    """Read a weight container; returns (tensors, config_fields)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise WeightFormatError(f"{path}: bad magic, not a weight file")
    offset = len(MAGIC)
    config_fields = None
    count = None
    while True:
        end = raw.find(b"\n", offset)
        if end < 0:
            raise WeightFormatError(f"{path}: truncated header")
        line = raw[offset:end]
        offset = end + 1
        if line == b"end-header":
            break
        key, _, value = line.partition(b" ")
        if key == b"config":
            config_fields = json.loads(value)
        elif key == b"tensors":
            count = int(value)
        else:
            raise WeightFormatError(f"{path}: unknown header line {line!r}")
    if config_fields is None or count is None:
        raise WeightFormatError(f"{path}: header missing config or tensor count")

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise WeightFormatError(f"{path}: truncated tensor data")
        out = raw[offset : offset + n]
        offset += n
        return out

    tensors = {}
    for _ in range(count):
        name_len = int.from_bytes(take(4), "little")
        name = take(name_len).decode("utf-8")
        rank = int.from_bytes(take(4), "little")
        dims = tuple(int.from_bytes(take(4), "little") for _ in range(rank))
        size = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(size * 4), dtype="<f4").reshape(dims)
        tensors[name] = data.astype(np.float32).copy()
    if offset != len(raw):
        raise WeightFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors, config_fields


def save_params(path, params: Parameters) -> None:
    save_tensors(path, params.tensors, {"format": 1, "model": params.cfg.to_dict()})


def load_params(path) -> Parameters:
    tensors, fields = load_tensors(path)
    if "model" not in fields:
        raise WeightFormatError(f"{path}: header carries no model config")
    cfg = ModelConfig.from_dict(fields["model"])
    return Parameters(cfg, tensors)
