"""Binary model checkpoints.

Layout (little-endian)::

    b"RAEC"  u16 version  u32 config_len  config_len bytes of UTF-8 JSON (ModelConfig)
    then until EOF, one record per tensor:
    u16 name_len  name (UTF-8)  u8 rank  u32 dim * rank  float64 * prod(dims)

Trainable parameters come first, then the ``norm.*`` buffers.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from raec.seqmodel import AecModel, ModelConfig

MAGIC = b"RAEC"
VERSION = 1
BUFFER_PREFIX = "norm."


class CheckpointError(ValueError):
    pass


def _tensor_record(name: str, arr: np.ndarray) -> bytes:
    raw_name = name.encode("utf-8")
    arr = np.asarray(arr, dtype=np.float64)
    parts = [struct.pack("<H", len(raw_name)), raw_name, struct.pack("<B", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def dumps(model: AecModel) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<HI", VERSION, len(cfg)), cfg]
    for name, arr in model.params.items():
        out.append(_tensor_record(name, arr))
    for name, arr in model.buffers.items():
        out.append(_tensor_record(name, arr))
    return b"".join(out)


def loads(raw: bytes) -> AecModel:
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {raw[:4]!r}")
    try:
        version, cfg_len = struct.unpack_from("<HI", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 10
        config = ModelConfig.from_dict(json.loads(raw[pos : pos + cfg_len].decode("utf-8")))
        pos += cfg_len
        params, buffers = {}, {}
        while pos < len(raw):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(raw):
                raise CheckpointError(f"truncated tensor {name!r}")
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
            (buffers if name.startswith(BUFFER_PREFIX) else params)[name] = arr
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    return AecModel(config, params, buffers or None)


def save(model: AecModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model))


def load(path) -> AecModel:
    return loads(Path(path).read_bytes())
