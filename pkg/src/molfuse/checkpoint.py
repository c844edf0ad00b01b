"""Versioned binary parameter container.

Layout (all integers little-endian u32):
  magic "MFCP" | version | config length | config JSON (UTF-8)
  array count | per array: name length, name (UTF-8), rank, extents,
  raw little-endian float64 data.

Encoder and fusion parameters live in one container under distinct name
namespaces ("encoder/...", "fusion/...").
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MFCP"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, arrays: dict, config: dict) -> None:
    """Write named float64 arrays plus a JSON config block."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(config_bytes))
    blob += config_bytes
    blob += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        name_bytes = name.encode("utf-8")
        blob += struct.pack("<I", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<I", data.ndim)
        blob += struct.pack(f"<{data.ndim}I", *data.shape)
        blob += data.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path):
    """Read a container back; returns (arrays, config)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, blob, off)
        off += size
        return values

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (config_len,) = take("<I")
    config = json.loads(blob[off:off + config_len].decode("utf-8"))
    off += config_len
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        n_items = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n_items, offset=off).reshape(shape)
        off += n_items * 8
        arrays[name] = arr.astype(np.float64)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return arrays, config
