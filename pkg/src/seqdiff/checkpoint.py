"""Single-file binary checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"SDCK"
    u32     format version (currently 1)
    u32     metadata length, then that many bytes of UTF-8 JSON
    table   repeated tensor entries until 4 bytes before EOF:
                u16  name length, then the UTF-8 name
                u8   dtype code (0 = float32)
                u8   rank
                u64  per-dimension sizes (rank of them)
                     row-major float32 payload
    u32     CRC32 of everything before it

Writes go to a sibling temp file first and are renamed into place, so a
crash never leaves a half-written checkpoint at the target path. The JSON
metadata is serialized with sorted keys, making save -> load -> save
byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"SDCK"
VERSION = 1
DTYPE_F32 = 0


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf += struct.pack("<I", len(blob))
    buf += blob
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        if not 0 < len(encoded) < 1 << 16:
            raise CheckpointError(f"tensor name length out of range: {name!r}")
        arr = np.asarray(arr, dtype="<f4", order="C")  # keeps rank, 0-d included
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<BB", DTYPE_F32, arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        buf += arr.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(buf))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (blob_len,) = struct.unpack_from("<I", data, 8)
    offset = 12
    end = len(data) - 4
    if offset + blob_len > end:
        raise CheckpointError(f"{path}: truncated metadata block")
    try:
        meta = json.loads(data[offset:offset + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: unreadable metadata ({err})") from err
    offset += blob_len
    tensors: dict[str, np.ndarray] = {}
    while offset < end:
        if offset + 2 > end:
            raise CheckpointError(f"{path}: truncated tensor table")
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + name_len + 2 > end:
            raise CheckpointError(f"{path}: truncated tensor entry")
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        dtype_code, rank = struct.unpack_from("<BB", data, offset)
        offset += 2
        if dtype_code != DTYPE_F32:
            raise CheckpointError(f"{path}: unknown dtype code {dtype_code} for '{name}'")
        if offset + 8 * rank > end:
            raise CheckpointError(f"{path}: truncated dims for '{name}'")
        dims = struct.unpack_from(f"<{rank}Q", data, offset) if rank else ()
        offset += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        nbytes = 4 * count
        if offset + nbytes > end:
            raise CheckpointError(f"{path}: truncated payload for '{name}'")
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name '{name}'")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(dims).astype(np.float32, copy=True)
        offset += nbytes
    return tensors, meta
