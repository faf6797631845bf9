"""Flat binary container of named tensors plus a JSON metadata block.

Byte layout (all integers little-endian)::

    magic      8 bytes   b"RPCKPT01"
    meta_len   uint64    length of the metadata block
    metadata   meta_len  UTF-8 JSON object
    count      uint32    number of tensors
    per tensor:
      name_len uint16, name (UTF-8)
      dtype    uint8     1 = float32, 2 = float64, 3 = int64
      ndim     uint8, then ndim x uint32 extents
      data     raw little-endian values, row-major
    crc32      uint32    zlib.crc32 of every preceding byte
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"RPCKPT01"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {v.str: k for k, v in _DTYPES.items()}


def _encode(tensors: dict[str, np.ndarray], metadata: dict) -> bytes:
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.dtype.newbyteorder("<")
        code = _CODES.get(le.str)
        if code is None:
            raise DataError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=le).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(path, tensors: dict[str, np.ndarray], metadata: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(_encode(tensors, metadata))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, metadata)``; raises :class:`DataError` on any corruption."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 12 or blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a relpose checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise DataError(f"{path}: checksum mismatch, file is corrupt or truncated")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise DataError(f"{path}: truncated at byte {pos}")
        chunk = body[pos : pos + n]
        pos += n
        return chunk

    (meta_len,) = struct.unpack("<Q", take(8))
    try:
        metadata = json.loads(take(meta_len).decode("utf-8"))
    except ValueError as exc:
        raise DataError(f"{path}: unreadable metadata block") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise DataError(f"{path}: unknown dtype code {code} for {name!r}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(take(nbytes), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if pos != len(body):
        raise DataError(f"{path}: {len(body) - pos} trailing bytes after tensor table")
    return tensors, metadata
