"""BGCK parameter container: named float32 arrays plus string metadata.

Layout (little-endian): magic ``BGCK``, version u32, array count u32, then per
array a u16 name length, the UTF-8 name, rank u8, one u32 per dim and the
float32 payload. Metadata travels as zero-length arrays whose names have the
form ``meta:<key>=<value>``.
"""
from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from .exceptions import InputError

MAGIC = b"BGCK"
VERSION = 1
_META = "meta:"


def save_arrays(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> None:
    entries = [(f"{_META}{k}={v}", np.zeros(0, dtype=np.float32)) for k, v in (meta or {}).items()]
    entries += [(name, np.asarray(a)) for name, a in arrays.items()]
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        if arr.dtype != np.float32:
            raise InputError(f"array {name!r} must be float32, got {arr.dtype}")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise InputError(f"{path}: not a BGCK checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    arrays, meta = {}, {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", blob, pos)
            dims = struct.unpack_from(f"<{rank}I", blob, pos + 1)
            pos += 1 + 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(blob):
                raise InputError(f"{path}: truncated payload for {name!r}")
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
            if name.startswith(_META):
                key, _, value = name[len(_META):].partition("=")
                meta[key] = value
            else:
                arrays[name] = arr
    except struct.error as exc:
        raise InputError(f"{path}: truncated checkpoint") from exc
    if pos != len(blob):
        raise InputError(f"{path}: {len(blob) - pos} trailing bytes")
    return arrays, meta
