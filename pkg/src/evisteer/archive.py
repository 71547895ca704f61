"""Named-tensor archive ("EVST") used for checkpoints and datasets.

Layout, all integers little-endian::

    b"EVST"  u32 version  u32 count
    repeated count times:
        u32 name_len  name (utf-8)  u32 rank  u64 dims[rank]  f64 values[prod(dims)]
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"EVST"
VERSION = 1


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise DataError("not an EVST archive (bad magic)")
    pos = 4

    def read(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise DataError("truncated EVST archive")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = read("<II")
    if version != VERSION:
        raise DataError(f"unsupported EVST version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = read("<I")
        name = bytes(read(f"<{n}s")[0]).decode("utf-8")
        (rank,) = read("<I")
        dims = read(f"<{rank}Q") if rank else ()
        total = int(np.prod(dims)) if rank else 1
        nbytes = 8 * total
        if pos + nbytes > len(buf):
            raise DataError(f"truncated data for tensor {name!r}")
        arr = np.frombuffer(buf, dtype="<f8", count=total, offset=pos).astype(np.float64)
        pos += nbytes
        out[name] = arr.reshape(dims)
    if pos != len(buf):
        raise DataError("trailing bytes after EVST archive")
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
