"""Generic named-tensor blob: the serialization shared by artifact dumps.

Byte layout (little-endian):
  magic 'SSTN' | u32 version=1 | u32 count
  | per tensor: u16 name_len, name utf-8, u8 ndim, u32 dims..., float32 data
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import StorageError

MAGIC = b"SSTN"
VERSION = 1


def save_named_tensors(path, tensors: dict) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def load_named_tensors(path) -> dict:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise StorageError(f"cannot read tensor blob {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise StorageError(f"{path}: not a named-tensor blob")
    version, count = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise StorageError(f"{path}: unsupported blob version {version}")
    off = 12
    out: dict = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", blob[off:off + 2])
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack("<B", blob[off:off + 1])
        off += 1
        dims = struct.unpack(f"<{ndim}I", blob[off:off + 4 * ndim])
        off += 4 * ndim
        size = int(np.prod(dims)) * 4 if ndim else 4
        if len(blob) < off + size:
            raise StorageError(f"{path}: truncated tensor {name!r}")
        out[name] = np.frombuffer(blob[off:off + size],
                                  dtype="<f4").reshape(dims).copy()
        off += size
    return out
