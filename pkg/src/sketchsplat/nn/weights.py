"""Named-tensor weight store: seeded deterministic init and binary container.

Container byte layout (little-endian):
  magic 'SSWT' | u32 version=1 | u64 seed | 64-byte hex fingerprint
  | u32 arch_len | arch JSON utf-8 | u32 tensor_count
  | per tensor: u16 name_len, name utf-8, u8 ndim, u32 dims..., float32 data

The fingerprint is the SHA-256 of (arch JSON, seed, every tensor's name, shape
and bytes, in order); load verifies it so a corrupt or hand-edited file fails
loudly.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np
import torch

from ..errors import DimensionError, StorageError
from .arch import ArchitectureSpec

MAGIC = b"SSWT"
VERSION = 1


class WeightStore:
    """Immutable-by-convention map from layer path to float32 tensor."""

    def __init__(self, tensors: dict, seed: int, arch: ArchitectureSpec):
        self.tensors = {name: np.ascontiguousarray(arr, dtype=np.float32)
                        for name, arr in tensors.items()}
        self.seed = int(seed)
        self.arch = arch
        self._torch_cache: dict = {}
        self.fingerprint = _fingerprint(arch, seed, tensors)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def get(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise DimensionError(f"weight store has no tensor {name!r}") from None

    def torch(self, name: str) -> torch.Tensor:
        t = self._torch_cache.get(name)
        if t is None:
            t = torch.from_numpy(self.get(name))
            self._torch_cache[name] = t
        return t

    def with_overrides(self, overrides: dict) -> "WeightStore":
        """Copy with some tensors replaced (test/debug hook; shapes must match)."""
        tensors = dict(self.tensors)
        for name, value in overrides.items():
            ref = self.get(name)
            arr = np.ascontiguousarray(value, dtype=np.float32)
            if arr.shape != ref.shape:
                raise DimensionError(
                    f"override {name!r}: expected {ref.shape}, got {arr.shape}")
            tensors[name] = arr
        return WeightStore(tensors, self.seed, self.arch)


def _fingerprint(arch: ArchitectureSpec, seed: int, tensors: dict) -> str:
    h = hashlib.sha256()
    h.update(arch.to_json_text().encode("utf-8"))
    h.update(struct.pack("<q", seed))
    for name in tensors:  # insertion order == declaration order
        arr = tensors[name]
        h.update(name.encode("utf-8"))
        h.update(str(arr.shape).encode("ascii"))
        h.update(arr.tobytes())
    return h.hexdigest()


def init_weights(arch: ArchitectureSpec, seed: int) -> WeightStore:
    """Scaled-normal initialization, fully determined by (arch, seed)."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    tensors: dict = {}
    for name, shape, kind in arch.weight_shapes():
        if kind == "zeros":
            arr = np.zeros(shape, dtype=np.float32)
        elif kind == "ones":
            arr = np.ones(shape, dtype=np.float32)
        elif kind == "normal":
            arr = rng.standard_normal(shape, dtype=np.float32)
        elif kind == "conv":
            fan_in = shape[1] * shape[2] * shape[3]
            arr = rng.standard_normal(shape, dtype=np.float32) / np.float32(
                np.sqrt(fan_in))
        elif kind == "linear":
            fan_in = shape[0]
            arr = rng.standard_normal(shape, dtype=np.float32) / np.float32(
                np.sqrt(fan_in))
        elif kind == "linear_qk":
            fan_in = shape[0]
            arr = rng.standard_normal(shape, dtype=np.float32) * np.float32(
                arch.attn_qk_gain / np.sqrt(fan_in))
        elif kind == "linear_hot":
            fan_in = shape[0]
            arr = rng.standard_normal(shape, dtype=np.float32) * np.float32(
                arch.attn_value_gain / np.sqrt(fan_in))
        elif kind == "queries":
            arr = rng.standard_normal(shape, dtype=np.float32) * np.float32(
                arch.query_init_std)
        else:  # pragma: no cover - spec bug guard
            raise DimensionError(f"unknown init kind {kind!r} for {name!r}")
        tensors[name] = np.ascontiguousarray(arr)
    return WeightStore(tensors, seed, arch)


def save_weights(path, store: WeightStore) -> None:
    arch_text = store.arch.to_json_text().encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<q", store.seed))
        f.write(store.fingerprint.encode("ascii"))
        f.write(struct.pack("<I", len(arch_text)))
        f.write(arch_text)
        f.write(struct.pack("<I", len(store.tensors)))
        for name, arr in store.tensors.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weights(path) -> WeightStore:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise StorageError(f"cannot read weights {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise StorageError(f"{path}: not a weight container")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise StorageError(f"{path}: unsupported weight container version {version}")
    (seed,) = struct.unpack("<q", blob[8:16])
    fingerprint = blob[16:80].decode("ascii")
    off = 80
    (arch_len,) = struct.unpack("<I", blob[off:off + 4])
    off += 4
    arch = ArchitectureSpec.from_json_text(blob[off:off + arch_len].decode("utf-8"))
    off += arch_len
    (count,) = struct.unpack("<I", blob[off:off + 4])
    off += 4
    tensors: dict = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", blob[off:off + 2])
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack("<B", blob[off:off + 1])
        off += 1
        dims = struct.unpack(f"<{ndim}I", blob[off:off + 4 * ndim])
        off += 4 * ndim
        size = int(np.prod(dims)) * 4
        if len(blob) < off + size:
            raise StorageError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(blob[off:off + size],
                                      dtype="<f4").reshape(dims).copy()
        off += size
    store = WeightStore(tensors, seed, arch)
    if store.fingerprint != fingerprint:
        raise StorageError(f"{path}: fingerprint mismatch, container is corrupt")
    return store
