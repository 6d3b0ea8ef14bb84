"""Binary weight bundle format.

Layout, all integers little-endian unsigned 32-bit:

    magic   4 bytes, b"LCOA"
    version u32 (currently 1)
    count   u32, number of tensors
    then per tensor:
        name_len u32, name (UTF-8, name_len bytes)
        rank     u32 (0 for scalars)
        dims     rank * u32, each >= 1
        data     prod(dims) float32 values, IEEE-754 little-endian

Round-trips are bit-exact.  Malformed files raise one of the distinct error
types below; truncation errors name the tensor being read when it is known.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"LCOA"
VERSION = 1
_MAX_RANK = 8


def _coerce(value) -> np.ndarray:
    """Float32, C-contiguous, rank preserved (ascontiguousarray would
    promote scalars to rank 1)."""
    arr = np.asarray(value, dtype=np.float32)
    return np.ascontiguousarray(arr) if arr.ndim else arr


class WeightsIOError(Exception):
    """Base error for weight bundle serialization."""


class BadMagicError(WeightsIOError):
    """The file does not start with the expected magic bytes."""


class VersionMismatchError(WeightsIOError):
    """The file's format version is not supported."""


class TruncatedFileError(WeightsIOError):
    """The file ends before a declared field or tensor payload."""


class DimensionError(WeightsIOError):
    """A tensor header declares impossible or inconsistent dimensions."""


@dataclass
class ModelWeights:
    """An ordered bundle of uniquely named float32 tensors."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in list(self.tensors):
            self.tensors[name] = _coerce(self.tensors[name])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value) -> None:
        self.tensors[name] = _coerce(value)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def param_count(self) -> int:
        """Total parameter count; the "config" metadata tensor is excluded."""
        return int(sum(t.size for n, t in self.tensors.items() if n != "config"))


def save_weights(path, weights: ModelWeights) -> None:
    """Write a bundle to ``path`` in the format described above."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(weights.tensors))]
    for name, tensor in weights.tensors.items():
        encoded = name.encode("utf-8")
        tensor = _coerce(tensor)
        if tensor.ndim > _MAX_RANK:
            raise DimensionError(f"tensor '{name}' has rank {tensor.ndim} > {_MAX_RANK}")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", tensor.ndim))
        for dim in tensor.shape:
            if dim < 1:
                raise DimensionError(f"tensor '{name}' has a zero-sized dimension")
            parts.append(struct.pack("<I", dim))
        parts.append(tensor.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, nbytes: int, what: str) -> bytes:
        if self.pos + nbytes > len(self.data):
            raise TruncatedFileError(f"file truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def load_weights(path) -> ModelWeights:
    """Read a bundle from ``path``, raising distinct errors for bad magic,
    unsupported version, truncation, and impossible dimensions."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read())

    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = cur.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    count = cur.u32("tensor count")

    tensors: dict[str, np.ndarray] = {}
    for index in range(count):
        label = f"tensor #{index}"
        name_len = cur.u32(f"{label} name length")
        try:
            name = cur.take(name_len, f"{label} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightsIOError(f"{label} name is not valid UTF-8") from exc
        if name in tensors:
            raise WeightsIOError(f"duplicate tensor name '{name}'")
        rank = cur.u32(f"tensor '{name}' rank")
        if rank > _MAX_RANK:
            raise DimensionError(f"tensor '{name}' declares rank {rank} > {_MAX_RANK}")
        dims = tuple(cur.u32(f"tensor '{name}' dims") for _ in range(rank))
        if any(d < 1 for d in dims):
            raise DimensionError(f"tensor '{name}' declares a zero-sized dimension {dims}")
        size = 1
        for d in dims:
            size *= d
        raw = cur.take(4 * size, f"tensor '{name}' data")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if not cur.exhausted():
        raise DimensionError(
            f"{len(cur.data) - cur.pos} trailing bytes after the last declared tensor"
        )
    return ModelWeights(tensors=tensors)
