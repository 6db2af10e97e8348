"""Versioned binary checkpoints: named float64 arrays plus named scalars.

Layout (all little-endian):
  magic b"FMCP", version u32,
  array count u32, then per array: name (u16 length + utf8), ndim u8,
  dims u32 each, payload float64,
  scalar count u32, then per scalar: name, value float64.
Entries are written sorted by name, so equal state gives equal bytes on any
platform.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, TruncatedRecord

_MAGIC = b"FMCP"
_VERSION = 1


def write_checkpoint(arrays: dict, scalars: dict) -> bytes:
    chunks = [_MAGIC, struct.pack("<I", _VERSION), struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    chunks.append(struct.pack("<I", len(scalars)))
    for name in sorted(scalars):
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<d", float(scalars[name])))
    return b"".join(chunks)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedRecord(self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(data: bytes):
    """Decode checkpoint bytes to (arrays, scalars) dicts."""
    r = _Reader(data)
    if r.take(4) != _MAGIC:
        raise BadMagic(data[:4])
    (version,) = r.unpack("<I")
    if version != _VERSION:
        raise BadMagic(f"unsupported checkpoint version {version}")
    arrays = {}
    (n_arrays,) = r.unpack("<I")
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        payload = r.take(8 * count)
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    scalars = {}
    (n_scalars,) = r.unpack("<I")
    for _ in range(n_scalars):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (value,) = r.unpack("<d")
        scalars[name] = value
    return arrays, scalars


def save_checkpoint(path, arrays: dict, scalars: dict):
    Path(path).write_bytes(write_checkpoint(arrays, scalars))


def load_checkpoint(path):
    return read_checkpoint(Path(path).read_bytes())
