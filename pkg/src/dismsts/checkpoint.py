"""Binary checkpoint container for named float64 parameter arrays.

Layout (all integers little-endian uint64)::

    b"DMTS-CKPT\\n"  version byte  entry count
    per entry: name length, utf-8 name, ndim, dims..., float64 LE payload
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CorruptionError, VersionError

MAGIC = b"DMTS-CKPT\n"
VERSION = 1

_U64 = struct.Struct("<Q")


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write ``payload`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, bytes([VERSION]), _U64.pack(len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(_U64.pack(len(raw)))
        parts.append(raw)
        parts.append(_U64.pack(arr.ndim))
        parts.extend(_U64.pack(n) for n in arr.shape)
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_checkpoint(payload: bytes) -> dict[str, np.ndarray]:
    if not payload.startswith(MAGIC):
        raise CorruptionError("missing DMTS-CKPT magic header")
    pos = len(MAGIC)
    if len(payload) <= pos:
        raise CorruptionError("checkpoint truncated before version byte")
    version = payload[pos]
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos += 1

    def u64():
        nonlocal pos
        if pos + 8 > len(payload):
            raise CorruptionError(f"checkpoint truncated at byte {pos} of {len(payload)}")
        (v,) = _U64.unpack_from(payload, pos)
        pos += 8
        return v

    out: dict[str, np.ndarray] = {}
    for _ in range(u64()):
        n = u64()
        name = payload[pos:pos + n].decode("utf-8")
        pos += n
        shape = tuple(u64() for _ in range(u64()))
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(payload):
            raise CorruptionError(
                f"entry {name!r}: expected {nbytes} payload bytes, only {len(payload) - pos} remain")
        out[name] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(payload):
        raise CorruptionError(f"{len(payload) - pos} trailing bytes after last entry")
    return out


def save_checkpoint(path, arrays: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_checkpoint(arrays))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
