"""Writer and reader for the shared "LDWT" weight container format.

Deliberately independent of the inference package's implementation so the
two sides check each other: bytes written here must parse and validate
there. Layout (little-endian, no padding):

    magic    4 bytes  b"LDWT"
    version  u32      currently 1
    mlen     u32      byte length of the metadata JSON blob
    metadata mlen bytes of UTF-8 JSON
    count    u32      number of tensors
    per tensor:
        nlen u16      byte length of the name
        name nlen bytes of UTF-8
        ndim u8
        dims u32 x ndim
        data f32 x prod(dims), row-major

Tensors are written in sorted name order, so a container's bytes are a
pure function of its content.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LDWT"
VERSION = 1


def container_bytes(metadata: dict, tensors: dict[str, np.ndarray]) -> bytes:
    blob = json.dumps(metadata).encode()
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", len(blob)),
        blob,
        struct.pack("<I", len(tensors)),
    ]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        enc = name.encode()
        parts.append(struct.pack("<H", len(enc)) + enc)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def write_container(
    path: str | Path, metadata: dict, tensors: dict[str, np.ndarray]
) -> Path:
    path = Path(path)
    path.write_bytes(container_bytes(metadata, tensors))
    return path


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a container written by any conforming writer.

    Format checks only; architecture-level validation is the reader's
    business on the inference side.
    """
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}")
    version, mlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    pos = 12
    metadata = json.loads(data[pos : pos + mlen].decode())
    pos += mlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode()
        pos += nlen
        ndim = data[pos]
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        tensors[name] = (
            np.frombuffer(data, dtype="<f4", count=n, offset=pos)
            .reshape(dims)
            .copy()
        )
        pos += 4 * n
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes")
    return metadata, tensors
