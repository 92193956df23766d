"""Binary checkpoint format ``PSG1``.

Layout (all little-endian)::

    b"PSG1"  u32 count
    repeated count times:
        u16 name_len  name (UTF-8)  u8 rank  u32[rank] dims  f64[prod(dims)] payload

The loader validates every length against the remaining bytes before reading,
so a damaged file raises :class:`CheckpointError` and never yields a partial
mapping.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PSG1"


class CheckpointError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # tobytes() is C-ordered; ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    view = memoryview(buf)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if n < 0 or pos + n > len(view):
            raise CheckpointError(f"truncated {what} at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise CheckpointError("bad magic at byte 0")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        at = pos
        try:
            name = bytes(take(name_len, "name")).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"invalid UTF-8 name at byte {at}") from None
        if name in out:
            raise CheckpointError(f"duplicate tensor {name!r} at byte {at}")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n = 1
        for d in dims:
            n *= d
        at = pos
        raw = take(8 * n, f"payload of {name!r}")
        try:
            payload = np.frombuffer(raw, dtype="<f8").reshape(dims)
        except ValueError:
            # a zero dimension lets absurd sibling dimensions through the size check
            raise CheckpointError(f"unrepresentable shape {dims} for {name!r} at byte {at}") from None
        if not np.all(np.isfinite(payload)):
            raise CheckpointError(f"non-finite values in {name!r} at byte {at}")
        out[name] = payload.astype(np.float64)
    if pos != len(view):
        raise CheckpointError(f"trailing bytes at byte {pos}")
    return out


def save(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


# Run configuration rides along as a rank-1 tensor of UTF-8 byte values.
CONFIG_KEY = "meta.config"


def pack_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).astype(np.float64)


def unpack_json(arr: np.ndarray):
    if arr.ndim != 1 or np.any((arr < 0) | (arr > 255) | (arr != np.round(arr))):
        raise CheckpointError("embedded config is not a byte string")
    try:
        raw = bytes(arr.astype(np.uint8))
        return json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"unreadable embedded config: {exc}") from None
