"""Named tensor archive.

Layout (little-endian)::

    b"FDCK" | version u16 | count u32
    per tensor: name_len u16 | UTF-8 name | 4×u32 dims | f32 data (row-major)
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .params import ParamStore
from .scenes import FormatError

MAGIC = b"FDCK"
VERSION = 1


def encode(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.ndim != 4:
            raise ValueError(f"tensor {name!r} is not rank 4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<4I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint: need {n} bytes, {len(buf) - pos} left", pos)
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise FormatError("bad magic, expected FDCK", 0)
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        start = pos
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not UTF-8", start) from exc
        if name in state:
            raise FormatError(f"duplicate tensor name {name!r}", start)
        dims = struct.unpack("<4I", take(16))
        size = int(np.prod(dims))
        data = np.frombuffer(take(4 * size), dtype="<f4").astype(np.float64)
        state[name] = data.reshape(dims)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
    return state


def save_checkpoint(store: ParamStore | dict, path):
    state = store.state() if isinstance(store, ParamStore) else store
    data = encode(state)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())
