"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ERNK1"
    u32 header length, header bytes (canonical JSON metadata)
    u32 block count
    per block: u16 name length, name (utf-8), u8 ndim, u32 * ndim dims,
               float32 payload in row-major order

Metadata is serialized with sorted keys and fixed separators, so loading a
file and saving it again reproduces it byte for byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ValidationError

MAGIC = b"ERNK1"


def _canonical(meta: Mapping) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def dumps(blocks: Mapping[str, np.ndarray], meta: Mapping) -> bytes:
    out = bytearray(MAGIC)
    header = _canonical(meta)
    out += struct.pack("<I", len(header)) + header
    out += struct.pack("<I", len(blocks))
    for name, arr in blocks.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:5] != MAGIC:
        raise ValidationError("not an ERNK1 checkpoint (bad magic)")
    pos = 5
    try:
        (hlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        meta = json.loads(buf[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (n_blocks,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        blocks: dict[str, np.ndarray] = {}
        for _ in range(n_blocks):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            blocks[name] = arr.astype(np.float32)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ValidationError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(buf):
        raise ValidationError(f"{len(buf) - pos} trailing bytes after last block")
    return blocks, meta


def save(path: str | Path, blocks: Mapping[str, np.ndarray], meta: Mapping) -> None:
    Path(path).write_bytes(dumps(blocks, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
