"""VAPW named-array checkpoint files.

Layout (little-endian): magic ``b"VAPW"``, version u16, array count u32,
then per array: name length u16, UTF-8 name, rank u8, dims u32 each,
float32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import FormatError

MAGIC = b"VAPW"
VERSION = 1


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if len(raw) > 0xFFFF:
            raise ValueError(f"array name too long: {name[:40]}...")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    def need(offset: int, n: int, what: str) -> None:
        if offset + n > len(buf):
            raise FormatError(f"truncated checkpoint reading {what}: expected {offset + n} bytes, "
                              f"file has {len(buf)}", offset)

    need(0, 10, "header")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    pos = 10
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(pos, 2, "name length")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(pos, nlen + 1, "name")
        try:
            name = buf[pos:pos + nlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("array name is not valid UTF-8", pos) from exc
        pos += nlen
        rank = buf[pos]
        pos += 1
        need(pos, 4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        need(pos, 4 * size, f"data of {name}")
        arrays[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last array", pos)
    return arrays


def save_checkpoint(arrays: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(encode_checkpoint(arrays))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
