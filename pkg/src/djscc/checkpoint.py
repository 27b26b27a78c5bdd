"""Binary checkpoint format.

Layout (all little-endian):

    magic "DJSC" | u32 version | u16 kind-len + kind utf8 | u32 tensor count
    per tensor: u16 name-len + name utf8 | u8 dtype code | u8 rank
                | u32 dims[rank] | float32 payload
    u32 crc32 over every preceding byte

Names are written sorted, payloads as float32, so identical state maps
to identical bytes.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"DJSC"
VERSION = 1
KINDS = ("jscc", "latent", "diffusion-base", "diffusion-control")
_DTYPE_F32 = 0


class CheckpointError(ValueError):
    """Malformed, truncated or corrupted checkpoint file."""


def save_checkpoint(path, kind: str, arrays: dict[str, np.ndarray]) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown checkpoint kind {kind!r}; expected one of {KINDS}")
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    kb = kind.encode()
    buf += struct.pack("<H", len(kb)) + kb
    buf += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        nb = name.encode()
        if len(nb) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<BB", _DTYPE_F32, arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: crc mismatch, file corrupted")
    r = _Reader(body)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (klen,) = r.unpack("<H")
    kind = r.take(klen).decode()
    if kind not in KINDS:
        raise CheckpointError(f"{path}: unknown kind {kind!r}")
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        dtype_code, rank = r.unpack("<BB")
        if dtype_code != _DTYPE_F32:
            raise CheckpointError(f"{path}: unknown dtype code {dtype_code}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = 1
        for d in dims:
            n *= d
        payload = r.take(4 * n)
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensor table")
    return kind, arrays
