"""Little-endian binary helpers shared by the checkpoint and dataset formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAX_RANK = 4


def write_tensor(buf: BinaryIO, arr: np.ndarray) -> None:
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class ByteReader:
    """Bounds-checked cursor over a byte string; errors carry the offset."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def tensor(self, what: str) -> np.ndarray:
        start = self.pos
        rank = self.u32(f"{what} rank")
        if rank > MAX_RANK:
            raise FormatError(f"{what} has rank {rank} > {MAX_RANK}", start)
        dims = [self.u32(f"{what} dim") for _ in range(rank)]
        count = int(np.prod(dims)) if dims else 1
        raw = self.take(8 * count, f"{what} data")
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError("trailing bytes after payload", self.pos)


def f64_block(r: ByteReader, rows: int, cols: int, what: str) -> np.ndarray:
    raw = r.take(8 * rows * cols, what)
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)
