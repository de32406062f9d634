"""
Little-endian binary helpers shared by the checkpoint, code and feature files.
"""

import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import FormatError


class BinaryReader:
    """Sequential reader over an in-memory buffer that rejects truncation."""

    def __init__(self, data: bytes, path: Optional[str] = None):
        self.data = data
        self.path = path
        self.offset = 0

    @classmethod
    def open(cls, path: Union[str, Path]) -> "BinaryReader":
        try:
            data = Path(path).read_bytes()
        except OSError as e:
            raise FormatError(str(path), f"cannot read file: {e.strerror or e}") from e
        return cls(data, str(path))

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def read(self, n: int) -> bytes:
        if n < 0 or self.offset + n > len(self.data):
            raise FormatError(
                self.path, f"truncated: need {n} bytes at offset {self.offset}, "
                f"{self.remaining} left"
            )
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        fmt = "<" + fmt
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def u8(self) -> int:
        return self.unpack("B")[0]

    def u16(self) -> int:
        return self.unpack("H")[0]

    def u32(self) -> int:
        return self.unpack("I")[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.read(dt.itemsize * count), dtype=dt).copy()

    def expect_magic(self, magic: bytes, kind: str) -> None:
        if self.read(len(magic)) != magic:
            raise FormatError(self.path, f"not a {kind} file (bad magic)")

    def expect_version(self, version: int, kind: str) -> None:
        found = self.u32()
        if found != version:
            raise FormatError(self.path, f"unsupported {kind} version {found}, expected {version}")

    def expect_end(self) -> None:
        if self.remaining:
            raise FormatError(self.path, f"{self.remaining} unexpected trailing bytes")


def pack(fmt: str, *values) -> bytes:
    return struct.pack("<" + fmt, *values)


def f32_bytes(array: np.ndarray) -> bytes:
    """Row-major little-endian float32 payload."""
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


def write_file(path: Union[str, Path], payload: bytes) -> None:
    """Write a whole artifact, creating parent directories."""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(payload)
    except OSError as e:
        raise OSError(e.errno, f"cannot write {target}: {e.strerror or e}") from e
