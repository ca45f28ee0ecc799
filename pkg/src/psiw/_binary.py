"""Little-endian binary helpers shared by the PSIW/PSDF/PSBT file formats."""
from __future__ import annotations

import struct

import numpy as np

DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i4"),
    4: np.dtype("<i8"),
    5: np.dtype("u1"),
}
_CODE_OF = {v: k for k, v in DTYPE_CODES.items()}


class FormatError(ValueError):
    """Raised when a file does not match the format it is read as."""

    def __init__(self, fmt: str, message: str):
        super().__init__(f"{fmt}: {message}")
        self.format = fmt


def dtype_code(dtype) -> int:
    dt = np.dtype(dtype).newbyteorder("<") if np.dtype(dtype).itemsize > 1 else np.dtype(dtype)
    try:
        return _CODE_OF[dt]
    except KeyError:
        raise TypeError(f"unsupported array dtype {dtype}") from None


class Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def raw(self, b: bytes):
        self.parts.append(b)

    def pack(self, fmt: str, *vals):
        self.parts.append(struct.pack("<" + fmt, *vals))

    def string(self, s: str):
        b = s.encode("utf-8")
        self.pack("I", len(b))
        self.parts.append(b)

    def array(self, a: np.ndarray):
        """dtype code u8, rank u8, dims u32[rank], then the values."""
        a = np.asarray(a)
        code = dtype_code(a.dtype)
        self.pack("BB", code, a.ndim)
        self.pack(f"{a.ndim}I", *a.shape)
        self.parts.append(np.ascontiguousarray(a, dtype=DTYPE_CODES[code]).tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes, fmt: str):
        self.data = data
        self.pos = 0
        self.fmt = fmt

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(self.fmt, f"truncated file (need {n} bytes at offset {self.pos}, size {len(self.data)})")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def expect_magic(self, magic: bytes):
        got = self.data[:len(magic)]
        if got != magic:
            raise FormatError(self.fmt, f"bad magic {got!r}, expected {magic!r}")
        self.pos = len(magic)

    def expect_version(self, supported: int):
        (v,) = self.unpack("H")
        if v != supported:
            raise FormatError(self.fmt, f"unsupported version {v} (expected {supported})")
        return v

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self._take(size))

    def string(self) -> str:
        (n,) = self.unpack("I")
        return self._take(n).decode("utf-8")

    def array(self) -> np.ndarray:
        code, rank = self.unpack("BB")
        if code not in DTYPE_CODES:
            raise FormatError(self.fmt, f"unknown dtype code {code}")
        dims = self.unpack(f"{rank}I") if rank else ()
        dt = DTYPE_CODES[code]
        count = int(np.prod(dims)) if rank else 1
        buf = self._take(count * dt.itemsize)
        return np.frombuffer(buf, dtype=dt).reshape(dims).copy()

    def raw_array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self._take(count * dt.itemsize), dtype=dt).copy()

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(self.fmt, f"size mismatch: {len(self.data) - self.pos} trailing bytes")
