"""Little-endian binary primitives shared by map archives and session files."""

from __future__ import annotations

import struct

import numpy as np

from .geometry import Pose

MAGIC = b"SLIM"


class FormatError(ValueError):
    pass


class Writer:
    def __init__(self):
        self.parts: list = []

    def raw(self, b: bytes) -> None:
        self.parts.append(b)

    def u8(self, v: int) -> None:
        self.parts.append(struct.pack("<B", v))

    def u16(self, v: int) -> None:
        self.parts.append(struct.pack("<H", v))

    def varint(self, v: int) -> None:
        v = int(v)
        if v < 0:
            raise ValueError("varint must be non-negative")
        out = bytearray()
        while True:
            byte = v & 0x7F
            v >>= 7
            if v:
                out.append(byte | 0x80)
            else:
                out.append(byte)
                break
        self.parts.append(bytes(out))

    def f64(self, arr) -> None:
        self.parts.append(np.asarray(arr, dtype="<f8").tobytes())

    def f32(self, arr) -> None:
        self.parts.append(np.asarray(arr, dtype="<f4").tobytes())

    def pose(self, p: Pose) -> None:
        self.f64(p.rotation.ravel())
        self.f64(p.translation)

    def upper(self, M: np.ndarray) -> None:
        """Packed upper triangle (row-major, diagonal included) as f32."""
        self.f32(M[np.triu_indices(len(M))])

    def header(self, kind: int, version: int) -> None:
        self.raw(MAGIC)
        self.u16(version)
        self.u8(kind)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise FormatError("unexpected end of data")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def varint(self) -> int:
        shift, v = 0, 0
        while True:
            b = self.u8()
            v |= (b & 0x7F) << shift
            if not b & 0x80:
                return v
            shift += 7

    def f64(self, n: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * n), dtype="<f8").astype(float)

    def f32(self, n: int) -> np.ndarray:
        return np.frombuffer(self._take(4 * n), dtype="<f4").astype(np.float32)

    def pose(self) -> Pose:
        v = self.f64(12)
        return Pose(v[:9].reshape(3, 3), v[9:])

    def upper(self, dim: int) -> np.ndarray:
        vals = self.f32(dim * (dim + 1) // 2).astype(float)
        M = np.zeros((dim, dim))
        M[np.triu_indices(dim)] = vals
        return M

    def header(self, version: int) -> int:
        if bytes(self._take(4)) != MAGIC:
            raise FormatError("bad magic")
        v = self.u16()
        if v != version:
            raise FormatError(f"unsupported version {v}")
        return self.u8()

    def done(self) -> bool:
        return self.pos == len(self.data)
