"""Low-level helpers for the versioned little-endian binary model formats.

Every on-disk artifact starts with a 4-byte magic and a u32 version. All
counts are little-endian unsigned integers and all floating point payloads
are raw float64 little-endian. Readers track the current byte offset so
that malformed files can be rejected with a precise location.
"""

from __future__ import annotations

import struct

import numpy as np


class FileFormatError(ValueError):
    """Raised when a binary or CSV artifact cannot be parsed.

    Carries the file path and the byte offset at which the problem was
    detected, so `str(err)` pinpoints the failure.
    """

    def __init__(self, path, offset: int, reason: str):
        self.path = str(path)
        self.offset = offset
        self.reason = reason
        super().__init__(f"{self.path}: byte {offset}: {reason}")


class Reader:
    """Cursor over an in-memory byte buffer with offset-aware errors."""

    def __init__(self, data: bytes, path):
        self._data = data
        self._path = path
        self.offset = 0

    def error(self, reason: str, offset: int | None = None) -> FileFormatError:
        return FileFormatError(self._path, self.offset if offset is None else offset, reason)

    def _take(self, nbytes: int, what: str) -> bytes:
        end = self.offset + nbytes
        if end > len(self._data):
            raise self.error(f"truncated payload: expected {nbytes} bytes for {what}, "
                             f"only {len(self._data) - self.offset} left")
        chunk = self._data[self.offset:end]
        self.offset = end
        return chunk

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self._take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self._take(4, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self._take(8, what))[0]

    def f64_array(self, count: int, what: str) -> np.ndarray:
        start = self.offset
        raw = self._take(8 * count, what)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise self.error(f"non-finite value in {what}", offset=start + 8 * int(bad[0]))
        return arr

    def u32_array(self, count: int, what: str) -> np.ndarray:
        raw = self._take(4 * count, what)
        return np.frombuffer(raw, dtype="<u4").astype(np.int64)

    def bytes_(self, nbytes: int, what: str) -> bytes:
        return self._take(nbytes, what)

    def utf8(self, nbytes: int, what: str) -> str:
        start = self.offset
        raw = self._take(nbytes, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise self.error(f"invalid UTF-8 in {what}: {exc}", offset=start) from exc

    def expect_header(self, magic: bytes, version: int) -> None:
        got = self.bytes_(4, "magic")
        if got != magic:
            raise self.error(f"malformed header: magic {got!r}, expected {magic!r}", offset=0)
        ver = self.u32("version")
        if ver != version:
            raise self.error(f"malformed header: unsupported version {ver}, expected {version}",
                             offset=4)

    def expect_eof(self) -> None:
        if self.offset != len(self._data):
            raise self.error(f"trailing data: {len(self._data) - self.offset} unexpected bytes")


def read_file(path, magic: bytes, version: int = 1) -> Reader:
    with open(path, "rb") as fh:
        data = fh.read()
    reader = Reader(data, path)
    reader.expect_header(magic, version)
    return reader


class Writer:
    """Accumulates a binary artifact, then flushes it to disk in one write."""

    def __init__(self, magic: bytes, version: int = 1):
        self._parts: list[bytes] = [magic, struct.pack("<I", version)]

    def u16(self, value: int) -> None:
        self._parts.append(struct.pack("<H", value))

    def u32(self, value: int) -> None:
        self._parts.append(struct.pack("<I", value))

    def f64(self, value: float) -> None:
        self._parts.append(struct.pack("<d", value))

    def f64_array(self, arr: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def u32_array(self, arr: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(arr, dtype="<u4").tobytes())

    def bytes_(self, raw: bytes) -> None:
        self._parts.append(raw)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(b"".join(self._parts))
