"""Small helpers for chunked byte-stream plumbing and append-only files."""

from __future__ import annotations

import io
import os
from typing import Callable, Iterable, Iterator

DEFAULT_CHUNK_SIZE = 1024 * 1024


def repair_torn_tail(path: str | os.PathLike) -> None:
    """Truncate a torn trailing line left by a crash mid-append.

    Line-oriented append-only files call this before writing so a new entry
    never concatenates onto half-written bytes. A torn entry was never
    acknowledged, so dropping it is safe.
    """
    try:
        size = os.path.getsize(path)
    except OSError:
        return
    if size == 0:
        return
    with open(path, "rb+") as fh:
        fh.seek(-1, os.SEEK_END)
        if fh.read(1) == b"\n":
            return
        fh.seek(0)
        data = fh.read()
        fh.truncate(data.rfind(b"\n") + 1)


def iter_chunks(src, chunk_size: int = DEFAULT_CHUNK_SIZE) -> Iterator[bytes]:
    """Yield successive reads of at most ``chunk_size`` bytes from a file object."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    while True:
        chunk = src.read(chunk_size)
        if not chunk:
            return
        yield chunk


class IterReader(io.RawIOBase):
    """Adapt an iterable of byte chunks into a readable file object.

    Tracks ``max_chunk``, the largest single buffer ever handed out, so tests
    can assert that transfers stay chunk-bounded.
    """

    def __init__(self, chunks: Iterable[bytes]):
        self._iter = iter(chunks)
        self._buf = b""
        self.max_chunk = 0

    def readable(self) -> bool:
        return True

    def read(self, size: int = -1) -> bytes:
        if size is None or size < 0:
            pieces = [self._buf]
            pieces.extend(self._iter)
            self._buf = b""
            out = b"".join(pieces)
            self.max_chunk = max(self.max_chunk, len(out))
            return out
        while len(self._buf) < size:
            try:
                self._buf += next(self._iter)
            except StopIteration:
                break
        out, self._buf = self._buf[:size], self._buf[size:]
        if out:
            self.max_chunk = max(self.max_chunk, len(out))
        return out


class CountingReader(io.RawIOBase):
    """Wrap a reader, counting bytes and recording the largest single read."""

    def __init__(self, inner, on_chunk: Callable[[bytes], None] | None = None):
        self._inner = inner
        self._on_chunk = on_chunk
        self.bytes_read = 0
        self.max_chunk = 0

    def readable(self) -> bool:
        return True

    def read(self, size: int = -1) -> bytes:
        chunk = self._inner.read(size)
        if chunk:
            self.bytes_read += len(chunk)
            self.max_chunk = max(self.max_chunk, len(chunk))
            if self._on_chunk is not None:
                self._on_chunk(chunk)
        return chunk
