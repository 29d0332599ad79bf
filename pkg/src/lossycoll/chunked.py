"""Chunked compression with a front-of-buffer size index.

The field is cut into chunks of ``chunk_len`` values, each compressed into a
self-contained frame. A progress hook runs between chunks so a caller can
poll outstanding communication while the codec works.

Layout (little-endian)::

    chunk_count u32 | chunk_count x compressed size u32 | chunk frames
"""

from __future__ import annotations

import struct
from typing import Callable, Optional

import numpy as np

from . import codec, szx
from .codec import CodecParams, ErrorBoundSpec, as_field, resolve_error_bound
from .errors import ChunkAborted, FormatError, LossyCollError, ParameterError

__all__ = [
    "DEFAULT_CHUNK_LEN",
    "ProgressHook",
    "ChunkedFrame",
    "compress_chunked",
    "decompress_chunked",
    "chunk_offsets",
    "decompress_any",
]

DEFAULT_CHUNK_LEN = 5120

# Called between chunks; returning False aborts the operation.
ProgressHook = Callable[[], Optional[bool]]


class ChunkedFrame:
    __slots__ = ("raw", "sizes")

    def __init__(self, raw):
        raw = bytes(raw)
        if len(raw) < 4:
            raise FormatError("chunked frame shorter than its chunk count", len(raw))
        (count,) = struct.unpack_from("<I", raw)
        head = 4 + 4 * count
        if len(raw) < head:
            raise FormatError(f"index for {count} chunks is truncated", len(raw))
        sizes = np.frombuffer(raw, dtype="<u4", count=count, offset=4).astype(np.int64)
        payload = len(raw) - head
        total = 0
        for i, size in enumerate(sizes):
            total += int(size)
            if total > payload:
                raise FormatError(
                    f"index/payload mismatch at chunk {i}: sizes exceed payload of {payload} bytes",
                    4 + 4 * i,
                )
        if total != payload:
            raise FormatError(
                f"index/payload mismatch: sizes sum to {total}, payload is {payload} bytes", head
            )
        self.raw = raw
        self.sizes = sizes

    @property
    def chunk_count(self) -> int:
        return len(self.sizes)

    def __len__(self) -> int:
        return len(self.raw)

    def __bytes__(self) -> bytes:
        return self.raw

    def chunk(self, i: int) -> bytes:
        offset, length = chunk_offsets(self)[i]
        return self.raw[offset : offset + length]


def _poll(hook: ProgressHook | None, where: str) -> None:
    if hook is not None and hook() is False:
        raise ChunkAborted(f"progress hook aborted {where}")


def _compress_one(values, spec, params, codec_name: str, absmax: float) -> bytes:
    if codec_name == "zlite":
        return bytes(codec.compress(values, spec, params, absmax=absmax)[0])
    if codec_name == "szx":
        return bytes(szx.compress_szx(values, spec, absmax=absmax)[0])
    raise ParameterError(f"unknown codec {codec_name!r}")


def decompress_any(frame) -> np.ndarray:
    """Decode a single zlite or szx frame, dispatching on its magic."""
    raw = bytes(frame)
    if raw[:4] == codec.MAGIC:
        return codec.decompress(raw)
    if raw[:4] == szx.MAGIC:
        return szx.decompress_szx(raw)
    raise FormatError(f"unknown frame magic {raw[:4]!r}", 0)


def compress_chunked(
    field,
    spec: ErrorBoundSpec,
    params: CodecParams | None = None,
    chunk_len: int = DEFAULT_CHUNK_LEN,
    hook: ProgressHook | None = None,
    codec_name: str = "zlite",
) -> ChunkedFrame:
    """Compress ``field`` chunk by chunk, calling ``hook`` between chunks.

    The bound is resolved once against the whole field so every chunk shares
    one absolute bound, and chunk boundaries fall on thread-block boundaries;
    together these make the reconstruction identical to whole-buffer
    compression.
    """
    params = params or CodecParams()
    if chunk_len <= 0:
        raise ParameterError("chunk_len must be positive")
    if codec_name not in ("zlite", "szx"):
        raise ParameterError(f"unknown codec {codec_name!r}")
    if codec_name == "zlite" and chunk_len % params.thread_block_len:
        raise ParameterError(
            f"thread_block_len {params.thread_block_len} must divide chunk_len {chunk_len}"
        )
    if codec_name == "szx" and chunk_len % szx.DEFAULT_BLOCK_LEN:
        raise ParameterError(f"szx block length must divide chunk_len {chunk_len}")
    x = as_field(field)
    abs_spec = ErrorBoundSpec.absolute(resolve_error_bound(spec, x))
    absmax = float(np.abs(x).max())
    # Chunks are sequential here: the hook is the overlap mechanism.
    serial = CodecParams(params.thread_block_len, params.micro_block_len, 1) if hook else params

    frames = []
    for i, start in enumerate(range(0, len(x), chunk_len)):
        if i:
            _poll(hook, f"compression before chunk {i}")
        try:
            frames.append(_compress_one(x[start : start + chunk_len], abs_spec, serial, codec_name, absmax))
        except LossyCollError as exc:
            raise type(exc)(f"chunk {i}: {exc}") from exc
    _poll(hook, "compression after the last chunk")
    index = struct.pack(f"<I{len(frames)}I", len(frames), *map(len, frames))
    return ChunkedFrame(b"".join([index, *frames]))


def chunk_offsets(frame) -> list[tuple[int, int]]:
    """(byte offset, byte length) of every chunk inside the chunked frame."""
    if not isinstance(frame, ChunkedFrame):
        frame = ChunkedFrame(frame)
    head = 4 + 4 * frame.chunk_count
    ends = head + np.cumsum(frame.sizes)
    return [(int(e - s), int(s)) for e, s in zip(ends, frame.sizes)]


def decompress_chunked(frame, hook: ProgressHook | None = None) -> np.ndarray:
    """Decode every chunk in order, calling ``hook`` between chunks."""
    if not isinstance(frame, ChunkedFrame):
        frame = ChunkedFrame(frame)
    if frame.chunk_count == 0:
        raise FormatError("chunked frame holds no chunks", 0)
    parts = []
    for i, (offset, length) in enumerate(chunk_offsets(frame)):
        if i:
            _poll(hook, f"decompression before chunk {i}")
        try:
            parts.append(decompress_any(frame.raw[offset : offset + length]))
        except FormatError as exc:
            raise FormatError(f"chunk {i}: {exc}", offset) from exc
    _poll(hook, "decompression after the last chunk")
    return np.concatenate(parts)
