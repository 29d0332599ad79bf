"""Constant-block baseline codec in the style of SZx.

Each block of ``block_len`` values is represented by the midpoint of its
min and max. Blocks whose values all sit within the bound of that midpoint
are stored as the midpoint alone; other blocks also store fixed-width
quantized offsets from the midpoint. As in :mod:`lossycoll.codec` the
header stores the grid half-step.

Frame layout (little-endian)::

    magic "ZSX1" | eb f32 | element_count u64 | block_len u32
    | per block: flag u8 (0 constant, 1 not) | midpoint f32 | [packed offsets]
"""

from __future__ import annotations

import math
import struct
import time

import numpy as np

from . import _bitpack
from .codec import CodecStats, ErrorBoundSpec, as_field, grid_bound, quantize, resolve_error_bound
from .errors import FormatError, ParameterError

__all__ = ["SzxFrame", "compress_szx", "decompress_szx", "DEFAULT_BLOCK_LEN"]

MAGIC = b"ZSX1"
_HEADER = struct.Struct("<4sfQI")
HEADER_SIZE = _HEADER.size
DEFAULT_BLOCK_LEN = 128


class SzxFrame:
    __slots__ = ("raw", "eb_abs", "element_count", "block_len")

    def __init__(self, raw):
        raw = bytes(raw)
        if len(raw) < HEADER_SIZE:
            raise FormatError(f"frame shorter than its {HEADER_SIZE}-byte header", len(raw))
        magic, eb, count, block_len = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}", 0)
        if not (math.isfinite(eb) and eb > 0):
            raise FormatError(f"invalid error bound {eb!r}", 4)
        if count == 0 or block_len == 0:
            raise FormatError("zero element count or block length", 8)
        self.raw = raw
        self.eb_abs = float(eb)
        self.element_count = count
        self.block_len = block_len

    def __len__(self) -> int:
        return len(self.raw)

    def __bytes__(self) -> bytes:
        return self.raw

    def __eq__(self, other) -> bool:
        return isinstance(other, SzxFrame) and self.raw == other.raw


def compress_szx(
    field, spec: ErrorBoundSpec, block_len: int = DEFAULT_BLOCK_LEN, *, absmax: float | None = None
) -> tuple[SzxFrame, CodecStats]:
    if block_len <= 0:
        raise ParameterError("block_len must be positive")
    t0 = time.perf_counter()
    x = as_field(field)
    target = resolve_error_bound(spec, x)
    eb = grid_bound(target, float(np.abs(x).max()) if absmax is None else absmax)
    n = len(x)
    n_blocks = -(-n // block_len)
    padded = np.empty(n_blocks * block_len, dtype=np.float64)
    padded[:n] = x
    padded[n:] = x[-1]
    blocks = padded.reshape(n_blocks, block_len)

    mids = ((blocks.max(axis=1) + blocks.min(axis=1)) / 2).astype(np.float32)
    mid64 = mids.astype(np.float64)
    constant = (np.abs(blocks - mid64[:, None]) <= target).all(axis=1)

    q = np.zeros(blocks.shape, dtype=np.int64)
    nc = np.flatnonzero(~constant)
    if nc.size:
        q[nc] = quantize(blocks[nc], eb, mid64[nc, None], limit=target)
    tail = n - (n_blocks - 1) * block_len
    q[-1, tail:] = 0

    code_lens = _bitpack.bit_length(np.abs(q).max(axis=1))
    # Non-constant blocks always carry a code-length byte, even for L == 0.
    sizes = np.where(constant, 5, 5 + _bitpack.block_sizes(code_lens, block_len))
    if tail != block_len and not constant[-1]:
        sizes[-1] = 5 + _bitpack.encoded_size(tail, int(code_lens[-1]))
    ends = HEADER_SIZE + np.cumsum(sizes)
    starts = ends - sizes
    out = np.empty(int(ends[-1]), dtype=np.uint8)
    out[:HEADER_SIZE] = np.frombuffer(_HEADER.pack(MAGIC, eb, n, block_len), dtype=np.uint8)
    out[starts] = (~constant).astype(np.uint8)
    out[starts[:, None] + 1 + np.arange(4)] = mids.astype("<f4").view(np.uint8).reshape(-1, 4)

    body = nc if (tail == block_len or constant[-1]) else nc[:-1]
    _bitpack.write_blocks(out, starts[body] + 5, q[body], code_lens[body])
    if tail != block_len and not constant[-1]:
        enc = _bitpack.encode_micro_block(q[-1, :tail])
        out[starts[-1] + 5 :] = np.frombuffer(enc, dtype=np.uint8)

    stats = CodecStats(
        original_bytes=4 * n,
        compressed_bytes=len(out),
        constant_block_fraction=float(np.count_nonzero(constant)) / n_blocks,
        compress_seconds=time.perf_counter() - t0,
    )
    return SzxFrame(out.tobytes()), stats


def _scan(frame: SzxFrame):
    raw = frame.raw
    size = len(raw)
    n, block_len = frame.element_count, frame.block_len
    n_blocks = -(-n // block_len)
    tail = n - (n_blocks - 1) * block_len
    full_sizes = [_bitpack.encoded_size(block_len, L) for L in range(_bitpack.MAX_CODE_LEN + 1)]
    tail_sizes = [_bitpack.encoded_size(tail, L) for L in range(_bitpack.MAX_CODE_LEN + 1)]
    starts = [0] * n_blocks
    flags = bytearray(n_blocks)
    code_lens = bytearray(n_blocks)
    pos = HEADER_SIZE
    last = n_blocks - 1
    for b in range(n_blocks):
        if pos + 5 > size:
            raise FormatError(f"truncated body in block {b}", min(pos, size))
        flag = raw[pos]
        starts[b] = pos
        if flag == 0:
            pos += 5
            continue
        if flag != 1:
            raise FormatError(f"invalid block flag {flag} in block {b}", pos)
        flags[b] = 1
        pos += 5
        if pos >= size:
            raise FormatError(f"truncated body in block {b}", size)
        L = raw[pos]
        if L > _bitpack.MAX_CODE_LEN:
            raise FormatError(f"invalid code length {L} in block {b}", pos)
        code_lens[b] = L
        pos += tail_sizes[L] if b == last else full_sizes[L]
    if pos > size:
        raise FormatError(f"truncated body in block {last}", size)
    if pos != size:
        raise FormatError(f"{size - pos} trailing bytes after last block", pos)
    as_i64 = lambda b: np.frombuffer(bytes(b), dtype=np.uint8).astype(np.int64)  # noqa: E731
    return np.asarray(starts, dtype=np.int64), as_i64(flags).astype(bool), as_i64(code_lens)


def decompress_szx(frame) -> np.ndarray:
    if not isinstance(frame, SzxFrame):
        frame = SzxFrame(frame)
    starts, nonconst, code_lens = _scan(frame)
    n, block_len = frame.element_count, frame.block_len
    n_blocks = len(starts)
    tail = n - (n_blocks - 1) * block_len
    buf = np.frombuffer(frame.raw, dtype=np.uint8)

    mids = buf[starts[:, None] + 1 + np.arange(4)].copy().view("<f4").reshape(-1).astype(np.float64)
    q = np.zeros((n_blocks, block_len), dtype=np.int64)
    sel = np.flatnonzero(nonconst)
    tail_partial = tail != block_len and nonconst[-1]
    if tail_partial:
        sel = sel[:-1]
        q[-1, :tail], _ = _bitpack.decode_micro_block(frame.raw, int(starts[-1]) + 5, tail)
    if sel.size:
        q[sel] = _bitpack.read_blocks(buf, starts[sel] + 5, code_lens[sel], block_len)
    out = (mids[:, None] + q * (2.0 * frame.eb_abs)).astype(np.float32)
    return out.reshape(-1)[:n]
