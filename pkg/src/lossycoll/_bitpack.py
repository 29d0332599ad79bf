"""Fixed-length sign/magnitude packing of small integer blocks.

A block of ``b`` signed integers is stored as::

    1 byte      code length L (bit width of the largest magnitude)
    ceil(b/8)   sign bitmap, bit i set when value i is negative   (only if L > 0)
    ceil(b*L/8) magnitudes, L bits each, LSB-first within bytes  (only if L > 0)

The vectorised helpers below process many equally sized blocks at once by
grouping them on L; the scalar helpers handle odd-sized tail blocks.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError

MAX_CODE_LEN = 32


def bit_length(mags: np.ndarray) -> np.ndarray:
    """Elementwise ``int.bit_length`` for non-negative integers below 2**53."""
    _, exp = np.frexp(np.asarray(mags, dtype=np.float64))
    return exp.astype(np.int64)


def encoded_size(count: int, code_len: int) -> int:
    if code_len == 0:
        return 1
    return 1 + (count + 7) // 8 + (count * code_len + 7) // 8


def _pack_rows(values: np.ndarray, code_len: int) -> np.ndarray:
    """Encode rows of ``values`` (k, b) that all share ``code_len`` > 0."""
    k, b = values.shape
    signs = np.packbits(values < 0, axis=1, bitorder="little")
    mags = np.abs(values).astype(np.uint64)
    shifts = np.arange(code_len, dtype=np.uint64)
    bits = ((mags[:, :, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    packed = np.packbits(bits.reshape(k, b * code_len), axis=1, bitorder="little")
    head = np.full((k, 1), code_len, dtype=np.uint8)
    return np.hstack([head, signs, packed])


def _unpack_rows(rows: np.ndarray, count: int, code_len: int) -> np.ndarray:
    """Inverse of :func:`_pack_rows` without the leading code-length column."""
    k = rows.shape[0]
    sign_bytes = (count + 7) // 8
    neg = np.unpackbits(rows[:, :sign_bytes], axis=1, bitorder="little")[:, :count]
    bits = np.unpackbits(rows[:, sign_bytes:], axis=1, bitorder="little")
    bits = bits[:, : count * code_len].reshape(k, count, code_len).astype(np.uint64)
    mags = (bits << np.arange(code_len, dtype=np.uint64)).sum(axis=2).astype(np.int64)
    return np.where(neg.astype(bool), -mags, mags)


def encode_micro_block(deltas) -> bytes:
    """Encode one block of signed integers (any length) to bytes."""
    values = np.asarray(deltas, dtype=np.int64).reshape(1, -1)
    if values.size == 0:
        return b"\x00"
    code_len = int(bit_length(np.abs(values).max()))
    if code_len == 0:
        return b"\x00"
    return _pack_rows(values, code_len).tobytes()


def decode_micro_block(buf, pos: int, count: int) -> tuple[np.ndarray, int]:
    """Decode one block of ``count`` integers starting at ``pos``.

    Returns the values and the position just past the block.
    """
    if pos >= len(buf):
        raise FormatError("truncated block: missing code length", pos)
    code_len = buf[pos]
    if code_len > MAX_CODE_LEN:
        raise FormatError(f"invalid code length {code_len}", pos)
    end = pos + encoded_size(count, code_len)
    if end > len(buf):
        raise FormatError("truncated block payload", pos)
    if code_len == 0:
        return np.zeros(count, dtype=np.int64), end
    row = np.frombuffer(buf, dtype=np.uint8, count=end - pos - 1, offset=pos + 1)
    return _unpack_rows(row.reshape(1, -1), count, int(code_len))[0], end


def block_sizes(code_lens: np.ndarray, count: int) -> np.ndarray:
    """Encoded byte size of each block of ``count`` values."""
    code_lens = np.asarray(code_lens, dtype=np.int64)
    body = (count + 7) // 8 + (count * code_lens + 7) // 8
    return np.where(code_lens > 0, 1 + body, 1)


def write_blocks(out: np.ndarray, starts: np.ndarray, values: np.ndarray, code_lens: np.ndarray) -> None:
    """Scatter the encodings of equally sized blocks into ``out``.

    ``values`` is (k, b), ``starts`` holds the output offset of each block.
    """
    out[starts] = code_lens.astype(np.uint8)
    for code_len in np.unique(code_lens):
        if code_len == 0:
            continue
        sel = np.flatnonzero(code_lens == code_len)
        rows = _pack_rows(values[sel], int(code_len))
        idx = starts[sel, None] + np.arange(rows.shape[1])
        out[idx] = rows


def read_blocks(buf: np.ndarray, starts: np.ndarray, code_lens: np.ndarray, count: int) -> np.ndarray:
    """Gather and decode equally sized blocks located at ``starts``."""
    result = np.zeros((len(starts), count), dtype=np.int64)
    for code_len in np.unique(code_lens):
        if code_len == 0:
            continue
        sel = np.flatnonzero(code_lens == code_len)
        width = encoded_size(count, int(code_len)) - 1
        rows = buf[starts[sel, None] + 1 + np.arange(width)]
        result[sel] = _unpack_rows(rows, count, int(code_len))
    return result
