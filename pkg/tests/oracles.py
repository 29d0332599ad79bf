"""Slow, obviously-correct reference implementations used only by tests."""

from __future__ import annotations

import struct

import numpy as np


class BitWriter:
    """Appends bits one at a time, least significant bit of each byte first."""

    def __init__(self):
        self.out = bytearray()
        self.nbits = 0

    def put(self, bit: int) -> None:
        if self.nbits % 8 == 0:
            self.out.append(0)
        if bit:
            self.out[-1] |= 1 << (self.nbits % 8)
        self.nbits += 1

    def put_uint(self, value: int, width: int) -> None:
        for i in range(width):
            self.put((value >> i) & 1)


def naive_micro_block(deltas) -> bytes:
    vals = [int(v) for v in deltas]
    L = max(abs(v) for v in vals).bit_length() if vals else 0
    if L == 0:
        return bytes([0])
    signs = BitWriter()
    for v in vals:
        signs.put(v < 0)
    mags = BitWriter()
    for v in vals:
        mags.put_uint(abs(v), L)
    return bytes([L]) + bytes(signs.out) + bytes(mags.out)


def naive_decode_micro_block(buf: bytes, pos: int, count: int) -> tuple[list[int], int]:
    L = buf[pos]
    pos += 1
    if L == 0:
        return [0] * count, pos
    nsign = (count + 7) // 8
    signs = buf[pos:pos + nsign]
    pos += nsign
    nmag = (count * L + 7) // 8
    mags = int.from_bytes(buf[pos:pos + nmag], "little")
    pos += nmag
    out = []
    for i in range(count):
        m = (mags >> (i * L)) & ((1 << L) - 1)
        out.append(-m if (signs[i // 8] >> (i % 8)) & 1 else m)
    return out, pos


def naive_frame(q, eb: float, tbl: int = 1024, mbl: int = 32) -> bytes:
    """Frame bytes for already-quantized integers ``q``."""
    q = [int(v) for v in q]
    out = bytearray(struct.pack("<4sBfQII", b"ZCL1", 1, eb, len(q), tbl, mbl))
    for t in range(0, len(q), tbl):
        block = q[t:t + tbl]
        out += struct.pack("<i", block[0])
        deltas = [0] + [b - a for a, b in zip(block, block[1:])]
        for m in range(0, len(deltas), mbl):
            out += naive_micro_block(deltas[m:m + mbl])
    return bytes(out)


def naive_sizes(n: int, tbl: int, mbl: int, code_len: int = 0) -> int:
    """Frame size when every micro-block has the same code length."""
    size = 25 + 4 * (-(-n // tbl))
    for t in range(0, n, tbl):
        tb = min(tbl, n - t)
        for m in range(0, tb, mbl):
            b = min(mbl, tb - m)
            size += 1 if code_len == 0 else 1 + (b + 7) // 8 + (b * code_len + 7) // 8
    return size


def exact_reduce(fields, kind: str) -> np.ndarray:
    stack = np.stack([np.asarray(f, dtype=np.float64) for f in fields])
    return {"sum": stack.sum(0), "avg": stack.mean(0), "max": stack.max(0), "min": stack.min(0)}[kind]


def ring_reduce_scatter32(fields, kind: str) -> list[np.ndarray]:
    """Uncompressed float32 ring reduce-scatter in the same order as the library."""
    n = len(fields)
    m = len(fields[0]) // n
    chunk = lambda r, i: np.asarray(fields[r][i * m:(i + 1) * m], dtype=np.float32)  # noqa: E731
    op = {"sum": np.add, "avg": np.add, "max": np.maximum, "min": np.minimum}[kind]
    acc = [chunk(r, (r - 1) % n) for r in range(n)]
    for s in range(n - 1):
        incoming = [acc[(r - 1) % n] for r in range(n)]
        acc = [op(incoming[r], chunk(r, (r - s - 2) % n), dtype=np.float32) for r in range(n)]
    if kind == "avg":
        acc = [np.divide(a, np.float32(n), dtype=np.float32) for a in acc]
    return acc


def bfs_tree_depths(n: int) -> dict[int, int]:
    """Round (1-based) in which each virtual rank first holds the data.

    Simulates recursive halving from the root: the widest span is sent
    first, so every holder forwards to ``v + span`` while span shrinks.
    """
    have = {0: 0}
    span = 1
    while span < n:
        span *= 2
    rnd = 0
    span //= 2
    while span >= 1:
        rnd += 1
        for v in list(have):
            if v % (2 * span) == 0 and v + span < n:
                have[v + span] = rnd
        span //= 2
    return have
