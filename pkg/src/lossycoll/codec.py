"""Error-bounded lossy codec for float32 fields.

Values are quantized onto a uniform grid of step ``2 * eb`` and predicted
from their predecessor (1D Lorenzo) inside fixed-size thread-blocks. Each
thread-block stores its first quantized value as a 4-byte integer and the
remaining deltas in micro-blocks packed by :mod:`lossycoll._bitpack`.
Thread-blocks never share prediction state, so they are encoded
independently and the output does not depend on the worker count.

The header stores the grid half-step, which sits slightly below the
requested bound; see :func:`grid_bound`.

Frame layout (little-endian)::

    magic "ZCL1" | version u8 | eb f32 | element_count u64
    | thread_block_len u32 | micro_block_len u32
    | for each thread-block: first value i32, micro-block encodings
"""

from __future__ import annotations

import enum
import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _bitpack
from ._bitpack import encode_micro_block
from .errors import FormatError, IngestionError, ParameterError, QuantizationError

__all__ = [
    "BoundMode",
    "ErrorBoundSpec",
    "CodecParams",
    "CompressedFrame",
    "CodecStats",
    "as_field",
    "resolve_error_bound",
    "representable_bound",
    "grid_bound",
    "quantize",
    "fused_quantize_lorenzo",
    "encode_micro_block",
    "compress",
    "decompress",
    "compression_metrics",
]

MAGIC = b"ZCL1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBfQII")
HEADER_SIZE = _HEADER.size

_INT32_MIN = -(2**31)
_INT32_MAX = 2**31 - 1

# Values encoded per unit of work; a whole number of thread-blocks.
_SEGMENT_VALUES = 1 << 16


class BoundMode(enum.Enum):
    ABSOLUTE = "abs"
    RELATIVE = "rel"


@dataclass(frozen=True)
class ErrorBoundSpec:
    mode: BoundMode
    value: float

    def __post_init__(self):
        if not isinstance(self.mode, BoundMode):
            object.__setattr__(self, "mode", BoundMode(self.mode))
        if not math.isfinite(self.value) or self.value <= 0:
            raise ParameterError(f"error bound must be positive and finite, got {self.value!r}")

    @classmethod
    def absolute(cls, value: float) -> "ErrorBoundSpec":
        return cls(BoundMode.ABSOLUTE, float(value))

    @classmethod
    def relative(cls, value: float) -> "ErrorBoundSpec":
        return cls(BoundMode.RELATIVE, float(value))

    @classmethod
    def parse(cls, text: str) -> "ErrorBoundSpec":
        """Parse ``rel:1e-4`` or ``abs:0.5``."""
        mode, sep, value = text.partition(":")
        if not sep:
            raise ParameterError(f"bound must look like rel:1e-4 or abs:1e-4, got {text!r}")
        try:
            return cls(BoundMode(mode.strip().lower()), float(value))
        except ValueError as exc:
            raise ParameterError(f"bad bound {text!r}: {exc}") from None

    def __str__(self) -> str:
        return f"{self.mode.value}:{self.value:g}"


@dataclass(frozen=True)
class CodecParams:
    thread_block_len: int = 1024
    micro_block_len: int = 32
    parallelism: int = 1

    def __post_init__(self):
        if self.thread_block_len <= 0 or self.micro_block_len <= 0 or self.parallelism < 1:
            raise ParameterError("block lengths must be positive and parallelism >= 1")
        if self.thread_block_len % self.micro_block_len:
            raise ParameterError("micro_block_len must divide thread_block_len")
        if self.thread_block_len > _INT32_MAX:
            raise ParameterError("thread_block_len too large")


@dataclass
class CodecStats:
    original_bytes: int
    compressed_bytes: int
    constant_block_fraction: float
    compress_seconds: float | None = None
    decompress_seconds: float | None = None

    @property
    def ratio(self) -> float:
        return self.original_bytes / self.compressed_bytes

    @property
    def bit_rate(self) -> float:
        return 32.0 / self.ratio


def as_field(values) -> np.ndarray:
    """Return ``values`` as a contiguous 1-D float32 array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float32).reshape(-1))
    if arr.size == 0:
        raise ParameterError("field must contain at least one value")
    finite = np.isfinite(arr)
    if not finite.all():
        index = int(np.argmin(finite))
        raise IngestionError(f"non-finite value {arr[index]} at index {index}", index)
    return arr


def resolve_error_bound(spec: ErrorBoundSpec, field) -> float:
    """Absolute bound implied by ``spec`` for ``field``."""
    if spec.mode is BoundMode.ABSOLUTE:
        return spec.value
    arr = as_field(field)
    value_range = float(arr.max()) - float(arr.min())
    if value_range == 0.0:
        return spec.value
    return spec.value * value_range


def representable_bound(eb: float) -> float:
    """Largest float32 not above ``eb``; this is what frames store and use."""
    if not math.isfinite(eb) or eb <= 0:
        raise ParameterError(f"error bound must be positive and finite, got {eb!r}")
    e32 = np.float32(min(eb, float(np.finfo(np.float32).max)))
    if float(e32) > eb:
        e32 = np.nextafter(e32, np.float32(0))
    if e32 <= 0:
        raise ParameterError(f"error bound {eb!r} underflows float32")
    return float(e32)


def grid_bound(eb: float, absmax: float) -> float:
    """Half-step of the quantization grid that honours ``eb`` after float32 output.

    Grid points are cast to float32 on reconstruction, which can add half an
    ulp of error at half-grid ties. The step is shrunk by at least
    ``eb / 256`` (more for data far from zero relative to ``eb``) so the
    requested bound still holds. The floor keeps the grid independent of the
    data in ordinary cases, which makes re-compression idempotent.
    """
    margin = max(eb * 2.0**-8, float(np.spacing(np.float32(absmax + eb))))
    if margin >= eb:
        raise QuantizationError(
            f"bound {eb!r} is below float32 resolution for values of magnitude {absmax!r}"
        )
    return representable_bound(eb - margin)


def _reconstruct(q: np.ndarray, two_eb: float, base) -> np.ndarray:
    return (base + q * two_eb).astype(np.float32)


def quantize(values: np.ndarray, eb: float, base=0.0, limit: float | None = None) -> np.ndarray:
    """Quantize float32 ``values`` around ``base`` with step ``2 * eb``.

    Rounding is half away from zero. When casting a grid point back to
    float32 would push the error past ``limit`` (default ``eb``), the index
    moves one step toward the value; if that still fails the bound is finer
    than float32 resolution there and :class:`QuantizationError` is raised.
    """
    limit = eb if limit is None else limit
    x = np.asarray(values, dtype=np.float64)
    two_eb = 2.0 * eb
    v = (x - base) / two_eb
    whole = np.trunc(v)
    q = whole + np.where(np.abs(v - whole) >= 0.5, np.sign(v), 0.0)
    out_of_range = (q < _INT32_MIN) | (q > _INT32_MAX)
    if out_of_range.any():
        index = int(np.argmax(out_of_range.reshape(-1)))
        raise QuantizationError(
            f"value {x.reshape(-1)[index]!r} at flat index {index} overflows the 32-bit quantization range "
            f"for bound {eb!r}",
            index,
        )
    recon = _reconstruct(q, two_eb, base).astype(np.float64)
    bad = np.abs(recon - x) > limit
    if bad.any():
        q[bad] += np.sign(x[bad] - recon[bad])
        recon = _reconstruct(q, two_eb, base).astype(np.float64)
        bad = (np.abs(recon - x) > limit) | (q < _INT32_MIN) | (q > _INT32_MAX)
        if bad.any():
            index = int(np.argmax(bad.reshape(-1)))
            raise QuantizationError(
                f"bound {limit!r} is below float32 resolution for value "
                f"{x.reshape(-1)[index]!r} at flat index {index}",
                index,
            )
    return q.astype(np.int64)


def fused_quantize_lorenzo(block, eb_abs: float) -> tuple[int, np.ndarray]:
    """Quantize one thread-block and return its first value and deltas."""
    if not eb_abs > 0:
        raise ParameterError("eb_abs must be positive")
    q = quantize(as_field(block), eb_abs)
    return int(q[0]), np.diff(q)


class CompressedFrame:
    """A parsed view over the bytes of one compressed field."""

    __slots__ = ("raw", "eb_abs", "element_count", "thread_block_len", "micro_block_len")

    def __init__(self, raw):
        raw = bytes(raw)
        if len(raw) < HEADER_SIZE:
            raise FormatError(f"frame shorter than its {HEADER_SIZE}-byte header", len(raw))
        magic, version, eb, count, tbl, mbl = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}", 0)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}", 4)
        if not (math.isfinite(eb) and eb > 0):
            raise FormatError(f"invalid error bound {eb!r}", 5)
        if count == 0:
            raise FormatError("zero element count", 9)
        if mbl == 0 or tbl == 0 or tbl % mbl:
            raise FormatError(f"invalid block lengths {tbl}/{mbl}", 17)
        self.raw = raw
        self.eb_abs = float(eb)
        self.element_count = count
        self.thread_block_len = tbl
        self.micro_block_len = mbl

    def __len__(self) -> int:
        return len(self.raw)

    def __bytes__(self) -> bytes:
        return self.raw

    def __eq__(self, other) -> bool:
        return isinstance(other, CompressedFrame) and self.raw == other.raw

    def __repr__(self) -> str:
        return (
            f"CompressedFrame(n={self.element_count}, eb={self.eb_abs:g}, "
            f"bytes={len(self.raw)})"
        )


def _encode_segment(q: np.ndarray, tbl: int, mbl: int) -> tuple[bytes, int]:
    """Encode whole thread-blocks of quantized values; returns (bytes, #constant micro-blocks)."""
    n = len(q)
    deltas = np.empty(n, dtype=np.int64)
    deltas[0] = 0
    np.subtract(q[1:], q[:-1], out=deltas[1:])
    deltas[::tbl] = 0
    outliers = q[::tbl].astype("<i4")

    full, tail = divmod(n, mbl)
    blocks = deltas[: full * mbl].reshape(full, mbl)
    code_lens = _bitpack.bit_length(np.abs(blocks).max(axis=1)) if full else np.zeros(0, np.int64)
    sizes = _bitpack.block_sizes(code_lens, mbl)
    constant = int(np.count_nonzero(code_lens == 0))
    tail_bytes = b""
    if tail:
        tail_bytes = encode_micro_block(deltas[full * mbl :])
        sizes = np.append(sizes, len(tail_bytes))
        constant += tail_bytes == b"\x00"

    per_tb = tbl // mbl
    extra = np.zeros(len(sizes), dtype=np.int64)
    extra[::per_tb] = 4
    ends = np.cumsum(sizes + extra)
    starts = ends - sizes
    out = np.empty(int(ends[-1]), dtype=np.uint8)
    outlier_pos = starts[::per_tb] - 4
    out[outlier_pos[:, None] + np.arange(4)] = outliers.view(np.uint8).reshape(-1, 4)
    _bitpack.write_blocks(out, starts[:full], blocks, code_lens)
    if tail:
        out[starts[-1] :] = np.frombuffer(tail_bytes, dtype=np.uint8)
    return out.tobytes(), constant


def compress(
    field, spec: ErrorBoundSpec, params: CodecParams | None = None, *, absmax: float | None = None
) -> tuple[CompressedFrame, CodecStats]:
    """Compress ``field`` so every value is reconstructed within the bound.

    ``absmax`` overrides the magnitude used by :func:`grid_bound`; pieces of
    a larger field pass the whole field's value to share its grid.
    """
    params = params or CodecParams()
    t0 = time.perf_counter()
    x = as_field(field)
    target = resolve_error_bound(spec, x)
    eb = grid_bound(target, float(np.abs(x).max()) if absmax is None else absmax)
    q = quantize(x, eb, limit=target)

    tbl, mbl = params.thread_block_len, params.micro_block_len
    seg = tbl * max(1, _SEGMENT_VALUES // tbl)
    segments = [q[i : i + seg] for i in range(0, len(q), seg)]
    if params.parallelism > 1 and len(segments) > 1:
        with ThreadPoolExecutor(max_workers=params.parallelism) as pool:
            encoded = list(pool.map(lambda s: _encode_segment(s, tbl, mbl), segments))
    else:
        encoded = [_encode_segment(s, tbl, mbl) for s in segments]

    header = _HEADER.pack(MAGIC, FORMAT_VERSION, eb, len(x), tbl, mbl)
    raw = b"".join([header] + [body for body, _ in encoded])
    n_micro = -(-len(x) // mbl)
    stats = CodecStats(
        original_bytes=4 * len(x),
        compressed_bytes=len(raw),
        constant_block_fraction=sum(c for _, c in encoded) / n_micro,
        compress_seconds=time.perf_counter() - t0,
    )
    return CompressedFrame(raw), stats


def _scan(frame: CompressedFrame):
    """Locate every outlier and micro-block; returns (outlier_pos, starts, code_lens)."""
    raw = frame.raw
    size = len(raw)
    n, tbl, mbl = frame.element_count, frame.thread_block_len, frame.micro_block_len
    n_micro = -(-n // mbl)
    tail = n - (n_micro - 1) * mbl
    per_tb = tbl // mbl
    full_sizes = [_bitpack.encoded_size(mbl, L) for L in range(_bitpack.MAX_CODE_LEN + 1)]
    tail_sizes = [_bitpack.encoded_size(tail, L) for L in range(_bitpack.MAX_CODE_LEN + 1)]

    outlier_pos = []
    starts = [0] * n_micro
    code_lens = bytearray(n_micro)
    pos = HEADER_SIZE
    last = n_micro - 1
    for m in range(n_micro):
        if m % per_tb == 0:
            outlier_pos.append(pos)
            pos += 4
        if pos >= size:
            raise FormatError(f"truncated body in micro-block {m}", min(pos, size))
        L = raw[pos]
        if L > _bitpack.MAX_CODE_LEN:
            raise FormatError(f"invalid code length {L} in micro-block {m}", pos)
        starts[m] = pos
        code_lens[m] = L
        pos += tail_sizes[L] if m == last else full_sizes[L]
    if pos > size:
        raise FormatError(f"truncated body in micro-block {last}", size)
    if pos != size:
        raise FormatError(f"{size - pos} trailing bytes after last micro-block", pos)
    return (
        np.asarray(outlier_pos, dtype=np.int64),
        np.asarray(starts, dtype=np.int64),
        np.frombuffer(bytes(code_lens), dtype=np.uint8).astype(np.int64),
    )


def decompress(frame) -> np.ndarray:
    """Reconstruct the float32 field held in ``frame``."""
    if not isinstance(frame, CompressedFrame):
        frame = CompressedFrame(frame)
    outlier_pos, starts, code_lens = _scan(frame)
    n, tbl, mbl = frame.element_count, frame.thread_block_len, frame.micro_block_len
    buf = np.frombuffer(frame.raw, dtype=np.uint8)

    full, tail = divmod(n, mbl)
    deltas = np.zeros(-(-n // tbl) * tbl, dtype=np.int64)
    if full:
        blocks = _bitpack.read_blocks(buf, starts[:full], code_lens[:full], mbl)
        deltas[: full * mbl] = blocks.reshape(-1)
    if tail:
        deltas[full * mbl : n], _ = _bitpack.decode_micro_block(frame.raw, int(starts[-1]), tail)

    outliers = buf[outlier_pos[:, None] + np.arange(4)].copy().view("<i4").reshape(-1)
    deltas = deltas.reshape(-1, tbl)
    deltas[:, 0] = 0
    q = np.cumsum(deltas, axis=1)
    q += outliers[:, None]
    return _reconstruct(q.reshape(-1)[:n], 2.0 * frame.eb_abs, 0.0)


def compression_metrics(frame, field=None) -> CodecStats:
    """Ratio, bit rate and constant-block fraction of an existing frame."""
    if not isinstance(frame, CompressedFrame):
        frame = CompressedFrame(frame)
    if field is not None and as_field(field).size != frame.element_count:
        raise ParameterError("field length does not match the frame's element count")
    _, _, code_lens = _scan(frame)
    return CodecStats(
        original_bytes=4 * frame.element_count,
        compressed_bytes=len(frame),
        constant_block_fraction=float(np.count_nonzero(code_lens == 0)) / len(code_lens),
    )
