from __future__ import annotations

import enum
import struct
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .. import chunked, codec, szx
from ..codec import BoundMode, CodecParams, ErrorBoundSpec, as_field
from ..errors import CollectiveError, LossyCollError, ParameterError
from ..transport import Communicator, HandleState, MessageHandle


class Codec(enum.Enum):
    ZLITE = "zlite"
    SZX = "szx"


class ReduceKind(enum.Enum):
    SUM = "sum"
    MAX = "max"
    MIN = "min"
    AVERAGE = "avg"


class Placement(enum.Enum):
    """Where a schedule applies the codec."""

    NONE = "plain"
    ONCE = "z"
    PER_HOP = "cprp2p"


@dataclass(frozen=True)
class CollectiveConfig:
    error_bound: ErrorBoundSpec = field(default_factory=lambda: ErrorBoundSpec.relative(1e-4))
    codec: Codec = Codec.ZLITE
    chunk_len: int = chunked.DEFAULT_CHUNK_LEN
    pipeline_segment_bytes: int = 65536
    self_exact: bool = True
    params: CodecParams = field(default_factory=CodecParams)
    timeout: float | None = None

    def __post_init__(self):
        if not isinstance(self.codec, Codec):
            object.__setattr__(self, "codec", Codec(self.codec))
        if self.pipeline_segment_bytes <= 0:
            raise ParameterError("pipeline_segment_bytes must be positive")
        if self.chunk_len <= 0:
            raise ParameterError("chunk_len must be positive")
        block = self.params.thread_block_len if self.codec is Codec.ZLITE else szx.DEFAULT_BLOCK_LEN
        if self.chunk_len % block:
            raise ParameterError(f"block length {block} must divide chunk_len {self.chunk_len}")


@dataclass
class Hop:
    round: int
    peer: int
    direction: str  # "send" or "recv"
    nbytes: int
    codec: bool  # a codec ran specifically for this hop
    label: str = "data"


@dataclass
class OpCounters:
    """Per-rank accounting for one collective call."""

    compress_ops: int = 0
    decompress_ops: int = 0
    rounds: int = 0
    eb_abs: float | None = None
    hops: list[Hop] = field(default_factory=list)
    codec_seconds: float = 0.0
    comm_seconds: float = 0.0
    reduce_seconds: float = 0.0

    def hops_where(self, **match) -> list[Hop]:
        return [h for h in self.hops if all(getattr(h, k) == v for k, v in match.items())]


@contextmanager
def _timed(ops: OpCounters, attr: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        setattr(ops, attr, getattr(ops, attr) + time.perf_counter() - t0)


def compress_counted(x: np.ndarray, spec: ErrorBoundSpec, cfg: CollectiveConfig, ops: OpCounters) -> bytes:
    with _timed(ops, "codec_seconds"):
        if cfg.codec is Codec.ZLITE:
            raw = bytes(codec.compress(x, spec, cfg.params)[0])
        else:
            raw = bytes(szx.compress_szx(x, spec)[0])
    ops.compress_ops += 1
    return raw


def decompress_counted(raw: bytes, ops: OpCounters) -> np.ndarray:
    with _timed(ops, "codec_seconds"):
        out = chunked.decompress_any(raw)
    ops.decompress_ops += 1
    return out


def _poller(handle: MessageHandle):
    return lambda: handle.progress() is not HandleState.FAILED


def compress_pipelined(x, spec, cfg: CollectiveConfig, ops: OpCounters, poll: MessageHandle) -> bytes:
    with _timed(ops, "codec_seconds"):
        raw = bytes(chunked.compress_chunked(x, spec, cfg.params, cfg.chunk_len,
                                             hook=_poller(poll), codec_name=cfg.codec.value))
    ops.compress_ops += 1
    return raw


def decompress_pipelined(raw: bytes, ops: OpCounters, poll: MessageHandle) -> np.ndarray:
    with _timed(ops, "codec_seconds"):
        out = chunked.decompress_chunked(raw, hook=_poller(poll))
    ops.decompress_ops += 1
    return out


def post_send(comm: Communicator, ops: OpCounters, dest: int, data, round: int,
              codec: bool = False, label: str = "data") -> MessageHandle:
    handle = comm.isend(dest, data)
    ops.hops.append(Hop(round, dest, "send", handle.nbytes, codec, label))
    return handle


def finish_recv(handle: MessageHandle, ops: OpCounters, round: int, timeout: float | None,
                codec: bool = False, label: str = "data") -> bytes:
    with _timed(ops, "comm_seconds"):
        data = handle.wait(timeout)
    ops.hops.append(Hop(round, handle.peer, "recv", len(data), codec, label))
    return data


def finish_send(handle: MessageHandle, ops: OpCounters, timeout: float | None) -> None:
    with _timed(ops, "comm_seconds"):
        handle.wait(timeout)


def ring_allgather_bytes(comm: Communicator, ops: OpCounters, item: bytes, timeout=None) -> list[bytes]:
    """Small uncompressed ring allgather used for size/range prologues."""
    n, r = comm.size, comm.rank
    items: list[bytes] = [b""] * n
    items[r] = item
    for k in range(n - 1):
        rh = comm.irecv((r - 1) % n)
        sh = post_send(comm, ops, (r + 1) % n, items[(r - k) % n], -1, label="meta")
        items[(r - k - 1) % n] = finish_recv(rh, ops, -1, timeout, label="meta")
        finish_send(sh, ops, timeout)
    return items


def shared_bound(comm: Communicator, ops: OpCounters, x: np.ndarray, spec: ErrorBoundSpec,
                 timeout=None) -> ErrorBoundSpec:
    """Resolve ``spec`` against the value range over all ranks."""
    if spec.mode is BoundMode.ABSOLUTE:
        return spec
    items = ring_allgather_bytes(comm, ops, struct.pack("<ff", x.min(), x.max()), timeout)
    ranges = [struct.unpack("<ff", it) for it in items]
    value_range = float(max(hi for _, hi in ranges)) - float(min(lo for lo, _ in ranges))
    return ErrorBoundSpec.absolute(spec.value * value_range if value_range > 0 else spec.value)


def reduce_into(kind: ReduceKind, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if kind in (ReduceKind.SUM, ReduceKind.AVERAGE):
        return np.add(a, b, dtype=np.float32)
    if kind is ReduceKind.MAX:
        return np.maximum(a, b, dtype=np.float32)
    return np.minimum(a, b, dtype=np.float32)


def begin(comm: Communicator) -> OpCounters:
    comm.ops = OpCounters()
    return comm.ops


def guarded(name: str, comm: Communicator, ops: OpCounters, fn, *args):
    """Run a schedule, attaching rank and round context to library errors."""
    try:
        return fn(*args)
    except CollectiveError:
        raise
    except LossyCollError as exc:
        raise CollectiveError(f"{name}: {exc}", comm.rank, ops.rounds) from exc


def check_length(values: np.ndarray, expected: int, what: str) -> np.ndarray:
    if len(values) != expected:
        raise CollectiveError(f"{what}: expected {expected} values, got {len(values)}")
    return values


__all__ = [
    "Codec",
    "ReduceKind",
    "Placement",
    "CollectiveConfig",
    "Hop",
    "OpCounters",
    "as_field",
]
