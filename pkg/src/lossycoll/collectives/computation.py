"""Computation collectives: ring reduce-scatter and allreduce."""

from __future__ import annotations

import numpy as np

from ..codec import ErrorBoundSpec, as_field
from ..errors import ParameterError
from ..transport import Communicator
from ._common import (
    CollectiveConfig,
    OpCounters,
    Placement,
    ReduceKind,
    _timed,
    begin,
    check_length,
    compress_counted,
    compress_pipelined,
    decompress_counted,
    decompress_pipelined,
    finish_recv,
    finish_send,
    guarded,
    post_send,
    reduce_into,
    shared_bound,
)
from .movement import ring_allgather
from .schedule import ring_neighbors


def ring_reduce_scatter(comm: Communicator, x: np.ndarray, kind: ReduceKind, cfg: CollectiveConfig,
                        ops: OpCounters, placement: Placement, spec: ErrorBoundSpec) -> np.ndarray:
    """Rank ``r`` ends up owning reduced chunk ``r``."""
    n, r = comm.size, comm.rank
    if len(x) % n:
        raise ParameterError(f"field length {len(x)} is not divisible by {n} ranks")
    send_to, recv_from = ring_neighbors(r, n)
    m = len(x) // n
    timeout = cfg.timeout
    acc = x[((r - 1) % n) * m:((r - 1) % n + 1) * m]
    codec_hop = placement is Placement.PER_HOP
    for step in range(n - 1):
        slot = (r - step - 2) % n
        rh = comm.irecv(recv_from)
        if placement is Placement.NONE:
            sh = post_send(comm, ops, send_to, acc.tobytes(), step)
            incoming = np.frombuffer(finish_recv(rh, ops, step, timeout), dtype="<f4")
        elif placement is Placement.ONCE:
            frame = compress_pipelined(acc, spec, cfg, ops, poll=rh)
            sh = post_send(comm, ops, send_to, frame, step)
            incoming = decompress_pipelined(finish_recv(rh, ops, step, timeout), ops, poll=sh)
        else:
            frame = compress_counted(acc, spec, cfg, ops)
            sh = post_send(comm, ops, send_to, frame, step, codec=True)
            incoming = decompress_counted(finish_recv(rh, ops, step, timeout, codec=True), ops)
        check_length(incoming, m, f"partial chunk {slot}")
        with _timed(ops, "reduce_seconds"):
            acc = reduce_into(kind, incoming, x[slot * m:(slot + 1) * m])
        finish_send(sh, ops, timeout)
        ops.rounds += 1
    acc = np.array(acc, dtype=np.float32)
    if kind is ReduceKind.AVERAGE:
        acc = np.divide(acc, np.float32(n), dtype=np.float32)
    return acc


def _bound(comm, ops, x, cfg, placement) -> ErrorBoundSpec:
    if placement is Placement.NONE:
        return cfg.error_bound
    spec = shared_bound(comm, ops, x, cfg.error_bound, cfg.timeout)
    ops.eb_abs = spec.value
    return spec


def _kind(kind) -> ReduceKind:
    return kind if isinstance(kind, ReduceKind) else ReduceKind(kind)


def _reduce_scatter(placement: Placement, name: str):
    def run(comm: Communicator, local, kind=ReduceKind.SUM, cfg: CollectiveConfig | None = None) -> np.ndarray:
        cfg = cfg or CollectiveConfig()
        ops = begin(comm)
        x = as_field(local)

        def body():
            spec = _bound(comm, ops, x, cfg, placement)
            return ring_reduce_scatter(comm, x, _kind(kind), cfg, ops, placement, spec)
        return guarded(name, comm, ops, body)
    run.__name__ = name
    run.__doc__ = f"Ring reduce-scatter ({placement.value} codec placement); returns chunk ``comm.rank``."
    return run


def _allreduce(placement: Placement, name: str):
    def run(comm: Communicator, local, kind=ReduceKind.SUM, cfg: CollectiveConfig | None = None) -> np.ndarray:
        cfg = cfg or CollectiveConfig()
        ops = begin(comm)
        x = as_field(local)

        def body():
            spec = _bound(comm, ops, x, cfg, placement)
            owned = ring_reduce_scatter(comm, x, _kind(kind), cfg, ops, placement, spec)
            return ring_allgather(comm, owned, cfg, ops, placement, spec)
        return guarded(name, comm, ops, body)
    run.__name__ = name
    run.__doc__ = f"Reduce-scatter followed by allgather ({placement.value} codec placement)."
    return run


z_reduce_scatter = _reduce_scatter(Placement.ONCE, "z_reduce_scatter")
cprp2p_reduce_scatter = _reduce_scatter(Placement.PER_HOP, "cprp2p_reduce_scatter")
plain_reduce_scatter = _reduce_scatter(Placement.NONE, "plain_reduce_scatter")

z_allreduce = _allreduce(Placement.ONCE, "z_allreduce")
cprp2p_allreduce = _allreduce(Placement.PER_HOP, "cprp2p_allreduce")
plain_allreduce = _allreduce(Placement.NONE, "plain_allreduce")
