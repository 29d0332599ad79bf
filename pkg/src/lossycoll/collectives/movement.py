"""Data-movement collectives: allgather (ring), bcast and scatter (binomial tree)."""

from __future__ import annotations

import struct

import numpy as np

from ..codec import ErrorBoundSpec, as_field
from ..errors import CollectiveError, ParameterError
from ..transport import Communicator
from ._common import (
    CollectiveConfig,
    OpCounters,
    Placement,
    begin,
    check_length,
    compress_counted,
    decompress_counted,
    finish_recv,
    finish_send,
    guarded,
    post_send,
    ring_allgather_bytes,
)
from .schedule import binomial_rounds, binomial_tree, receive_round, ring_neighbors

_SIZE_INFO = struct.Struct("<QI")
_ABORT = 0xFFFF_FFFF_FFFF_FFFF


def _raw(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<f4").astype(np.float32)


def ring_allgather(comm: Communicator, x: np.ndarray, cfg: CollectiveConfig, ops: OpCounters,
                   placement: Placement, spec: ErrorBoundSpec | None = None) -> np.ndarray:
    n, r = comm.size, comm.rank
    send_to, recv_from = ring_neighbors(r, n)
    spec = spec or cfg.error_bound
    m = len(x)
    out = np.empty(n * m, dtype=np.float32)
    out[r * m:(r + 1) * m] = x
    timeout = cfg.timeout

    if placement is Placement.NONE:
        current = x.tobytes()
        for k in range(n - 1):
            slot = (r - k - 1) % n
            rh = comm.irecv(recv_from)
            sh = post_send(comm, ops, send_to, current, k)
            current = finish_recv(rh, ops, k, timeout)
            finish_send(sh, ops, timeout)
            out[slot * m:(slot + 1) * m] = check_length(_raw(current), m, f"chunk of rank {slot}")
            ops.rounds += 1
        return out

    if placement is Placement.PER_HOP:
        current = x
        for k in range(n - 1):
            slot = (r - k - 1) % n
            frame = compress_counted(current, spec, cfg, ops)
            rh = comm.irecv(recv_from)
            sh = post_send(comm, ops, send_to, frame, k, codec=True)
            data = finish_recv(rh, ops, k, timeout, codec=True)
            finish_send(sh, ops, timeout)
            current = check_length(decompress_counted(data, ops), m, f"chunk of rank {slot}")
            out[slot * m:(slot + 1) * m] = current
            ops.rounds += 1
        return out

    # Compress once, exchange sizes, then relay compressed bytes untouched.
    frames: list[bytes | None] = [None] * n
    frames[r] = compress_counted(x, spec, cfg, ops)
    infos = [_SIZE_INFO.unpack(b) for b in
             ring_allgather_bytes(comm, ops, _SIZE_INFO.pack(m, len(frames[r])), timeout)]
    counts = {c for c, _ in infos}
    if len(counts) != 1:
        raise CollectiveError(f"local lengths differ across ranks: {[c for c, _ in infos]}", r)
    sizes = [s for _, s in infos]
    seg = cfg.pipeline_segment_bytes
    for k in range(n - 1):
        outgoing = frames[(r - k) % n]
        slot = (r - k - 1) % n
        n_in = max(1, -(-sizes[slot] // seg))
        rhs = [comm.irecv(recv_from) for _ in range(n_in)]
        shs = [post_send(comm, ops, send_to, outgoing[o:o + seg], k)
               for o in range(0, max(len(outgoing), 1), seg)]
        data = b"".join(finish_recv(h, ops, k, timeout) for h in rhs)
        for h in shs:
            finish_send(h, ops, timeout)
        if len(data) != sizes[slot]:
            raise CollectiveError(f"chunk of rank {slot}: got {len(data)} bytes, index says {sizes[slot]}",
                                  r, k)
        frames[slot] = data
        ops.rounds += 1
    for j in range(n):
        if j == r and cfg.self_exact:
            continue
        out[j * m:(j + 1) * m] = check_length(decompress_counted(frames[j], ops), m, f"chunk of rank {j}")
    return out


def _check_root(comm: Communicator, root: int) -> None:
    if not 0 <= root < comm.size:
        raise ParameterError(f"root {root} outside [0, {comm.size})")


def tree_bcast(comm: Communicator, root: int, field, cfg: CollectiveConfig, ops: OpCounters,
               placement: Placement) -> np.ndarray:
    n = comm.size
    v = (comm.rank - root) % n
    parent, children = binomial_tree(v, n)
    real = lambda vr: (vr + root) % n  # noqa: E731
    per_hop = placement is Placement.PER_HOP
    timeout = cfg.timeout

    if v == 0:
        result = as_field(field)
        payload = compress_counted(result, cfg.error_bound, cfg, ops) if placement is Placement.ONCE \
            else result.tobytes()
    else:
        rnd = receive_round(v, n)
        payload = finish_recv(comm.irecv(real(parent)), ops, rnd, timeout, codec=per_hop)
        if placement is Placement.NONE:
            result = _raw(payload)
        elif per_hop:
            result = decompress_counted(payload, ops)

    handles = []
    for child, _, rnd in children:
        if per_hop:
            payload = compress_counted(result, cfg.error_bound, cfg, ops)
        handles.append(post_send(comm, ops, real(child), payload, rnd, codec=per_hop))
    for h in handles:
        finish_send(h, ops, timeout)

    if placement is Placement.ONCE and (v != 0 or not cfg.self_exact):
        result = decompress_counted(payload, ops)
    ops.rounds = binomial_rounds(n)
    return result


def tree_scatter(comm: Communicator, root: int, field, cfg: CollectiveConfig, ops: OpCounters,
                 placement: Placement) -> np.ndarray:
    n = comm.size
    v = (comm.rank - root) % n
    parent, children = binomial_tree(v, n)
    real = lambda vr: (vr + root) % n  # noqa: E731
    timeout = cfg.timeout
    held: dict[int, bytes] = {}

    def forward_abort():
        msg = struct.pack("<Q", _ABORT)
        hs = [post_send(comm, ops, real(c), msg, rnd, label="index") for c, _, rnd in children]
        for h in hs:
            finish_send(h, ops, timeout)

    if v == 0:
        x = as_field(field)
        if len(x) % n:
            forward_abort()
            raise ParameterError(f"field length {len(x)} is not divisible by {n} ranks")
        m = len(x) // n
        for j in range(n):
            piece = x[real(j) * m:(real(j) + 1) * m]
            held[j] = compress_counted(piece, cfg.error_bound, cfg, ops) \
                if placement is Placement.ONCE else piece.tobytes()
        sizes = [len(held[j]) for j in range(n)]
    else:
        rnd = receive_round(v, n)
        index = finish_recv(comm.irecv(real(parent)), ops, rnd, timeout, label="index")
        (m,) = struct.unpack_from("<Q", index)
        if m == _ABORT:
            forward_abort()
            raise CollectiveError("root rejected the scatter input", comm.rank, rnd)
        sizes = list(struct.unpack_from(f"<{n}I", index, 8))
        payload = finish_recv(comm.irecv(real(parent)), ops, rnd, timeout, label="payload")
        end = v + (v & -v)
        end = min(end, n)
        if len(payload) != sum(sizes[v:end]):
            raise CollectiveError(f"subtree payload has {len(payload)} bytes, index says "
                                  f"{sum(sizes[v:end])}", comm.rank, rnd)
        pos = 0
        for j in range(v, end):
            held[j] = payload[pos:pos + sizes[j]]
            pos += sizes[j]

    index = struct.pack(f"<Q{n}I", m, *sizes)
    handles = []
    for child, end, rnd in children:
        handles.append(post_send(comm, ops, real(child), index, rnd, label="index"))
        handles.append(post_send(comm, ops, real(child),
                                 b"".join(held[j] for j in range(child, end)), rnd, label="payload"))
    for h in handles:
        finish_send(h, ops, timeout)
    ops.rounds = binomial_rounds(n)

    if placement is Placement.NONE:
        return _raw(held[v])
    if v == 0 and cfg.self_exact:
        return x[comm.rank * m:(comm.rank + 1) * m].copy()
    return check_length(decompress_counted(held[v], ops), m, "scattered chunk")


def _allgather(placement: Placement, name: str):
    def run(comm: Communicator, local, cfg: CollectiveConfig | None = None) -> np.ndarray:
        cfg = cfg or CollectiveConfig()
        ops = begin(comm)
        x = as_field(local)
        return guarded(name, comm, ops, ring_allgather, comm, x, cfg, ops, placement)
    run.__name__ = name
    run.__doc__ = f"Ring allgather ({placement.value} codec placement); result is rank-major."
    return run


def _rooted(schedule, placement: Placement, name: str, what: str):
    def run(comm: Communicator, root: int, field=None, cfg: CollectiveConfig | None = None) -> np.ndarray:
        cfg = cfg or CollectiveConfig()
        ops = begin(comm)
        _check_root(comm, root)
        return guarded(name, comm, ops, schedule, comm, root, field, cfg, ops, placement)
    run.__name__ = name
    run.__doc__ = f"Binomial-tree {what} ({placement.value} codec placement). ``field`` is read at the root only."
    return run


z_allgather = _allgather(Placement.ONCE, "z_allgather")
cprp2p_allgather = _allgather(Placement.PER_HOP, "cprp2p_allgather")
plain_allgather = _allgather(Placement.NONE, "plain_allgather")

z_bcast = _rooted(tree_bcast, Placement.ONCE, "z_bcast", "broadcast")
cprp2p_bcast = _rooted(tree_bcast, Placement.PER_HOP, "cprp2p_bcast", "broadcast")
plain_bcast = _rooted(tree_bcast, Placement.NONE, "plain_bcast", "broadcast")

z_scatter = _rooted(tree_scatter, Placement.ONCE, "z_scatter", "scatter")
plain_scatter = _rooted(tree_scatter, Placement.NONE, "plain_scatter", "scatter")
