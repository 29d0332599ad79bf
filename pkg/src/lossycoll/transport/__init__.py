"""Nonblocking point-to-point transport with loopback and TCP backends."""

from __future__ import annotations

import threading

from ..errors import ParameterError
from .base import (
    DEFAULT_MAX_MESSAGE,
    Communicator,
    HandleKind,
    HandleState,
    MessageHandle,
    TransportCounters,
    progress,
    wait,
)
from .loopback import LoopbackCommunicator, LoopbackFabric, loopback_world
from .tcp import TcpCommunicator, connect_tcp, parse_address, read_address_file

__all__ = [
    "Communicator",
    "MessageHandle",
    "HandleKind",
    "HandleState",
    "TransportCounters",
    "LoopbackFabric",
    "LoopbackCommunicator",
    "TcpCommunicator",
    "connect_world",
    "loopback_world",
    "run_ranks",
    "progress",
    "wait",
    "parse_address",
    "read_address_file",
    "DEFAULT_MAX_MESSAGE",
]


def connect_world(backend: str, rank: int, world_size: int, addrs=None, *,
                  fabric: LoopbackFabric | None = None, timeout: float = 30.0,
                  op_timeout: float | None = None, **kwargs) -> Communicator:
    """Join a world as ``rank``.

    Loopback ranks share ``fabric``; TCP ranks need one address per rank.
    """
    if world_size < 2:
        raise ParameterError(f"collectives need at least 2 ranks, got {world_size}")
    if backend == "loopback":
        if fabric is None:
            raise ParameterError("loopback backend needs a shared fabric")
        if fabric.size != world_size:
            raise ParameterError("fabric size does not match world_size")
        return fabric.communicator(rank, op_timeout)
    if backend == "tcp":
        if addrs is None:
            raise ParameterError("tcp backend needs an address list")
        return connect_tcp(rank, world_size, addrs, timeout=timeout, op_timeout=op_timeout, **kwargs)
    raise ParameterError(f"unknown backend {backend!r}")


def run_ranks(comms, fn, *args, timeout: float | None = None, **kwargs) -> list:
    """Run ``fn(comm, *args, **kwargs)`` on every communicator in its own thread.

    Returns per-rank results in rank order; the first rank error is re-raised.
    """
    results = [None] * len(comms)
    errors: list[BaseException | None] = [None] * len(comms)

    def body(i, comm):
        try:
            results[i] = fn(comm, *args, **kwargs)
        except BaseException as exc:  # reported to the caller below
            errors[i] = exc

    threads = [threading.Thread(target=body, args=(i, c), name=f"rank{i}", daemon=True)
               for i, c in enumerate(comms)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
        if t.is_alive():
            raise TimeoutError(f"{t.name} did not finish within {timeout}s")
    for exc in errors:
        if exc is not None:
            raise exc
    return results
