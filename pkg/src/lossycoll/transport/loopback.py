"""In-process transport: every rank is a worker thread sharing one fabric.

Messages are copied into the receiver's inbox at send time; a send handle
completes on its first poll. The backend models correctness, not timing.
"""

from __future__ import annotations

import threading

from ..errors import ParameterError, RankCollisionError
from .base import Communicator, MessageHandle


class LoopbackFabric:
    def __init__(self, size: int):
        if size < 2:
            raise ParameterError(f"world size must be at least 2, got {size}")
        self.size = size
        self._comms: list[LoopbackCommunicator | None] = [None] * size
        self._lock = threading.Lock()

    def communicator(self, rank: int, timeout: float | None = None) -> "LoopbackCommunicator":
        with self._lock:
            if not 0 <= rank < self.size:
                raise ParameterError(f"rank {rank} outside [0, {self.size})")
            if self._comms[rank] is not None:
                raise RankCollisionError(f"rank {rank} already joined this fabric")
            comm = LoopbackCommunicator(self, rank, timeout)
            self._comms[rank] = comm
            return comm

    def peer(self, rank: int) -> "LoopbackCommunicator | None":
        return self._comms[rank]


class LoopbackCommunicator(Communicator):
    backend = "loopback"

    def __init__(self, fabric: LoopbackFabric, rank: int, timeout: float | None = None):
        super().__init__(rank, fabric.size, timeout)
        self.fabric = fabric

    def _post_send(self, handle: MessageHandle, payload: bytes) -> None:
        target = self.fabric.peer(handle.peer)
        if target is None or target._closed:
            handle._send_status = f"rank {handle.peer} is not connected"
            return
        target._deliver(self.rank, payload)
        self._send_done(handle)

    def close(self) -> None:
        if self._closed:
            return
        super().close()
        for rank in range(self.size):
            peer = self.fabric.peer(rank)
            if peer is not None and rank != self.rank:
                peer._fail_peer(self.rank, f"rank {self.rank} closed")


def loopback_world(size: int, timeout: float | None = None) -> list[LoopbackCommunicator]:
    """Create ``size`` communicators sharing a fresh fabric."""
    fabric = LoopbackFabric(size)
    return [fabric.communicator(r, timeout) for r in range(size)]
