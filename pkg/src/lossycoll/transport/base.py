"""Backend-independent part of the nonblocking point-to-point layer.

Messages are matched by source rank in FIFO order; there are no tags. Each
communicator keeps one inbox per peer which the backend fills (possibly from
helper threads), while every handle state transition happens in the owning
rank worker when it calls ``progress`` or ``wait``.
"""

from __future__ import annotations

import enum
import threading
import time
from collections import deque
from dataclasses import dataclass

from ..errors import ParameterError, TransportError

DEFAULT_MAX_MESSAGE = 1 << 30


class HandleState(enum.Enum):
    PENDING = "pending"
    COMPLETE = "complete"
    FAILED = "failed"


class HandleKind(enum.Enum):
    SEND = "send"
    RECV = "recv"


@dataclass
class TransportCounters:
    bytes_sent: int = 0
    bytes_received: int = 0
    messages_sent: int = 0
    messages_received: int = 0

    def snapshot(self) -> "TransportCounters":
        return TransportCounters(**vars(self))

    def __sub__(self, other: "TransportCounters") -> "TransportCounters":
        return TransportCounters(**{k: v - getattr(other, k) for k, v in vars(self).items()})


class MessageHandle:
    """One outstanding send or receive."""

    __slots__ = ("comm", "kind", "peer", "state", "data", "error", "nbytes", "_send_status")

    def __init__(self, comm: "Communicator", kind: HandleKind, peer: int, nbytes: int = 0):
        self.comm = comm
        self.kind = kind
        self.peer = peer
        self.state = HandleState.PENDING
        self.data: bytes | None = None
        self.error: str | None = None
        self.nbytes = nbytes
        # Written by the backend: None while in flight, True when done, str on failure.
        self._send_status: bool | str | None = None

    def progress(self) -> HandleState:
        return self.comm._progress(self)

    def wait(self, timeout: float | None = None) -> bytes | None:
        return self.comm._wait(self, timeout)

    @property
    def done(self) -> bool:
        return self.state is not HandleState.PENDING

    def __repr__(self) -> str:
        return f"MessageHandle({self.kind.value}, peer={self.peer}, {self.state.value})"


class Communicator:
    """Rank identity plus a nonblocking message endpoint.

    Exactly one worker drives a communicator. ``ops`` holds the counters of
    the most recent collective call.
    """

    backend = "abstract"

    def __init__(self, rank: int, size: int, timeout: float | None = None):
        if size < 2:
            raise ParameterError(f"world size must be at least 2, got {size}")
        if not 0 <= rank < size:
            raise ParameterError(f"rank {rank} outside [0, {size})")
        self.rank = rank
        self.size = size
        self.timeout = timeout
        self.counters = TransportCounters()
        self.ops = None
        self._cond = threading.Condition()
        self._inbox = {p: deque() for p in range(size) if p != rank}
        self._pending = {p: deque() for p in range(size) if p != rank}
        self._peer_error: dict[int, str] = {}
        self._closed = False

    # -- backend interface -------------------------------------------------

    def _post_send(self, handle: MessageHandle, payload: bytes) -> None:
        raise NotImplementedError

    def _deliver(self, src: int, payload: bytes) -> None:
        with self._cond:
            self._inbox[src].append(payload)
            self._cond.notify_all()

    def _fail_peer(self, src: int, reason: str) -> None:
        with self._cond:
            self._peer_error.setdefault(src, reason)
            self._cond.notify_all()

    def _notify(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def _send_done(self, handle: MessageHandle) -> None:
        """Backend callback: the payload has left this rank."""
        with self._cond:
            handle._send_status = True
            self.counters.bytes_sent += handle.nbytes
            self.counters.messages_sent += 1
            self._cond.notify_all()

    # -- public API --------------------------------------------------------

    def _check_peer(self, peer: int) -> None:
        if not 0 <= peer < self.size:
            raise ParameterError(f"peer rank {peer} outside [0, {self.size})")
        if peer == self.rank:
            raise ParameterError(f"rank {self.rank} cannot message itself")
        if self._closed:
            raise TransportError(f"rank {self.rank}: communicator is closed")

    def isend(self, dest: int, data) -> MessageHandle:
        self._check_peer(dest)
        payload = bytes(data)
        handle = MessageHandle(self, HandleKind.SEND, dest, len(payload))
        if dest in self._peer_error:
            handle._send_status = f"peer {dest} unavailable: {self._peer_error[dest]}"
        else:
            self._post_send(handle, payload)
        return handle

    def irecv(self, src: int) -> MessageHandle:
        self._check_peer(src)
        handle = MessageHandle(self, HandleKind.RECV, src)
        with self._cond:
            self._pending[src].append(handle)
        return handle

    def send(self, dest: int, data, timeout: float | None = None) -> None:
        self.isend(dest, data).wait(timeout)

    def recv(self, src: int, timeout: float | None = None) -> bytes:
        return self.irecv(src).wait(timeout)

    def barrier(self, timeout: float | None = None) -> None:
        """Dissemination barrier: no rank leaves before every rank has entered."""
        dist = 1
        while dist < self.size:
            recv = self.irecv((self.rank - dist) % self.size)
            send = self.isend((self.rank + dist) % self.size, b"")
            recv.wait(timeout)
            send.wait(timeout)
            dist <<= 1

    def close(self) -> None:
        self._closed = True

    # -- progress engine ---------------------------------------------------

    def _match(self, src: int) -> None:
        """Pair queued messages with posted receives; caller holds the lock."""
        pending, box = self._pending[src], self._inbox[src]
        while pending and box:
            handle = pending.popleft()
            handle.data = box.popleft()
            handle.nbytes = len(handle.data)
            handle.state = HandleState.COMPLETE
            self.counters.bytes_received += handle.nbytes
            self.counters.messages_received += 1
        if pending and src in self._peer_error:
            while pending:
                handle = pending.popleft()
                handle.error = f"receive from rank {src} failed: {self._peer_error[src]}"
                handle.state = HandleState.FAILED

    def _progress(self, handle: MessageHandle) -> HandleState:
        if handle.state is not HandleState.PENDING:
            return handle.state
        if handle.kind is HandleKind.SEND:
            status = handle._send_status
            if status is True:
                handle.state = HandleState.COMPLETE
            elif isinstance(status, str):
                handle.error = status
                handle.state = HandleState.FAILED
        else:
            with self._cond:
                self._match(handle.peer)
        return handle.state

    def _wait(self, handle: MessageHandle, timeout: float | None) -> bytes | None:
        timeout = self.timeout if timeout is None else timeout
        deadline = None if timeout is None else time.monotonic() + timeout
        while self._progress(handle) is HandleState.PENDING:
            remaining = 0.05
            if deadline is not None:
                remaining = min(remaining, deadline - time.monotonic())
                if remaining <= 0:
                    raise TransportError(
                        f"rank {self.rank}: timed out after {timeout}s waiting for "
                        f"{handle.kind.value} with rank {handle.peer}"
                    )
            with self._cond:
                if handle.kind is HandleKind.RECV:
                    self._match(handle.peer)
                if handle.state is HandleState.PENDING and (
                    handle.kind is HandleKind.SEND and handle._send_status is None
                    or handle.kind is HandleKind.RECV
                ):
                    self._cond.wait(remaining)
        if handle.state is HandleState.FAILED:
            raise TransportError(f"rank {self.rank}: {handle.error}")
        return handle.data


def progress(handle: MessageHandle) -> HandleState:
    return handle.progress()


def wait(handle: MessageHandle, timeout: float | None = None) -> bytes | None:
    return handle.wait(timeout)
