"""TCP transport: one full-duplex connection per rank pair.

Wire format::

    handshake   b"ZCW1" + rank (u32 LE), sent by both ends
    data frame  length (u64 LE) + payload

The higher rank connects to the lower rank's listening address. A reader
and a writer thread per connection move frames between the socket and the
communicator, so posting a send or polling a receive never blocks the rank
worker.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time

from ..errors import HandshakeError, ParameterError, RankCollisionError, TransportError
from .base import DEFAULT_MAX_MESSAGE, Communicator, MessageHandle

HANDSHAKE_MAGIC = b"ZCW1"
_HELLO = struct.Struct("<4sI")
_LEN = struct.Struct("<Q")


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.strip().rpartition(":")
    if not sep or not host:
        raise ParameterError(f"address must be host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ParameterError(f"bad port in address {text!r}") from None


def read_address_file(path) -> list[tuple[str, int]]:
    """One ``host:port`` per non-empty line; line index is the rank."""
    with open(path) as fh:
        addrs = [parse_address(line) for line in fh if line.strip()]
    if len(set(addrs)) != len(addrs):
        dup = next(a for a in addrs if addrs.count(a) > 1)
        raise ParameterError(f"duplicate address {dup[0]}:{dup[1]} in {path}")
    return addrs


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            return None
        got += k
    return bytes(buf)


class TcpCommunicator(Communicator):
    backend = "tcp"

    def __init__(self, rank: int, size: int, sockets: dict[int, socket.socket],
                 timeout: float | None = None, max_message: int = DEFAULT_MAX_MESSAGE):
        super().__init__(rank, size, timeout)
        self.max_message = max_message
        self._socks = sockets
        self._outq: dict[int, queue.Queue] = {}
        self._writers: list[threading.Thread] = []
        for peer, sock in sockets.items():
            sock.settimeout(None)
            q: queue.Queue = queue.Queue()
            self._outq[peer] = q
            threading.Thread(target=self._reader, args=(peer, sock),
                             name=f"rank{rank}-reader-{peer}", daemon=True).start()
            writer = threading.Thread(target=self._writer, args=(peer, sock, q),
                                      name=f"rank{rank}-writer-{peer}", daemon=True)
            writer.start()
            self._writers.append(writer)

    def _reader(self, peer: int, sock: socket.socket) -> None:
        try:
            while True:
                head = _recv_exact(sock, _LEN.size)
                if head is None:
                    self._fail_peer(peer, "connection closed by peer")
                    return
                (length,) = _LEN.unpack(head)
                if length > self.max_message:
                    self._fail_peer(
                        peer, f"frame length {length} exceeds the {self.max_message}-byte guard"
                    )
                    sock.close()
                    return
                payload = _recv_exact(sock, length) if length else b""
                if payload is None:
                    self._fail_peer(peer, "connection closed mid-frame")
                    return
                self._deliver(peer, payload)
        except OSError as exc:
            self._fail_peer(peer, f"connection error: {exc}")

    def _writer(self, peer: int, sock: socket.socket, q: queue.Queue) -> None:
        broken: str | None = None
        while True:
            item = q.get()
            if item is None:
                return
            handle, payload = item
            if broken is None:
                try:
                    sock.sendall(_LEN.pack(len(payload)))
                    if payload:
                        sock.sendall(payload)
                    self._send_done(handle)
                    continue
                except OSError as exc:
                    broken = f"send to rank {peer} failed: {exc}"
            if broken is not None:
                handle._send_status = broken
            self._notify()

    def _post_send(self, handle: MessageHandle, payload: bytes) -> None:
        self._outq[handle.peer].put((handle, payload))

    def close(self) -> None:
        if self._closed:
            return
        super().close()
        for q in self._outq.values():
            q.put(None)
        for t in self._writers:
            t.join(timeout=5)
        for sock in self._socks.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()


def _listen(addr: tuple[str, int]) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind(addr)
    except OSError as exc:
        sock.close()
        raise TransportError(f"cannot bind {addr[0]}:{addr[1]}: {exc}") from exc
    sock.listen(64)
    return sock


def _connect(addr, deadline: float) -> socket.socket:
    while True:
        try:
            sock = socket.create_connection(addr, timeout=max(0.1, deadline - time.monotonic()))
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise TransportError(f"cannot connect to {addr[0]}:{addr[1]}: {exc}") from exc
            time.sleep(0.05)


def _read_hello(sock: socket.socket) -> int:
    data = _recv_exact(sock, _HELLO.size)
    if data is None:
        raise HandshakeError("connection closed during handshake")
    magic, rank = _HELLO.unpack(data)
    if magic != HANDSHAKE_MAGIC:
        raise HandshakeError(f"handshake magic mismatch: {magic!r}")
    return rank


def accept_peers(listener: socket.socket, rank: int, size: int, deadline: float) -> dict[int, socket.socket]:
    """Accept one connection from every rank above ``rank``."""
    peers: dict[int, socket.socket] = {}
    try:
        while len(peers) < size - 1 - rank:
            listener.settimeout(max(0.01, deadline - time.monotonic()))
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                missing = sorted(set(range(rank + 1, size)) - set(peers))
                raise TransportError(f"rank {rank}: timed out waiting for ranks {missing}") from None
            conn.settimeout(max(0.01, deadline - time.monotonic()))
            try:
                claimed = _read_hello(conn)
            except (HandshakeError, OSError):
                conn.close()
                raise
            if claimed == rank or claimed in peers or not rank < claimed < size:
                conn.close()
                raise RankCollisionError(
                    f"rank {rank}: incoming connection claims rank {claimed}, which is "
                    + ("already connected" if claimed in peers else
                       "this rank" if claimed == rank else "not a higher rank of this world")
                )
            conn.sendall(_HELLO.pack(HANDSHAKE_MAGIC, rank))
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            peers[claimed] = conn
    except BaseException:
        for s in peers.values():
            s.close()
        raise
    return peers


def connect_tcp(rank: int, size: int, addrs, timeout: float = 30.0,
                listener: socket.socket | None = None,
                max_message: int = DEFAULT_MAX_MESSAGE,
                op_timeout: float | None = None) -> TcpCommunicator:
    addrs = [parse_address(a) if isinstance(a, str) else tuple(a) for a in addrs]
    if size < 2:
        raise ParameterError(f"world size must be at least 2, got {size}")
    if len(addrs) != size:
        raise ParameterError(f"{len(addrs)} addresses given for a world of {size}")
    if len(set(addrs)) != size:
        raise ParameterError("duplicate address in address list")
    if not 0 <= rank < size:
        raise ParameterError(f"rank {rank} outside [0, {size})")
    deadline = time.monotonic() + timeout
    own_listener = listener is None
    listener = listener or _listen(addrs[rank])
    socks: dict[int, socket.socket] = {}
    try:
        for peer in range(rank):
            sock = _connect(addrs[peer], deadline)
            socks[peer] = sock
            sock.sendall(_HELLO.pack(HANDSHAKE_MAGIC, rank))
            answered = _read_hello(sock)
            if answered != peer:
                raise RankCollisionError(
                    f"rank {rank}: address of rank {peer} answered as rank {answered}"
                )
        socks.update(accept_peers(listener, rank, size, deadline))
    except BaseException:
        for s in socks.values():
            s.close()
        raise
    finally:
        if own_listener:
            listener.close()
    return TcpCommunicator(rank, size, socks, op_timeout, max_message)
