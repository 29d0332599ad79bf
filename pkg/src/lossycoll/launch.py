"""Spawn one OS process per rank for TCP runs on this machine."""

from __future__ import annotations

import socket
import subprocess
import sys
from contextlib import ExitStack

from .errors import ParameterError, TransportError
from .transport import read_address_file


def free_local_addresses(n: int, host: str = "127.0.0.1") -> list[tuple[str, int]]:
    """Ask the OS for ``n`` distinct free ports on ``host``."""
    if n < 2:
        raise ParameterError(f"need at least 2 ranks, got {n}")
    with ExitStack() as stack:
        addrs = []
        for _ in range(n):
            s = stack.enter_context(socket.socket(socket.AF_INET, socket.SOCK_STREAM))
            try:
                s.bind((host, 0))
            except OSError as exc:
                raise TransportError(f"cannot bind on {host}: {exc}") from exc
            addrs.append((host, s.getsockname()[1]))
    return addrs


def write_address_file(path, addrs) -> None:
    with open(path, "w") as fh:
        for host, port in addrs:
            fh.write(f"{host}:{port}\n")


def rank_commands(n: int, addr_file, argv: list[str]) -> list[list[str]]:
    base = [sys.executable, "-m", "lossycoll", *argv]
    return [base + ["--backend", "tcp", "--ranks", str(n), "--addrs", str(addr_file), "--rank", str(r)]
            for r in range(n)]


def launch(n: int, argv: list[str], addr_file, *, host: str = "127.0.0.1",
           dry_run: bool = False, timeout: float | None = None) -> list[int] | list[list[str]]:
    """Run ``lossycoll <argv>`` on ``n`` TCP ranks.

    Without an existing address file, free localhost ports are allocated and
    written to ``addr_file``. Returns exit codes, or the commands if ``dry_run``.
    """
    try:
        addrs = read_address_file(addr_file)
        if len(addrs) != n:
            raise ParameterError(f"{addr_file} lists {len(addrs)} addresses for {n} ranks")
    except FileNotFoundError:
        write_address_file(addr_file, free_local_addresses(n, host))
    cmds = rank_commands(n, addr_file, argv)
    if dry_run:
        return cmds
    procs = [subprocess.Popen(c) for c in cmds]
    codes = []
    try:
        for p in procs:
            codes.append(p.wait(timeout=timeout))
    finally:
        for p in procs:
            if p.poll() is None:
                p.kill()
    return codes
