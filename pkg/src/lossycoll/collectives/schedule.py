"""Rank arithmetic for ring and binomial-tree schedules.

Tree functions work on virtual ranks, ``(rank - root) % size``, so the root
is always virtual rank 0. The tree is the usual MPI binomial tree: virtual
rank ``v`` receives from ``v`` minus its lowest set bit and owns the
contiguous subtree ``[v, v + lowbit(v))``.
"""

from __future__ import annotations


def ring_neighbors(rank: int, size: int) -> tuple[int, int]:
    """(send_to, recv_from) for the fixed ring direction."""
    return (rank + 1) % size, (rank - 1) % size


def binomial_rounds(size: int) -> int:
    """Number of rounds of the binomial schedule, ceil(log2(size))."""
    rounds, mask = 0, 1
    while mask < size:
        mask <<= 1
        rounds += 1
    return rounds


def binomial_tree(vrank: int, size: int) -> tuple[int | None, list[tuple[int, int, int]]]:
    """Parent and children of ``vrank``.

    Children are ``(child, subtree_end, round)`` in send order, largest
    subtree first; ``round`` is the schedule round of that transfer.
    """
    rounds = binomial_rounds(size)
    mask = 1
    parent = None
    while mask < size:
        if vrank & mask:
            parent = vrank - mask
            break
        mask <<= 1
    children = []
    mask >>= 1
    while mask > 0:
        child = vrank + mask
        if child < size:
            children.append((child, min(child + mask, size), rounds - mask.bit_length()))
        mask >>= 1
    return parent, children


def receive_round(vrank: int, size: int) -> int | None:
    """Round in which ``vrank`` receives from its parent (None for the root)."""
    if vrank == 0:
        return None
    low = vrank & -vrank
    return binomial_rounds(size) - low.bit_length()


def tree_path(vrank: int) -> list[int]:
    """Virtual ranks from the root down to ``vrank``."""
    path = [vrank]
    while vrank:
        vrank -= vrank & -vrank
        path.append(vrank)
    return path[::-1]


def subtree(vrank: int, size: int) -> range:
    if vrank == 0:
        return range(size)
    return range(vrank, min(vrank + (vrank & -vrank), size))
