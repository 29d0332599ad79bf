"""Compression-aware collectives over a :class:`~lossycoll.transport.Communicator`.

Three codec placements share each schedule:

* ``z_*``: data-movement collectives compress once and relay compressed
  bytes; computation collectives use the chunked codec with progress hooks.
* ``cprp2p_*``: compress before every send, decompress after every receive.
* ``plain_*``: raw float32 bytes, no codec.

Every call resets ``comm.ops`` to a fresh :class:`OpCounters`.
"""

from ._common import Codec, CollectiveConfig, Hop, OpCounters, Placement, ReduceKind
from .computation import (
    cprp2p_allreduce,
    cprp2p_reduce_scatter,
    plain_allreduce,
    plain_reduce_scatter,
    z_allreduce,
    z_reduce_scatter,
)
from .movement import (
    cprp2p_allgather,
    cprp2p_bcast,
    plain_allgather,
    plain_bcast,
    plain_scatter,
    z_allgather,
    z_bcast,
    z_scatter,
)
from .schedule import binomial_rounds, binomial_tree, ring_neighbors, tree_path


def path_codec_pairs(all_ops: list[OpCounters], root: int, rank: int) -> int:
    """Codec (compress, decompress) pairs applied on the tree path root -> ``rank``.

    Counts tree edges where the sender logged a codec send to the child and
    the child logged a codec receive from the parent.
    """
    n = len(all_ops)
    path = [(v + root) % n for v in tree_path((rank - root) % n)]
    pairs = 0
    for parent, child in zip(path, path[1:]):
        sent = any(h.codec for h in all_ops[parent].hops_where(direction="send", peer=child))
        got = any(h.codec for h in all_ops[child].hops_where(direction="recv", peer=parent))
        pairs += sent and got
    return pairs


COLLECTIVES = {
    ("allgather", "z"): z_allgather,
    ("allgather", "cprp2p"): cprp2p_allgather,
    ("allgather", "plain"): plain_allgather,
    ("bcast", "z"): z_bcast,
    ("bcast", "cprp2p"): cprp2p_bcast,
    ("bcast", "plain"): plain_bcast,
    ("scatter", "z"): z_scatter,
    ("scatter", "plain"): plain_scatter,
    ("reduce_scatter", "z"): z_reduce_scatter,
    ("reduce_scatter", "cprp2p"): cprp2p_reduce_scatter,
    ("reduce_scatter", "plain"): plain_reduce_scatter,
    ("allreduce", "z"): z_allreduce,
    ("allreduce", "cprp2p"): cprp2p_allreduce,
    ("allreduce", "plain"): plain_allreduce,
}

__all__ = [
    "Codec",
    "CollectiveConfig",
    "Hop",
    "OpCounters",
    "Placement",
    "ReduceKind",
    "z_allgather",
    "z_bcast",
    "z_scatter",
    "z_reduce_scatter",
    "z_allreduce",
    "cprp2p_allgather",
    "cprp2p_bcast",
    "cprp2p_reduce_scatter",
    "cprp2p_allreduce",
    "plain_allgather",
    "plain_bcast",
    "plain_scatter",
    "plain_reduce_scatter",
    "plain_allreduce",
    "path_codec_pairs",
    "binomial_rounds",
    "binomial_tree",
    "ring_neighbors",
    "tree_path",
    "COLLECTIVES",
]
