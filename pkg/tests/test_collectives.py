import math
import threading

import numpy as np
import pytest

from lossycoll.codec import ErrorBoundSpec, compress, resolve_error_bound
from lossycoll.collectives import (
    CollectiveConfig,
    ReduceKind,
    binomial_rounds,
    binomial_tree,
    cprp2p_allgather,
    cprp2p_allreduce,
    cprp2p_bcast,
    path_codec_pairs,
    plain_allgather,
    plain_allreduce,
    plain_bcast,
    plain_reduce_scatter,
    plain_scatter,
    ring_neighbors,
    tree_path,
    z_allgather,
    z_allreduce,
    z_bcast,
    z_reduce_scatter,
    z_scatter,
)
from lossycoll.collectives.schedule import receive_round, subtree
from lossycoll.errors import CollectiveError, ParameterError
from lossycoll.transport import loopback_world
from oracles import bfs_tree_depths, exact_reduce, ring_reduce_scatter32

from conftest import run_world, walk

REL3 = CollectiveConfig(error_bound=ErrorBoundSpec.relative(1e-3))


def fields_for(n, length, seed=0):
    return [walk(length, seed * 100 + r) for r in range(n)]


def run_collecting_errors(n, fn, timeout=3.0):
    """Like run_world but returns per-rank exceptions instead of raising."""
    comms = loopback_world(n, timeout=timeout)
    out = [None] * n

    def body(i):
        try:
            out[i] = fn(comms[i])
        except Exception as exc:
            out[i] = exc

    threads = [threading.Thread(target=body, args=(i,)) for i in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(60)
    return out


# --- schedule arithmetic --------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3, 4, 5, 7, 8, 13, 16])
def test_binomial_tree_matches_doubling_simulation(n):
    rounds = bfs_tree_depths(n)
    assert binomial_rounds(n) == math.ceil(math.log2(n))
    seen = set()
    for v in range(n):
        parent, children = binomial_tree(v, n)
        if v == 0:
            assert parent is None
        else:
            assert receive_round(v, n) == rounds[v] - 1
            assert any(c == v for c, _, _ in binomial_tree(parent, n)[1])
        for c, end, rnd in children:
            assert rnd == rounds[c] - 1
            assert list(subtree(c, n)) == list(range(c, end))
            seen.add(c)
        assert tree_path(v)[0] == 0 and tree_path(v)[-1] == v
    assert seen == set(range(1, n))


def test_ring_neighbors():
    assert ring_neighbors(0, 4) == (1, 3)
    assert ring_neighbors(3, 4) == (0, 2)


# --- allgather ------------------------------------------------------------------

def test_z_allgather_counts_bound_and_bytes():
    n, m = 4, 3000
    data = fields_for(n, m, 1)
    outs, comms = run_world(n, lambda c: z_allgather(c, data[c.rank], REL3))
    full = np.concatenate(data)
    sizes = [len(compress(d, REL3.error_bound)[0]) for d in data]
    for r, (out, c) in enumerate(zip(outs, comms)):
        ops = c.ops
        assert ops.compress_ops == 1 and ops.decompress_ops == n - 1 and ops.rounds == n - 1
        np.testing.assert_array_equal(out[r * m:(r + 1) * m], data[r])
        for j in range(n):
            eb = resolve_error_bound(REL3.error_bound, data[j])
            assert np.abs(out[j * m:(j + 1) * m].astype(np.float64) - data[j]).max() <= eb
        got = sum(h.nbytes for h in ops.hops_where(direction="recv", label="data"))
        sent = sum(h.nbytes for h in ops.hops_where(direction="send", label="data"))
        assert got == sum(sizes) - sizes[r]
        assert sent == sum(sizes) - sizes[(r + 1) % n]
        meta = sum(h.nbytes for h in ops.hops_where(direction="recv", label="meta"))
        assert c.counters.bytes_received - meta == got


def test_z_allgather_segments_large_chunks():
    n = 3
    data = fields_for(n, 20000, 2)
    cfg = CollectiveConfig(error_bound=ErrorBoundSpec.relative(1e-4), pipeline_segment_bytes=4096)
    outs, comms = run_world(n, lambda c: z_allgather(c, data[c.rank], cfg))
    for c in comms:
        assert all(h.nbytes <= 4096 for h in c.ops.hops_where(label="data"))
        assert len(c.ops.hops_where(label="data", direction="send")) > n - 1


def test_z_allgather_not_self_exact_agrees_across_ranks():
    n = 4
    data = fields_for(n, 1000, 3)
    cfg = CollectiveConfig(error_bound=ErrorBoundSpec.relative(1e-3), self_exact=False)
    outs, comms = run_world(n, lambda c: z_allgather(c, data[c.rank], cfg))
    for out in outs[1:]:
        np.testing.assert_array_equal(out, outs[0])
    assert all(c.ops.decompress_ops == n for c in comms)


def test_allgather_length_mismatch():
    res = run_collecting_errors(3, lambda c: z_allgather(c, walk(100 + c.rank, c.rank), REL3))
    assert all(isinstance(e, CollectiveError) for e in res)
    assert "lengths differ" in str(res[0])


@pytest.mark.parametrize("n", [2, 3, 5])
def test_plain_and_cprp2p_allgather(n):
    data = fields_for(n, 777, 4)
    outs, comms = run_world(n, lambda c: plain_allgather(c, data[c.rank]))
    for out in outs:
        np.testing.assert_array_equal(out, np.concatenate(data))
    assert all(c.ops.rounds == n - 1 and c.ops.compress_ops == 0 for c in comms)
    outs, comms = run_world(n, lambda c: cprp2p_allgather(c, data[c.rank], REL3))
    assert all(c.ops.compress_ops == n - 1 for c in comms)


def test_cprp2p_error_grows_at_most_linearly():
    n, m = 8, 4000
    data = fields_for(n, m, 5)
    outs, _ = run_world(n, lambda c: cprp2p_allgather(c, data[c.rank], REL3))
    zouts, _ = run_world(n, lambda c: z_allgather(c, data[c.rank], REL3))
    worse = 0
    for r in range(n):
        for k in range(1, n):
            j = (r - k) % n  # chunk j reached rank r after k hops
            eb0 = resolve_error_bound(REL3.error_bound, data[j])
            err = np.abs(outs[r][j * m:(j + 1) * m].astype(np.float64) - data[j]).max()
            zerr = np.abs(zouts[r][j * m:(j + 1) * m].astype(np.float64) - data[j]).max()
            # Each hop re-resolves the relative bound on a slightly wider range.
            assert err <= k * eb0 * 1.01
            worse += err >= zerr
    assert worse >= (n * (n - 1)) // 2


# --- bcast ----------------------------------------------------------------------

@pytest.mark.parametrize("root", [0, 5])
def test_z_bcast(root):
    n = 8
    x = walk(5000, 6)
    outs, comms = run_world(n, lambda c: z_bcast(c, root, x if c.rank == root else None, REL3))
    eb = resolve_error_bound(REL3.error_bound, x)
    assert sum(c.ops.compress_ops for c in comms) == 1
    assert comms[root].ops.compress_ops == 1
    for r, (out, c) in enumerate(zip(outs, comms)):
        assert c.ops.rounds == 3
        assert np.abs(out.astype(np.float64) - x).max() <= eb
        if r != root:
            assert c.ops.decompress_ops == 1
            np.testing.assert_array_equal(out, outs[(root + 1) % n])
            assert c.ops.compress_ops == 0
    ops = [c.ops for c in comms]
    assert max(path_codec_pairs(ops, root, r) for r in range(n)) == 0


def test_cprp2p_bcast_depth_pairs():
    for n in (4, 8, 16):
        x = walk(2000, n)
        _, comms = run_world(n, lambda c: cprp2p_bcast(c, 0, x if c.rank == 0 else None, REL3))
        ops = [c.ops for c in comms]
        assert max(path_codec_pairs(ops, 0, r) for r in range(n)) == binomial_rounds(n)


def test_plain_bcast_exact_and_invalid_root():
    x = walk(999, 7)
    outs, _ = run_world(3, lambda c: plain_bcast(c, 2, x if c.rank == 2 else None))
    for out in outs:
        np.testing.assert_array_equal(out, x)
    res = run_collecting_errors(2, lambda c: z_bcast(c, 7, x))
    assert all(isinstance(e, ParameterError) for e in res)


# --- scatter --------------------------------------------------------------------

@pytest.mark.parametrize("n,root", [(4, 0), (6, 2), (8, 7)])
def test_z_scatter(n, root):
    m = 1024
    x = walk(n * m, 8)
    outs, comms = run_world(n, lambda c: z_scatter(c, root, x if c.rank == root else None, REL3))
    for r, (out, c) in enumerate(zip(outs, comms)):
        piece = x[r * m:(r + 1) * m]
        # Each chunk is compressed on its own, so its relative bound uses its own range.
        eb = resolve_error_bound(REL3.error_bound, piece)
        assert np.abs(out.astype(np.float64) - piece).max() <= eb
        assert c.ops.rounds == binomial_rounds(n)
        if r == root:
            assert c.ops.compress_ops == n
            np.testing.assert_array_equal(out, piece)
        else:
            assert c.ops.compress_ops == 0 and c.ops.decompress_ops == 1
    # Subtree payload bytes equal the index sizes of that subtree.
    sizes = [len(compress(x[j * m:(j + 1) * m], REL3.error_bound)[0]) for j in range(n)]
    for c in comms:
        for hop in c.ops.hops_where(direction="recv", label="payload"):
            v = (c.rank - root) % n
            assert hop.nbytes == sum(sizes[(u + root) % n] for u in subtree(v, n))


def test_scatter_divisibility_rejected_everywhere():
    res = run_collecting_errors(4, lambda c: z_scatter(c, 0, walk(1001, 1) if c.rank == 0 else None, REL3))
    assert all(isinstance(e, CollectiveError) for e in res)
    assert "divisible" in str(res[0])


def test_plain_scatter_exact():
    x = walk(4 * 300, 9)
    outs, _ = run_world(4, lambda c: plain_scatter(c, 1, x if c.rank == 1 else None))
    for r, out in enumerate(outs):
        np.testing.assert_array_equal(out, x[r * 300:(r + 1) * 300])


# --- reduce-scatter / allreduce --------------------------------------------------

def test_reduce_scatter_two_ranks_sum():
    data = fields_for(2, 4096, 10)
    outs, comms = run_world(2, lambda c: z_reduce_scatter(c, data[c.rank], "sum", REL3))
    exact = exact_reduce(data, "sum")
    for r, (out, c) in enumerate(zip(outs, comms)):
        eb = c.ops.eb_abs
        assert np.abs(out - exact[r * 2048:(r + 1) * 2048]).max() <= eb + 1e-6 * np.abs(exact).max()
        assert c.ops.compress_ops == 1


def test_reduce_scatter_max_identical_inputs():
    n = 4
    x = walk(4 * 5120, 11)
    outs, comms = run_world(n, lambda c: z_reduce_scatter(c, x, ReduceKind.MAX, REL3))
    m = len(x) // n
    for r, (out, c) in enumerate(zip(outs, comms)):
        assert np.abs(out.astype(np.float64) - x[r * m:(r + 1) * m]).max() <= c.ops.eb_abs
        assert c.ops.compress_ops == n - 1 and c.ops.rounds == n - 1


def test_reduce_scatter_divisibility():
    res = run_collecting_errors(3, lambda c: z_reduce_scatter(c, walk(100, 0), "sum", REL3))
    assert all(isinstance(e, CollectiveError) for e in res)


@pytest.mark.parametrize("kind", ["sum", "max", "min", "avg"])
def test_plain_reduce_matches_float32_schedule_oracle(kind):
    n = 5
    data = fields_for(n, 5 * 400, 12)
    outs, _ = run_world(n, lambda c: plain_reduce_scatter(c, data[c.rank], kind))
    expected = ring_reduce_scatter32(data, kind)
    for out, exp in zip(outs, expected):
        np.testing.assert_array_equal(out, exp)
    outs, comms = run_world(n, lambda c: plain_allreduce(c, data[c.rank], kind))
    for out in outs:
        np.testing.assert_array_equal(out, np.concatenate(expected))


@pytest.mark.parametrize("n", [2, 3, 4, 8])
def test_z_allreduce_sum_within_n_eb(n):
    data = fields_for(n, n * 2048, 13)
    outs, comms = run_world(n, lambda c: z_allreduce(c, data[c.rank], "sum", REL3))
    exact = exact_reduce(data, "sum")
    for out, c in zip(outs, comms):
        assert np.abs(out - exact).max() <= n * c.ops.eb_abs
        assert c.ops.rounds == 2 * (n - 1)
        assert c.ops.compress_ops == n  # n-1 reduce-scatter steps plus one allgather


def test_z_allreduce_zero_field_exact():
    n = 4
    z = np.zeros(4096, np.float32)
    outs, _ = run_world(n, lambda c: z_allreduce(c, z, "sum", REL3))
    for out in outs:
        assert not out.any()


def test_z_allreduce_average_and_minmax():
    n = 4
    data = fields_for(n, 4 * 1024, 14)
    for kind in ("avg", "max", "min"):
        outs, comms = run_world(n, lambda c: z_allreduce(c, data[c.rank], kind, REL3))
        exact = exact_reduce(data, kind)
        for out, c in zip(outs, comms):
            assert np.abs(out - exact).max() <= n * c.ops.eb_abs


def test_allreduce_cross_rank_agreement_without_self_exact():
    n = 4
    data = fields_for(n, 4 * 3000, 15)
    cfg = CollectiveConfig(error_bound=ErrorBoundSpec.relative(1e-4), self_exact=False)
    outs, _ = run_world(n, lambda c: z_allreduce(c, data[c.rank], "sum", cfg))
    for out in outs[1:]:
        np.testing.assert_array_equal(out, outs[0])


def test_allreduce_deterministic_on_loopback():
    n = 4
    data = fields_for(n, 4 * 2000, 16)

    def once():
        outs, comms = run_world(n, lambda c: z_allreduce(c, data[c.rank], "sum", REL3))
        return outs, [(c.ops.compress_ops, c.ops.decompress_ops, c.ops.rounds,
                       [(h.round, h.peer, h.direction, h.nbytes) for h in c.ops.hops],
                       c.counters.bytes_sent) for c in comms]

    a, b = once(), once()
    for x, y in zip(a[0], b[0]):
        np.testing.assert_array_equal(x, y)
    assert a[1] == b[1]


@pytest.mark.parametrize("n", [2, 3, 4, 8, 16])
def test_plain_allreduce_volume(n):
    length = n * 256
    data = fields_for(n, length, 17)
    _, comms = run_world(n, lambda c: plain_allreduce(c, data[c.rank], "sum"))
    for c in comms:
        assert c.counters.bytes_sent == 2 * (n - 1) * 4 * length // n
        assert c.counters.bytes_received == 2 * (n - 1) * 4 * length // n
        assert c.ops.rounds == 2 * (n - 1)


def test_cprp2p_allreduce_counts():
    n = 4
    data = fields_for(n, 4 * 1000, 18)
    outs, comms = run_world(n, lambda c: cprp2p_allreduce(c, data[c.rank], "sum", REL3))
    exact = exact_reduce(data, "sum")
    for out, c in zip(outs, comms):
        assert c.ops.compress_ops == 2 * (n - 1)
        assert c.ops.decompress_ops == 2 * (n - 1)
        assert np.abs(out - exact).max() <= 2 * n * c.ops.eb_abs


def test_codec_failure_reports_round():
    # A partial sum of three 7.9s (23.7) is the first value whose float32 spacing exceeds the bound.
    n = 4
    cfg = CollectiveConfig(error_bound=ErrorBoundSpec.absolute(1e-6))
    x = np.full(4 * 1024, 7.9, np.float32)
    res = run_collecting_errors(n, lambda c: z_allreduce(c, x, "sum", cfg))
    assert all(isinstance(e, CollectiveError) for e in res)
    codec_errors = [e for e in res if "resolution" in str(e)]
    assert codec_errors
    assert all(e.round == 2 and "[rank" in str(e) for e in codec_errors)


def test_config_validation():
    with pytest.raises(ParameterError):
        CollectiveConfig(chunk_len=1000)
    with pytest.raises(ParameterError):
        CollectiveConfig(pipeline_segment_bytes=0)
    assert CollectiveConfig(codec="szx").codec.value == "szx"


def test_szx_codec_in_collectives():
    n = 4
    cfg = CollectiveConfig(error_bound=ErrorBoundSpec.relative(1e-3), codec="szx")
    data = fields_for(n, 4 * 1280, 19)
    outs, comms = run_world(n, lambda c: z_allreduce(c, data[c.rank], "sum", cfg))
    exact = exact_reduce(data, "sum")
    for out, c in zip(outs, comms):
        assert np.abs(out - exact).max() <= n * c.ops.eb_abs
    outs, _ = run_world(n, lambda c: z_allgather(c, data[c.rank], cfg))
    for j in range(n):
        eb = resolve_error_bound(cfg.error_bound, data[j])
        assert np.abs(outs[0][j * 5120:(j + 1) * 5120].astype(np.float64) - data[j]).max() <= eb


def test_collectives_over_tcp():
    from test_transport import tcp_world

    n = 3
    comms = tcp_world(n)
    data = fields_for(n, 3 * 4096, 20)
    try:
        from lossycoll.transport import run_ranks

        outs = run_ranks(comms, lambda c: z_allreduce(c, data[c.rank], "sum", REL3), timeout=60)
        exact = exact_reduce(data, "sum")
        for out, c in zip(outs, comms):
            assert np.abs(out - exact).max() <= n * c.ops.eb_abs
        outs = run_ranks(comms, lambda c: z_bcast(c, 1, data[1] if c.rank == 1 else None, REL3), timeout=60)
        for out in outs:
            assert np.abs(out.astype(np.float64) - data[1]).max() <= resolve_error_bound(REL3.error_bound, data[1])
    finally:
        for c in comms:
            c.close()
