"""Codec and collective benchmarks producing fixed-schema CSV rows."""

from __future__ import annotations

import csv
import io
import sys
import time

import numpy as np

from .codec import CodecParams, ErrorBoundSpec, compress, decompress, resolve_error_bound
from .collectives import COLLECTIVES, CollectiveConfig, ReduceKind
from .data import SyntheticSpec, generate_field
from .errors import ParameterError
from .szx import compress_szx, decompress_szx

CODEC_COLUMNS = [
    "codec", "mode", "rel_or_abs", "bound", "workers", "values",
    "compress_throughput", "decompress_throughput", "ratio", "bit_rate", "constant_block_pct",
]
COLLECTIVE_COLUMNS = [
    "collective", "variant", "N", "data_bytes", "total_s",
    "compress_pct", "commu_pct", "comput_pct", "other_pct",
    "backend", "compress_ops", "decompress_ops", "rounds", "bytes_sent", "bytes_received",
]
COLLECTIVE_NAMES = ("allgather", "bcast", "scatter", "reduce_scatter", "allreduce")
VARIANTS = ("plain", "cprp2p", "z", "z-mt")
DEFAULT_CODEC_BOUNDS = ("rel:1e-1", "rel:1e-2", "rel:1e-3", "rel:1e-4")


def write_csv(rows: list[dict], columns: list[str], out=None) -> None:
    """Write rows to ``out`` (path, file object, or stdout when None)."""
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", newline="") as fh:
            write_csv(rows, columns, fh)
        return
    writer = csv.DictWriter(out or sys.stdout, fieldnames=columns, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def read_csv(text_or_path) -> list[dict]:
    if isinstance(text_or_path, str) and "\n" in text_or_path:
        return list(csv.DictReader(io.StringIO(text_or_path)))
    with open(text_or_path, newline="") as fh:
        return list(csv.DictReader(fh))


def _timeit(fn, warmup: int, reps: int):
    result = None
    for _ in range(warmup):
        result = fn()
    t0 = time.perf_counter()
    for _ in range(reps):
        result = fn()
    return (time.perf_counter() - t0) / max(reps, 1), result


def bench_codec(field: np.ndarray, bounds, codecs=("zlite", "szx"), workers=(1,),
                warmup: int = 10, reps: int = 10) -> list[dict]:
    """One row per (codec, bound, worker count); throughput in GB/s of input."""
    rows = []
    nbytes = field.nbytes
    for codec_name in codecs:
        for bound in bounds:
            spec = bound if isinstance(bound, ErrorBoundSpec) else ErrorBoundSpec.parse(bound)
            eb = resolve_error_bound(spec, field)
            for w in workers:
                if codec_name == "zlite":
                    params = CodecParams(parallelism=w)
                    comp = lambda: compress(field, spec, params)  # noqa: E731
                    dec = decompress
                elif codec_name == "szx":
                    if w != 1:
                        continue  # the baseline codec is single-threaded
                    comp = lambda: compress_szx(field, spec)  # noqa: E731
                    dec = decompress_szx
                else:
                    raise ParameterError(f"unknown codec {codec_name!r}")
                t_comp, (frame, stats) = _timeit(comp, warmup, reps)
                t_dec, _ = _timeit(lambda: dec(frame), warmup, reps)
                rows.append({
                    "codec": codec_name,
                    "mode": spec.mode.value,
                    "rel_or_abs": f"{spec.value:g}",
                    "bound": eb,
                    "workers": w,
                    "values": field.size,
                    "compress_throughput": nbytes / t_comp / 1e9 if t_comp > 0 else float("inf"),
                    "decompress_throughput": nbytes / t_dec / 1e9 if t_dec > 0 else float("inf"),
                    "ratio": stats.ratio,
                    "bit_rate": stats.bit_rate,
                    "constant_block_pct": 100.0 * stats.constant_block_fraction,
                })
    return rows


def breakdown(total: float, compress_s: float, comm_s: float, reduce_s: float) -> dict:
    """Percentages of ``total`` that always sum to 100; ``other`` takes the rest."""
    parts = [max(compress_s, 0.0), max(comm_s, 0.0), max(reduce_s, 0.0)]
    denom = max(total, sum(parts))
    if denom <= 0:
        return {"compress_pct": 0.0, "commu_pct": 0.0, "comput_pct": 0.0, "other_pct": 100.0}
    pct = [100.0 * p / denom for p in parts]
    return {"compress_pct": pct[0], "commu_pct": pct[1], "comput_pct": pct[2],
            "other_pct": 100.0 - sum(pct)}


def collective_config(variant: str, spec: ErrorBoundSpec, codec: str = "zlite",
                      workers: int = 4, **kwargs) -> tuple[str, CollectiveConfig]:
    """Map a benchmark variant to (placement key, config)."""
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    params = CodecParams(parallelism=workers if variant == "z-mt" else 1)
    cfg = CollectiveConfig(error_bound=spec, codec=codec, params=params, **kwargs)
    return ("z" if variant == "z-mt" else variant), cfg


def _call(comm, collective: str, key: str, local, cfg):
    fn = COLLECTIVES.get((collective, key))
    if fn is None:
        raise ParameterError(f"no {key} variant of {collective}")
    if collective in ("bcast", "scatter"):
        return fn(comm, 0, local if comm.rank == 0 else None, cfg)
    if collective in ("reduce_scatter", "allreduce"):
        return fn(comm, local, ReduceKind.SUM, cfg)
    return fn(comm, local, cfg)


def bench_collective_rank(comm, collective: str, variant: str, data_bytes: int, spec: ErrorBoundSpec,
                          codec: str = "zlite", kind: str = "sine_mix", seed: int = 0,
                          warmup: int = 10, reps: int = 10, workers: int = 4) -> dict | None:
    """Run one configuration on this rank; rank 0 returns the averaged row."""
    if collective not in COLLECTIVE_NAMES:
        raise ParameterError(f"unknown collective {collective!r}")
    n = comm.size
    count = data_bytes // 4
    if collective in ("scatter", "reduce_scatter", "allreduce"):
        count -= count % n
    if count <= 0:
        raise ParameterError(f"{data_bytes} bytes is too small for {n} ranks")
    key, cfg = collective_config(variant, spec, codec, workers)
    local = generate_field(SyntheticSpec(kind, count, seed + comm.rank))
    totals = np.zeros(4)
    sent = received = 0
    for i in range(warmup + reps):
        comm.barrier()
        before = comm.counters.snapshot()
        t0 = time.perf_counter()
        _call(comm, collective, key, local, cfg)
        elapsed = time.perf_counter() - t0
        if i >= warmup:
            ops = comm.ops
            totals += (elapsed, ops.codec_seconds, ops.comm_seconds, ops.reduce_seconds)
            moved = comm.counters.snapshot() - before
            sent += moved.bytes_sent
            received += moved.bytes_received
    if comm.rank != 0:
        return None
    avg = totals / max(reps, 1)
    row = {
        "collective": collective, "variant": variant, "N": n, "data_bytes": count * 4,
        "total_s": avg[0], "backend": getattr(comm, "backend", "?"),
        "compress_ops": comm.ops.compress_ops, "decompress_ops": comm.ops.decompress_ops,
        "rounds": comm.ops.rounds,
        "bytes_sent": sent // max(reps, 1),
        "bytes_received": received // max(reps, 1),
    }
    row.update(breakdown(*avg))
    return row
