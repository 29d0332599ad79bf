"""Command-line entry point: ``lossycoll <subcommand> [options]``."""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from . import analysis, bench
from .codec import ErrorBoundSpec
from .collectives import CollectiveConfig, ReduceKind
from .data import FieldKind, SyntheticSpec, generate_field, load_raw_f32, save_raw_f32, write_pgm
from .errors import LossyCollError
from .launch import launch
from .transport import connect_world, loopback_world, read_address_file, run_ranks

#: Published PSNR for the same stacking workload, kept as context in the CSV.
REFERENCE_PSNR = 49.1


def _bound(text: str) -> ErrorBoundSpec:
    try:
        return ErrorBoundSpec.parse(text)
    except LossyCollError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--backend", choices=("loopback", "tcp"), default="loopback")
    p.add_argument("--ranks", type=int, default=4, help="world size N")
    p.add_argument("--rank", type=int, default=None, help="this process's rank (tcp)")
    p.add_argument("--addrs", default=None, help="address file, one host:port per line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV output path (default stdout)")
    p.add_argument("--timeout", type=float, default=120.0, help="per-operation timeout, seconds")
    return p


def build_parser() -> argparse.ArgumentParser:
    shared = _shared()
    parser = argparse.ArgumentParser(prog="lossycoll", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench-codec", parents=[shared], help="codec throughput and ratio")
    p.add_argument("--input", help="raw little-endian float32 file")
    p.add_argument("--count", type=int, default=None, help="read only the first COUNT values")
    p.add_argument("--kind", choices=[k.value for k in FieldKind], default="sine_mix")
    p.add_argument("--size", type=int, default=1 << 24, help="synthetic field size in bytes")
    p.add_argument("--bound", type=_bound, action="append", help="repeatable; default rel 1e-1..1e-4")
    p.add_argument("--codec", choices=("zlite", "szx"), action="append")
    p.add_argument("--workers", type=int, action="append")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--reps", type=int, default=10)

    p = sub.add_parser("bench-collective", parents=[shared], help="collective timing breakdown")
    p.add_argument("--collective", choices=bench.COLLECTIVE_NAMES, action="append")
    p.add_argument("--variant", choices=bench.VARIANTS, action="append")
    p.add_argument("--size", type=int, action="append", help="bytes per rank; repeatable")
    p.add_argument("--bound", type=_bound, default=ErrorBoundSpec.relative(1e-4))
    p.add_argument("--codec", choices=("zlite", "szx"), default="zlite")
    p.add_argument("--kind", choices=[k.value for k in FieldKind], default="sine_mix")
    p.add_argument("--workers", type=int, default=4, help="codec workers for the z-mt variant")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--reps", type=int, default=10)

    p = sub.add_parser("analyze-error", parents=[shared], help="allreduce error vs float64 oracle")
    p.add_argument("--op", choices=[k.value for k in ReduceKind], default="sum")
    p.add_argument("--count", type=int, default=100_000, help="values per rank")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--bound", type=_bound, default=ErrorBoundSpec.relative(1e-4))
    p.add_argument("--codec", choices=("zlite", "szx"), default="zlite")
    p.add_argument("--variant", choices=("z", "cprp2p", "plain"), default="z")
    p.add_argument("--kind", choices=[k.value for k in FieldKind], default="gaussian_walk")
    p.add_argument("--identical", action="store_true", help="every rank holds the same field")
    p.add_argument("--zero", action="store_true", help="every rank holds zeros")
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--hist-out", default=None, help="error histogram CSV")

    p = sub.add_parser("stack", parents=[shared], help="sum one image per rank")
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--bound", type=_bound, default=ErrorBoundSpec.relative(1e-4))
    p.add_argument("--identical", action="store_true")
    p.add_argument("--image-out", default="stack", help="prefix for PREFIX.f32 and PREFIX.pgm")

    p = sub.add_parser("launch", help="run a subcommand on N local TCP ranks")
    p.add_argument("--ranks", type=int, default=4)
    p.add_argument("--addrs", default=None, help="existing address file (default: allocate ports)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--dry-run", action="store_true", help="print per-rank commands only")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("argv", nargs=argparse.REMAINDER, help="subcommand and its options")
    return parser


def run_world(args, fn, *fn_args, **fn_kwargs):
    """Run ``fn(comm, ...)`` on every rank of the selected backend; return rank 0's value."""
    if args.backend == "loopback":
        comms = loopback_world(args.ranks, args.timeout)
        try:
            return run_ranks(comms, fn, *fn_args, **fn_kwargs)[0]
        finally:
            for c in comms:
                c.close()
    if args.addrs is None or args.rank is None:
        raise LossyCollError("tcp backend needs --addrs and --rank (or use the launch subcommand)")
    comm = connect_world("tcp", args.rank, args.ranks, read_address_file(args.addrs),
                         timeout=args.timeout, op_timeout=args.timeout)
    try:
        result = fn(comm, *fn_args, **fn_kwargs)
        comm.barrier()
        return result
    finally:
        comm.close()


def _is_writer(args) -> bool:
    return args.backend == "loopback" or args.rank == 0


def cmd_bench_codec(args) -> list[dict]:
    if args.input:
        field = load_raw_f32(args.input, args.count)
    else:
        field = generate_field(SyntheticSpec(args.kind, max(1, args.size // 4), args.seed))
    bounds = args.bound or [ErrorBoundSpec.parse(b) for b in bench.DEFAULT_CODEC_BOUNDS]
    rows = bench.bench_codec(field, bounds, args.codec or ["zlite", "szx"], args.workers or [1],
                             args.warmup, args.reps)
    bench.write_csv(rows, bench.CODEC_COLUMNS, args.out)
    return rows


def cmd_bench_collective(args) -> list[dict]:
    rows = []
    for collective in args.collective or ["allreduce"]:
        for variant in args.variant or list(bench.VARIANTS):
            key = "z" if variant == "z-mt" else variant
            if (collective, key) not in bench.COLLECTIVES:
                continue
            for size in args.size or [1 << 20]:
                row = run_world(args, bench.bench_collective_rank, collective, variant, size,
                                args.bound, args.codec, args.kind, args.seed, args.warmup,
                                args.reps, args.workers)
                if row is not None:
                    rows.append(row)
    if _is_writer(args):
        bench.write_csv(rows, bench.COLLECTIVE_COLUMNS, args.out)
    return rows


def cmd_analyze_error(args) -> list[analysis.AnalysisResult]:
    kind = ReduceKind(args.op)
    cfg = CollectiveConfig(error_bound=args.bound, codec=args.codec, timeout=args.timeout)
    results = []
    for t in range(args.trials):
        fields = analysis.rank_fields(args.ranks, args.count, args.seed + t, args.kind,
                                      args.identical, args.zero)
        out = run_world(args, analysis.allreduce_rank, fields, kind, cfg, args.variant)
        if out is None:
            continue
        values, ops = out
        eb = ops.eb_abs if ops.eb_abs is not None else args.bound.value
        results.append(analysis.analyze_errors(values, fields, kind, eb, args.codec))
    if results and _is_writer(args):
        bench.write_csv([r.summary_row() for r in results], list(results[0].summary_row()), args.out)
        if args.hist_out:
            pooled = np.concatenate([r.errors for r in results])
            bench.write_csv(analysis.error_histogram(pooled, args.bins), ["bin_lo", "bin_hi", "count"],
                            args.hist_out)
    return results


STACK_COLUMNS = ["ranks", "height", "width", "eb_abs", "psnr", "nrmse", "max_abs_err", "context_psnr"]


def cmd_stack(args):
    cfg = CollectiveConfig(error_bound=args.bound, timeout=args.timeout)
    res = run_world(args, analysis.stack_images, args.height, args.width, args.bound, args.seed,
                    args.identical, cfg)
    if res is None:
        return None
    save_raw_f32(f"{args.image_out}.f32", res.image)
    write_pgm(f"{args.image_out}.pgm", res.image)
    bench.write_csv([{
        "ranks": args.ranks, "height": args.height, "width": args.width, "eb_abs": res.eb_abs,
        "psnr": res.psnr, "nrmse": res.nrmse, "max_abs_err": res.max_abs_err,
        "context_psnr": REFERENCE_PSNR,
    }], STACK_COLUMNS, args.out)
    return res


def cmd_launch(args):
    argv = list(args.argv)
    if argv and argv[0] == "--":
        argv = argv[1:]
    if not argv:
        raise LossyCollError("launch needs a subcommand to run, e.g. launch --ranks 4 -- bench-collective")
    addr_file = args.addrs or os.path.join(tempfile.mkdtemp(prefix="lossycoll-"), "addrs.txt")
    result = launch(args.ranks, argv, addr_file, host=args.host, dry_run=args.dry_run,
                    timeout=args.timeout)
    if args.dry_run:
        for cmd in result:
            print(" ".join(cmd))
        return 0
    failed = [r for r, code in enumerate(result) if code != 0]
    if failed:
        raise LossyCollError(f"ranks {failed} exited with an error")
    return 0


COMMANDS = {
    "bench-codec": cmd_bench_codec,
    "bench-collective": cmd_bench_collective,
    "analyze-error": cmd_analyze_error,
    "stack": cmd_stack,
    "launch": cmd_launch,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except LossyCollError as exc:
        print(f"lossycoll {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
