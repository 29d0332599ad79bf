"""Error-propagation experiments and the image-stacking demo.

Both are written rank-locally: every rank regenerates all ranks' seeded
inputs, runs its part of the collective, and rank 0 compares against a
float64 oracle. The same code therefore runs on loopback threads and on
TCP processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import error_stats as es
from .codec import ErrorBoundSpec, compress, decompress
from .collectives import COLLECTIVES, CollectiveConfig, ReduceKind
from .data import SyntheticSpec, generate_field, synthetic_image
from .errors import ParameterError
from .szx import compress_szx, decompress_szx


def rank_fields(n: int, length: int, seed: int, kind: str = "gaussian_walk",
                identical: bool = False, zero: bool = False) -> list[np.ndarray]:
    if zero:
        return [np.zeros(length, dtype=np.float32) for _ in range(n)]
    if identical:
        one = generate_field(SyntheticSpec(kind, length, seed))
        return [one.copy() for _ in range(n)]
    return [generate_field(SyntheticSpec(kind, length, seed * 7919 + r)) for r in range(n)]


def oracle(fields: list[np.ndarray], kind: ReduceKind) -> np.ndarray:
    stack = np.stack([f.astype(np.float64) for f in fields])
    if kind is ReduceKind.SUM:
        return stack.sum(axis=0)
    if kind is ReduceKind.AVERAGE:
        return stack.sum(axis=0) / len(fields)
    if kind is ReduceKind.MAX:
        return stack.max(axis=0)
    return stack.min(axis=0)


def single_compression_errors(fields, eb_abs: float, codec: str = "zlite") -> np.ndarray:
    """Pooled errors of compressing each field once at ``eb_abs``."""
    spec = ErrorBoundSpec.absolute(eb_abs)
    out = []
    for f in fields:
        if codec == "szx":
            rec = decompress_szx(compress_szx(f, spec)[0])
        else:
            rec = decompress(compress(f, spec)[0])
        out.append(rec.astype(np.float64) - f.astype(np.float64))
    return np.concatenate(out)


def theoretical_variance(kind: ReduceKind, n: int, sigma: float) -> float:
    if sigma == 0:
        return 0.0
    if kind is ReduceKind.SUM:
        return n * sigma * sigma
    if kind is ReduceKind.AVERAGE:
        return es.avg_error_variance(n, sigma)
    return es.maxmin_error_variance(n, sigma)


@dataclass
class AnalysisResult:
    op: str
    n: int
    values: int
    eb_abs: float
    mu_hat: float
    sigma_hat: float
    max_abs_err: float
    bound_violations: int
    worst_case_bound: float
    interval_sigma: tuple[float, float]
    coverage_sigma: float
    interval_bound: tuple[float, float]
    coverage_bound: float
    measured_variance: float
    theory_variance: float
    nrmse: float
    psnr: float
    errors: np.ndarray = field(repr=False, default=None)

    @property
    def variance_ratio(self) -> float:
        if self.theory_variance == 0:
            return math.nan if self.measured_variance else 1.0
        return self.measured_variance / self.theory_variance

    def summary_row(self) -> dict:
        return {
            "op": self.op, "n": self.n, "values": self.values, "eb_abs": self.eb_abs,
            "mu_hat": self.mu_hat, "sigma_hat": self.sigma_hat, "max_abs_err": self.max_abs_err,
            "worst_case_bound": self.worst_case_bound, "bound_violations": self.bound_violations,
            "interval_sigma": self.interval_sigma[1], "coverage_sigma": self.coverage_sigma,
            "interval_bound": self.interval_bound[1], "coverage_bound": self.coverage_bound,
            "measured_variance": self.measured_variance, "theory_variance": self.theory_variance,
            "variance_ratio": self.variance_ratio, "nrmse": self.nrmse, "psnr": self.psnr,
        }


def _interval(fn, n, scale):
    return fn(n, scale) if scale > 0 else (0.0, 0.0)


def analyze_errors(result: np.ndarray, fields, kind: ReduceKind, eb_abs: float,
                   codec: str = "zlite") -> AnalysisResult:
    """Compare a rank's allreduce output against the float64 oracle."""
    n = len(fields)
    exact = oracle(fields, kind)
    err = result.astype(np.float64) - exact
    # Per-compression error spread, measured on one compression per rank.
    mu1, sigma1 = es.fit_normal_mle(single_compression_errors(fields, eb_abs, codec))
    # At most n-1 reduce-scatter hops plus one allgather compression per element.
    worst = n * eb_abs
    iv_sigma = _interval(es.sum_error_interval_sigma, n, sigma1)
    iv_bound = _interval(es.sum_error_interval_bound, n, eb_abs)
    return AnalysisResult(
        op=kind.value, n=n, values=err.size, eb_abs=eb_abs, mu_hat=mu1, sigma_hat=sigma1,
        max_abs_err=float(np.abs(err).max()),
        bound_violations=int(np.count_nonzero(np.abs(err) > worst)),
        worst_case_bound=worst,
        interval_sigma=iv_sigma, coverage_sigma=es.coverage_fraction(err, iv_sigma),
        interval_bound=iv_bound, coverage_bound=es.coverage_fraction(err, iv_bound),
        measured_variance=float(err.var()), theory_variance=theoretical_variance(kind, n, sigma1),
        nrmse=es.nrmse(result, exact), psnr=es.psnr(result, exact), errors=err,
    )


def allreduce_rank(comm, fields, kind: ReduceKind, cfg: CollectiveConfig, variant: str = "z"):
    fn = COLLECTIVES[("allreduce", variant)]
    out = fn(comm, fields[comm.rank], kind, cfg)
    return out, comm.ops


def error_histogram(errors: np.ndarray, bins: int = 64) -> list[dict]:
    e = np.asarray(errors, dtype=np.float64)
    lo, hi = float(e.min()), float(e.max())
    if lo == hi:
        return [{"bin_lo": lo, "bin_hi": hi, "count": int(e.size)}]
    counts, edges = np.histogram(e, bins=bins, range=(lo, hi))
    return [{"bin_lo": float(a), "bin_hi": float(b), "count": int(c)}
            for a, b, c in zip(edges[:-1], edges[1:], counts)]


@dataclass
class StackResult:
    image: np.ndarray
    exact: np.ndarray
    psnr: float
    nrmse: float
    max_abs_err: float
    eb_abs: float


def stack_images(comm, height: int, width: int, spec: ErrorBoundSpec, seed: int = 0,
                 identical: bool = False, cfg: CollectiveConfig | None = None):
    """Sum one synthetic image per rank with z_allreduce; rank 0 also gets the oracle."""
    n = comm.size
    if (height * width) % n:
        raise ParameterError(f"{height}x{width} pixels do not split across {n} ranks")
    cfg = replace(cfg or CollectiveConfig(), error_bound=spec)
    images = [synthetic_image(height, width, seed if identical else seed + r) for r in range(n)]
    fn = COLLECTIVES[("allreduce", "z")]
    out = fn(comm, images[comm.rank].reshape(-1), ReduceKind.SUM, cfg).reshape(height, width)
    if comm.rank != 0:
        return None
    exact = oracle([im.reshape(-1) for im in images], ReduceKind.SUM).reshape(height, width)
    return StackResult(out, exact, es.psnr(out, exact), es.nrmse(out, exact),
                       float(np.abs(out - exact).max()), comm.ops.eb_abs)
