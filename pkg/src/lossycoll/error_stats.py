"""Closed-form error-propagation formulas and empirical quality metrics.

The model: every compression adds an independent error ``e ~ N(mu, sigma^2)``
bounded by ``e_hat``; in practice ``e_hat`` is about ``3 sigma``. Summing over
``n`` hops gives ``N(n mu, n sigma^2)``, averaging gives ``sigma^2 / n``, and a
chain of max/min selections has the variance of
:func:`maxmin_error_variance`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError

#: Probability mass of a normal distribution within two standard deviations.
TWO_SIGMA_COVERAGE = 0.9544


@dataclass(frozen=True)
class TheoryParams:
    n: int
    sigma: float
    e_hat: float

    def __post_init__(self):
        _check_n(self.n)
        _check_positive("sigma", self.sigma)
        _check_positive("e_hat", self.e_hat)

    @staticmethod
    def sigma_from_bound(e_hat: float) -> float:
        """The ``e_hat = 3 sigma`` rule of thumb, only applied when asked."""
        _check_positive("e_hat", e_hat)
        return e_hat / 3.0


def _check_n(n) -> None:
    if int(n) != n or n < 1:
        raise ParameterError(f"node count must be an integer >= 1, got {n}")


def _check_positive(name: str, value: float) -> None:
    if not value > 0 or not math.isfinite(value):
        raise ParameterError(f"{name} must be positive and finite, got {value}")


def sum_error_interval_sigma(n: int, sigma: float) -> tuple[float, float]:
    _check_n(n)
    _check_positive("sigma", sigma)
    half = 2.0 * math.sqrt(n) * sigma
    return -half, half


def sum_error_interval_bound(n: int, e_hat: float) -> tuple[float, float]:
    _check_n(n)
    _check_positive("e_hat", e_hat)
    half = 2.0 / 3.0 * math.sqrt(n) * e_hat
    return -half, half


def avg_error_variance(n: int, sigma: float) -> float:
    _check_n(n)
    _check_positive("sigma", sigma)
    return sigma * sigma / n


def maxmin_error_variance(n: int, sigma: float) -> float:
    _check_n(n)
    _check_positive("sigma", sigma)
    return (2.0 - math.ldexp(n + 2, -int(n))) * sigma * sigma


def combine_normals(coeffs, means, sigmas) -> tuple[float, float]:
    """Mean and variance of ``sum(a_i X_i)`` for independent ``X_i ~ N(mu_i, sigma_i^2)``."""
    a = np.asarray(coeffs, dtype=np.float64)
    mu = np.asarray(means, dtype=np.float64)
    s = np.asarray(sigmas, dtype=np.float64)
    if not a.shape == mu.shape == s.shape or a.ndim != 1 or a.size == 0:
        raise ParameterError("coeffs, means and sigmas must be equal-length non-empty sequences")
    if np.any(s < 0):
        raise ParameterError("standard deviations must be non-negative")
    return float(np.dot(a, mu)), float(np.dot(a * a, s * s))


def _pair(result, reference) -> tuple[np.ndarray, np.ndarray]:
    res = np.asarray(result, dtype=np.float64).reshape(-1)
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    if res.shape != ref.shape or res.size == 0:
        raise ParameterError(f"result and reference must be non-empty and equal length "
                             f"({res.size} vs {ref.size})")
    return res, ref


def _rmse_and_range(result, reference) -> tuple[float, float]:
    res, ref = _pair(result, reference)
    return float(np.sqrt(np.mean((res - ref) ** 2))), float(ref.max() - ref.min())


def nrmse(result, reference) -> float:
    rmse, value_range = _rmse_and_range(result, reference)
    if rmse == 0.0:
        return 0.0
    if value_range == 0.0:
        return math.inf
    return rmse / value_range


def psnr(result, reference) -> float:
    """PSNR in dB with the reference's value range as peak; ``inf`` for zero error."""
    rmse, value_range = _rmse_and_range(result, reference)
    if rmse == 0.0:
        return math.inf
    if value_range == 0.0:
        return -math.inf
    return 20.0 * math.log10(value_range / rmse)


def fit_normal_mle(errors) -> tuple[float, float]:
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise ParameterError("cannot fit an empty sample")
    return float(e.mean()), float(e.std())


def coverage_fraction(errors, interval) -> float:
    """Share of errors inside the closed interval ``(lo, hi)``."""
    lo, hi = interval
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise ParameterError("coverage of an empty sample is undefined")
    if lo > hi:
        return 0.0
    return float(np.count_nonzero((e >= lo) & (e <= hi)) / e.size)


@dataclass
class ErrorStatsReport:
    nrmse: float
    psnr: float
    max_abs_err: float
    sample_mean: float
    sample_sigma: float
    coverage: float
    interval_lo: float
    interval_hi: float

    def as_row(self) -> dict:
        return asdict(self)


def error_report(result, reference, interval: tuple[float, float] | None = None) -> ErrorStatsReport:
    """Metrics of ``result`` against ``reference``.

    Coverage is measured against ``interval``; by default the two-sigma
    interval of the fitted error distribution.
    """
    res, ref = _pair(result, reference)
    err = res - ref
    mu, sigma = fit_normal_mle(err)
    if interval is None:
        interval = (mu - 2 * sigma, mu + 2 * sigma)
    return ErrorStatsReport(
        nrmse=nrmse(res, ref),
        psnr=psnr(res, ref),
        max_abs_err=float(np.abs(err).max()),
        sample_mean=mu,
        sample_sigma=sigma,
        coverage=coverage_fraction(err, interval),
        interval_lo=float(interval[0]),
        interval_hi=float(interval[1]),
    )
