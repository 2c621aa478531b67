"""Distances between a sample law and the standard normal, plus rate fitting.

The Kolmogorov statistic is the primary acceptance metric (it lower-bounds the
total variation distance the limit theorems control); a Scheffe-type kernel
density estimate of the total variation distance corroborates it.  Bootstrap
intervals are percentile intervals from seeded count resampling, clipped to
contain the point estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import rng as _rng


class EmptySampleError(ValueError):
    pass


class InvalidSampleError(ValueError):
    pass


class InsufficientSampleError(ValueError):
    pass


class DegenerateBandwidthError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceEstimate:
    kind: str
    value: float
    ci_low: float
    ci_high: float
    n: int
    bandwidth: Optional[float] = None


def _ks_statistic(values: np.ndarray, counts: np.ndarray,
                  cdf_at_values: np.ndarray) -> float:
    n = counts.sum()
    cum = np.cumsum(counts)
    cum_hi = cum / n
    cum_lo = (cum - counts) / n
    return float(np.max(np.maximum(np.abs(cum_hi - cdf_at_values),
                                   np.abs(cum_lo - cdf_at_values))))


def kolmogorov_distance(sample: Sequence[float],
                        reference_cdf: Callable[[np.ndarray], np.ndarray] = stats.norm.cdf,
                        seed: int = 0, n_boot: int = 500) -> DistanceEstimate:
    """Supremum gap between the empirical CDF and the reference CDF.

    Ties are handled by evaluating at distinct values with cumulative counts;
    both one-sided gaps at each jump are considered.
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise EmptySampleError("empty sample")
    if not np.all(np.isfinite(x)):
        raise InvalidSampleError("sample contains non-finite values")
    values, counts = np.unique(x, return_counts=True)
    cdf_vals = np.asarray(reference_cdf(values), dtype=float)
    d = _ks_statistic(values, counts, cdf_vals)

    lo = hi = d
    if n_boot > 0:
        gen = _rng.tagged_generator(seed, "kolmogorov")
        probs = counts / counts.sum()
        boots = np.empty(n_boot)
        for i in range(n_boot):
            c = gen.multinomial(x.size, probs)
            boots[i] = _ks_statistic(values, c, cdf_vals)
        lo, hi = np.percentile(boots, [2.5, 97.5])
        lo, hi = min(float(lo), d), max(float(hi), d)
    return DistanceEstimate(kind="kolmogorov", value=d, ci_low=lo, ci_high=hi,
                            n=int(x.size))


def _silverman_bandwidth(x: np.ndarray) -> float:
    sd = float(x.std(ddof=1))
    iqr = float(np.subtract(*np.percentile(x, [75, 25])))
    scale = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * scale * x.size ** (-0.2)


def tv_scheffe(sample: Sequence[float], bandwidth: Optional[float] = None,
               seed: int = 0, n_boot: int = 500) -> DistanceEstimate:
    """Total variation distance to N(0,1) via the Scheffe identity on a KDE.

    Half the L1 gap between a Gaussian kernel density estimate and the normal
    density, integrated by trapezoid rule on a 2048-point grid spanning the
    sample range plus four bandwidths.  Bootstrap resamples reuse the grid
    through linear binning and kernel convolution.
    """
    x = np.asarray(sample, dtype=float)
    if x.size < 100:
        raise InsufficientSampleError(f"need at least 100 points, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidSampleError("sample contains non-finite values")
    h = bandwidth if bandwidth is not None else _silverman_bandwidth(x)
    if not (np.isfinite(h) and h > 0.0):
        raise DegenerateBandwidthError(
            f"bandwidth {h!r} is degenerate (constant sample?)")

    grid = np.linspace(x.min() - 4.0 * h, x.max() + 4.0 * h, 2048)
    phi_grid = stats.norm.pdf(grid)

    kde = np.zeros_like(grid)
    for lo in range(0, x.size, 4096):
        chunk = x[lo:lo + 4096]
        kde += stats.norm.pdf((grid[:, None] - chunk[None, :]) / h).sum(axis=1)
    kde /= x.size * h
    value = 0.5 * float(np.trapezoid(np.abs(kde - phi_grid), grid))

    lo_ci = hi_ci = value
    if n_boot > 0:
        # Linear binning + kernel convolution makes resampling cheap; the
        # binning error is orders of magnitude below the bootstrap noise.
        delta = grid[1] - grid[0]
        idx = np.clip((x - grid[0]) / delta, 0, grid.size - 1)
        left = np.floor(idx).astype(int)
        frac = idx - left
        weights = np.bincount(left, 1.0 - frac, minlength=grid.size)
        weights += np.bincount(np.minimum(left + 1, grid.size - 1), frac,
                               minlength=grid.size)
        half_kernel = int(np.ceil(5.0 * h / delta))
        offsets = np.arange(-half_kernel, half_kernel + 1) * delta
        kernel = stats.norm.pdf(offsets / h) / h
        gen = _rng.tagged_generator(seed, "tv_scheffe")
        probs = weights / weights.sum()
        boots = np.empty(n_boot)
        for i in range(n_boot):
            w = gen.multinomial(x.size, probs).astype(float)
            dens = np.convolve(w, kernel, mode="same") / x.size
            boots[i] = 0.5 * float(np.trapezoid(np.abs(dens - phi_grid), grid))
        lo_ci, hi_ci = np.percentile(boots, [2.5, 97.5])
        lo_ci, hi_ci = min(float(lo_ci), value), max(float(hi_ci), value)
    return DistanceEstimate(kind="tv_scheffe", value=value, ci_low=lo_ci,
                            ci_high=hi_ci, n=int(x.size), bandwidth=float(h))


@dataclass(frozen=True)
class RateFit:
    """Log-log regression of distance against horizon."""

    horizons: tuple
    distances: tuple
    slope: float
    intercept: float
    slope_ci: tuple
    r2: float


def rate_fit(horizons: Sequence[float], distances: Sequence[float],
             ci_widths: Optional[Sequence[float]] = None) -> RateFit:
    """Weighted least squares of log(distance) on log(horizon).

    Weights are inverse squared confidence-interval widths when provided;
    the slope interval comes from the regression covariance with a Student-t
    quantile on n - 2 degrees of freedom.
    """
    t = np.asarray(horizons, dtype=float)
    d = np.asarray(distances, dtype=float)
    if t.size < 3:
        raise ValueError(f"rate fit needs at least 3 horizons, got {t.size}")
    if np.any(d <= 0.0):
        raise ValueError("distances must be positive for a log-log fit; "
                         "increase the sample size or drop the offending horizon")
    if ci_widths is None:
        w = np.ones_like(t)
    else:
        widths = np.asarray(ci_widths, dtype=float)
        if np.any(widths < 0.0) or widths.shape != t.shape:
            raise ValueError("ci widths must be nonnegative and match horizons")
        floor = max(widths.max() * 1e-9, 1e-300)
        w = 1.0 / np.maximum(widths, floor) ** 2

    x, y = np.log(t), np.log(d)
    wsum = w.sum()
    xbar = (w * x).sum() / wsum
    ybar = (w * y).sum() / wsum
    sxx = (w * (x - xbar) ** 2).sum()
    slope = (w * (x - xbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * xbar
    resid = y - intercept - slope * x
    ssr = (w * resid ** 2).sum()
    sst = (w * (y - ybar) ** 2).sum()
    r2 = 1.0 if sst == 0.0 else 1.0 - ssr / sst
    dof = t.size - 2
    sigma2 = ssr / dof if dof > 0 else 0.0
    se = float(np.sqrt(sigma2 / sxx))
    tq = float(stats.t.ppf(0.975, dof)) if dof > 0 else 0.0
    return RateFit(horizons=tuple(t), distances=tuple(d),
                   slope=float(slope), intercept=float(intercept),
                   slope_ci=(float(slope - tq * se), float(slope + tq * se)),
                   r2=float(r2))
