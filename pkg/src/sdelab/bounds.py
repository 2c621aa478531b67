"""Auxiliary estimates: Gaussian TV lemma, tail bounds, exponential functionals.

Monte Carlo checks in this module compare empirical decay rates against the
analytic envelopes; the non-explicit constants in the envelopes are never
asserted directly.  Infinite-horizon quantities are probed through
stabilization across doubling horizons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.integrate import quad
from scipy.special import expit, gammaln

from . import rng as _rng
from .coefficients import ModelSpec
from .distances import rate_fit
from .simulate import SimConfig, iter_path_blocks


class DecompositionError(ValueError):
    """Covariance is not symmetric positive definite."""


@dataclass(frozen=True)
class GaussianTvQuery:
    """Inputs of the scale-and-shift Gaussian total variation bound."""

    d: int
    a: float
    v: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if self.d < 1 or self.a <= 0.0:
            raise ValueError("need dimension >= 1 and scale a > 0")
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if v.shape != (self.d,) or V.shape != (self.d, self.d):
            raise ValueError("shift/covariance shapes do not match dimension")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "V", V)


def gaussian_tv_constant(d: int) -> float:
    """sqrt(2) * Gamma((d+1)/2) / Gamma(d/2), via log-gamma."""
    return float(np.exp(0.5 * np.log(2.0) + gammaln((d + 1) / 2.0) - gammaln(d / 2.0)))


def gaussian_tv_bound(q: GaussianTvQuery) -> float:
    """Bound on sup_A |P(Y in A) - P(aY + v in A)| for Y ~ N(0, V).

    Equals ``2 |a^d - 1| + C(d) |V^{-1/2} v|`` with C the mean norm of a
    standard d-dimensional Gaussian.
    """
    V = 0.5 * (q.V + q.V.T)
    if not np.allclose(V, q.V, rtol=1e-10, atol=1e-12):
        raise DecompositionError("covariance must be symmetric")
    w, U = np.linalg.eigh(V)
    if np.min(w) <= 0.0:
        raise DecompositionError(f"covariance not positive definite (min eig {w.min():g})")
    whitened = (U.T @ q.v) / np.sqrt(w)
    return 2.0 * abs(q.a ** q.d - 1.0) + gaussian_tv_constant(q.d) * float(
        np.linalg.norm(whitened))


def _density_crossings(a: float, v: float) -> list[float]:
    # Solutions of phi(x) = phi((x - v)/a) / a, i.e. a quadratic in x.
    c2 = 0.5 * (1.0 - 1.0 / (a * a))
    c1 = v / (a * a)
    c0 = -0.5 * v * v / (a * a) - np.log(a)
    if abs(c2) < 1e-14:
        if abs(c1) < 1e-14:
            return []
        return [-c0 / c1]
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc <= 0.0:
        return []
    r = np.sqrt(disc)
    return sorted([(-c1 - r) / (2.0 * c2), (-c1 + r) / (2.0 * c2)])


def gaussian_tv_exact_1d(a: float, v: float) -> float:
    """Exact TV between N(0,1) and N(v, a^2) by quadrature (tolerance 1e-8)."""
    if a <= 0.0:
        raise ValueError("scale a must be positive")
    if a == 1.0 and v == 0.0:
        return 0.0

    def diff(x):
        return np.abs(stats.norm.pdf(x) - stats.norm.pdf((x - v) / a) / a)

    edges = [-np.inf] + _density_crossings(a, v) + [np.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = quad(diff, lo, hi, epsabs=1e-10, epsrel=1e-10, limit=200)
        total += val
    return 0.5 * total


def gaussian_tv_crossing_form(a: float, v: float) -> float:
    """Independent closed form for the 1-d TV via CDF differences at crossings."""
    cdf1 = stats.norm.cdf
    cdf2 = lambda x: stats.norm.cdf((x - v) / a)
    edges = _density_crossings(a, v)
    pts = np.array([-np.inf] + edges + [np.inf])
    f1 = np.array([0.0 if p == -np.inf else 1.0 if p == np.inf else cdf1(p) for p in pts])
    f2 = np.array([0.0 if p == -np.inf else 1.0 if p == np.inf else cdf2(p) for p in pts])
    return 0.5 * float(np.sum(np.abs(np.diff(f1) - np.diff(f2))))


def _binomial_ci(k: int, n: int) -> tuple[float, float]:
    if k == 0:
        return 0.0, 3.0 / n  # rule of three
    p = k / n
    half = 1.96 * np.sqrt(p * (1.0 - p) / n)
    return max(0.0, p - half), min(1.0, p + half)


@dataclass
class HittingTailResult:
    t_marks: tuple
    probabilities: tuple
    ci: tuple  # pairs
    slope: Optional[float]
    envelope_slope: float
    passes: Optional[bool]
    n: int


def hitting_tail_mc(model: ModelSpec, level: float, x0: float,
                    t_marks: Sequence[float], n_paths: int, seed: int,
                    steps_per_unit: int = 64) -> HittingTailResult:
    """Empirical P(inf_{s in [t, T]} Y_s <= level) across a grid of start times.

    The comparison process Y runs the model volatility with constant drift b1
    out to T = 4 * max(t_marks); the fitted exponential decay rate of the
    probabilities is compared to -b1^2 sigma1^2 / (16 sigma2^4).
    """
    marks = sorted(float(t) for t in t_marks)
    if n_paths < 1 or not marks:
        raise ValueError("need paths and at least one mark")
    c = model.constants
    horizon = 4.0 * max(max(marks), 1e-9)
    m = max(1, int(np.ceil(horizon * steps_per_unit)))
    dt = horizon / m
    grid = np.linspace(0.0, horizon, m + 1)
    start_idx = [int(np.searchsorted(grid, tm - 1e-12)) for tm in marks]
    f = model.coefficients
    b1_dt = c.b1 * dt
    counts = np.zeros(len(marks), dtype=np.int64)

    block = max(64, min(16384, 2 ** 24 // (m + 1)))
    for start in range(0, n_paths, block):
        n = min(block, n_paths - start)
        db_t = np.ascontiguousarray(_rng.normal_block(seed, start, n, m).T)
        db_t *= np.sqrt(dt)
        y_t = np.empty((m + 1, n))
        y_t[0] = float(x0)
        for k in range(m):
            yk = y_t[k]
            ynext = y_t[k + 1]
            if f.sigma_const is not None:
                np.multiply(db_t[k], f.sigma_const, out=ynext)
            else:
                np.multiply(f.sigma(float(grid[k]), yk), db_t[k], out=ynext)
            ynext += yk
            ynext += b1_dt
        # Suffix minima over the time axis give inf over [t_mark, T] in one pass.
        suffix_min = np.minimum.accumulate(y_t[::-1], axis=0)[::-1]
        for j, k0 in enumerate(start_idx):
            counts[j] += int((suffix_min[k0] <= level).sum())

    probs = counts / n_paths
    cis = tuple(_binomial_ci(int(k), n_paths) for k in counts)
    envelope_slope = -c.b1 ** 2 * c.sigma1 ** 2 / (16.0 * c.sigma2 ** 4)
    usable = []
    for j, k in enumerate(counts):
        if k == 0:
            break
        usable.append(j)
    slope = passes = None
    if len(usable) >= 2:
        ts = np.array([marks[j] for j in usable])
        lp = np.log(probs[usable])
        slope = float(np.polyfit(ts, lp, 1)[0])
        passes = slope <= envelope_slope + 0.05
    return HittingTailResult(t_marks=tuple(marks), probabilities=tuple(probs),
                             ci=cis, slope=slope, envelope_slope=envelope_slope,
                             passes=passes, n=n_paths)


def inf_tail_eval(sigma2: float, b1: float, x: float, y: float) -> float:
    """Analytic envelope for P(inf_s Y_s < y): the constant-free bracket."""
    if x <= y:
        raise ValueError(f"need start x > level y, got x={x}, y={y}")
    gap = x - y
    return float(np.exp(-0.5 * gap * gap) / gap + np.exp(-b1 * gap / sigma2 ** 2))


def inf_tail_mc(sigma: float, b1: float, x: float, y: float, horizon: float,
                n_paths: int, seed: int, steps_per_unit: int = 64) -> tuple[float, tuple]:
    """Empirical P(inf_{s <= T} Y_s < y) for constant-volatility Y (exact paths)."""
    m = max(1, int(np.ceil(horizon * steps_per_unit)))
    dt = horizon / m
    count = 0
    block = max(64, min(16384, 2 ** 23 // (m + 1)))
    drift = b1 * dt
    for start in range(0, n_paths, block):
        n = min(block, n_paths - start)
        inc = _rng.normal_block(seed, start, n, m) * (sigma * np.sqrt(dt)) + drift
        paths = x + np.cumsum(inc, axis=1)
        count += int((np.minimum(paths.min(axis=1), x) < y).sum())
    return count / n_paths, _binomial_ci(count, n_paths)


@dataclass
class TimeTailResult:
    t_grid: tuple
    probabilities: tuple
    ci: tuple
    envelopes: tuple
    slope: Optional[float]
    envelope_slope: float
    n: int


def time_tail_mc(sigma2: float, b1: float, eps: float, x: float, y: float,
                 t_grid: Sequence[float], n_paths: int, seed: int) -> TimeTailResult:
    """Empirical P(Y_t <= y) against the envelope exp(-eps^2 t / (2 sigma2^2)).

    Y is the constant-volatility comparison process, so the marginal is exact
    Gaussian and no time stepping is needed.
    """
    if not 0.0 < eps < b1:
        raise ValueError(f"need eps in (0, b1) = (0, {b1}), got {eps}")
    ts = [float(t) for t in t_grid]
    for t in ts:
        if not (b1 - eps) * t > y - x:
            raise ValueError(
                f"precondition (b1 - eps) * t > y - x fails at t={t:g}: "
                f"{(b1 - eps) * t:g} <= {y - x:g}")
    xi = _rng.normal_block(seed, 0, n_paths, len(ts))
    probs, cis, envs = [], [], []
    for j, t in enumerate(ts):
        yt = x + b1 * t + sigma2 * np.sqrt(t) * xi[:, j]
        k = int((yt <= y).sum())
        probs.append(k / n_paths)
        cis.append(_binomial_ci(k, n_paths))
        envs.append(float(np.exp(-eps * eps * t / (2.0 * sigma2 ** 2))))
    pos = [j for j, p in enumerate(probs) if p > 0]
    slope = None
    if len(pos) >= 2:
        slope = float(np.polyfit([ts[j] for j in pos],
                                 np.log([probs[j] for j in pos]), 1)[0])
    return TimeTailResult(t_grid=tuple(ts), probabilities=tuple(probs),
                          ci=tuple(cis), envelopes=tuple(envs), slope=slope,
                          envelope_slope=-eps * eps / (2.0 * sigma2 ** 2),
                          n=n_paths)


_FUNCTIONALS = {
    "indicator_neg": (lambda x: (x <= 0.0).astype(float), 1.0),
    "exp_decay": (lambda x: np.exp(-np.maximum(x, 0.0)), 1.0),
}


@dataclass
class ExpFunctionalResult:
    f_kind: str
    drift: float
    coefficient: float
    threshold: float
    horizons: tuple
    means: tuple
    ci: tuple
    stabilized: bool


def exp_functional_mc(f_kind: str, a: float, c: float, x0: float,
                      horizons: Sequence[float], n_paths: int, seed: int,
                      dt: float = 1.0 / 64.0) -> ExpFunctionalResult:
    """Estimate E[exp(c * int_0^T f(x0 + B_s + a s) ds)] across horizons.

    Uses a defensive two-component importance-sampling mixture (nominal drift
    and drift zero) with exact Girsanov weights, self-normalized; the zero-drift
    component keeps the divergent regime c > a^2 / (2 sup f) visible at fixed
    sample sizes instead of saturating at the largest occupation a plain
    ensemble happens to contain.  The stabilization flag asks whether the last
    refinement moved the mean by less than twice the previous estimate's
    interval width (the usual convergence check: scaling the tolerance with
    the new, possibly exploding, interval would let divergence mask itself).
    """
    if c < 0.0:
        raise ValueError(f"coefficient c must be nonnegative, got {c}")
    if a <= 0.0:
        raise ValueError("drift a must be positive")
    try:
        f, sup_f = _FUNCTIONALS[f_kind]
    except KeyError:
        raise ValueError(f"unknown functional {f_kind!r}; "
                         f"choose from {sorted(_FUNCTIONALS)}") from None
    hs = [float(t) for t in horizons]
    if sorted(hs) != hs or len(hs) < 2:
        raise ValueError("horizons must be an ascending grid with >= 2 entries")

    n_half = n_paths // 2
    means, cis = [], []
    for ti, horizon in enumerate(hs):
        seed_t = _rng.derive_seed(seed, ti)
        m = max(1, int(round(horizon / dt)))
        vals = np.empty(n_paths)
        weights = np.empty(n_paths)
        block = max(64, min(16384, 2 ** 23 // (m + 1)))
        for stratum, drift in ((0, a), (1, 0.0)):
            n_str = n_half if stratum == 0 else n_paths - n_half
            for start in range(0, n_str, block):
                n = min(block, n_str - start)
                path0 = stratum * n_half + start
                inc = _rng.normal_block(seed_t, path0, n, m) * np.sqrt(dt) + drift * dt
                x = x0 + np.cumsum(inc, axis=1)
                occ = f(np.full(n, float(x0))) * dt
                occ += f(x[:, :-1]).sum(axis=1) * dt
                log_ratio = a * (x[:, -1] - x0) - 0.5 * a * a * horizon
                w = 2.0 * expit(log_ratio)
                weights[path0:path0 + n] = w
                vals[path0:path0 + n] = np.exp(np.minimum(c * occ, 700.0)) * w
        w_sum = float(weights.sum())
        mean = float(vals.sum()) / w_sum
        # Linearized SE of the self-normalized ratio.
        resid = vals - mean * weights
        se = float(np.sqrt((resid * resid).sum())) / w_sum
        means.append(mean)
        cis.append((mean - 1.96 * se, mean + 1.96 * se))

    w_prev = cis[-2][1] - cis[-2][0]
    stabilized = abs(means[-1] - means[-2]) <= 2.0 * w_prev
    return ExpFunctionalResult(
        f_kind=f_kind, drift=a, coefficient=c,
        threshold=a * a / (2.0 * sup_f),
        horizons=tuple(hs), means=tuple(means), ci=tuple(cis),
        stabilized=stabilized)


@dataclass
class InverseMomentResult:
    horizons: tuple
    estimates: tuple
    ci: tuple
    stabilized: bool
    gamma: float
    gamma_admissible_max: Optional[float]
    gamma_warning: bool


def inverse_moment_proxy(model: ModelSpec, gamma: float,
                         horizons: Sequence[float], n_paths: int, seed: int,
                         x0: float = 1.0,
                         steps_per_unit: int = 64) -> InverseMomentResult:
    """Estimate E[sup_{s <= T} (X_s - l)^-gamma] across doubling horizons.

    Finite-horizon proxy for the boundary inverse moment; requires a finite
    left boundary.  Outside the admissible exponent range (relaxed boundary
    route) a warning flag is set but the estimate is still computed.
    """
    if model.left_boundary is None:
        raise ValueError("inverse_moment_proxy needs a model with finite boundary")
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    gamma_max = model.sharp_rate_admissible_gamma()
    warning = gamma_max is not None and not (0.0 < gamma < gamma_max)

    hs = [float(t) for t in horizons]
    t_max = max(hs)
    m = int(np.ceil(t_max * steps_per_unit))
    cfg = SimConfig(horizon=t_max, n_steps=m, n_paths=n_paths, seed=seed, x0=x0)
    grid = np.linspace(0.0, t_max, m + 1)
    mark_idx = [int(np.searchsorted(grid, t - 1e-12)) for t in hs]
    l = model.left_boundary
    sums = np.zeros(len(hs))
    sqsums = np.zeros(len(hs))
    for blk in iter_path_blocks(model, cfg, want_y=False):
        running_min = np.minimum.accumulate(blk["x"], axis=1)
        for j, ki in enumerate(mark_idx):
            vals = (running_min[:, ki] - l) ** (-gamma)
            sums[j] += float(vals.sum())
            sqsums[j] += float((vals * vals).sum())
    estimates, cis = [], []
    for j in range(len(hs)):
        mean = sums[j] / n_paths
        var = max(sqsums[j] / n_paths - mean * mean, 0.0)
        half = 1.96 * np.sqrt(var / n_paths)
        estimates.append(mean)
        cis.append((mean - half, mean + half))
    w_prev = cis[-2][1] - cis[-2][0]
    stabilized = abs(estimates[-1] - estimates[-2]) <= 2.0 * w_prev
    return InverseMomentResult(horizons=tuple(hs), estimates=tuple(estimates),
                               ci=tuple(cis), stabilized=stabilized,
                               gamma=gamma, gamma_admissible_max=gamma_max,
                               gamma_warning=warning)


@dataclass
class InverseMomentYResult:
    t_grid: tuple
    estimates: tuple
    ci: tuple
    slope: float
    gamma: float


def inverse_moment_y_mc(sigma: float, b1: float, gamma: float, x0: float,
                        t_grid: Sequence[float], n_paths: int,
                        seed: int) -> InverseMomentYResult:
    """Estimate E[Y_t^-gamma 1_{Y_t >= 1}] and fit its decay exponent.

    Constant-volatility comparison process, so marginals are sampled exactly;
    the fitted log-log slope should approach -gamma.
    """
    ts = [float(t) for t in t_grid]
    if len(ts) < 3:
        raise ValueError("need at least 3 horizons for a decay fit")
    if min(ts) < 1.0:
        raise ValueError("t grid must lie in [1, inf)")
    xi = _rng.normal_block(seed, 0, n_paths, len(ts))
    estimates, cis, widths = [], [], []
    for j, t in enumerate(ts):
        yt = x0 + b1 * t + sigma * np.sqrt(t) * xi[:, j]
        vals = np.where(yt >= 1.0, yt, np.inf) ** (-gamma)
        mean = float(vals.mean())
        half = 1.96 * float(vals.std(ddof=1)) / np.sqrt(n_paths)
        estimates.append(mean)
        cis.append((mean - half, mean + half))
        widths.append(2.0 * half)
    fit = rate_fit(ts, estimates, widths)
    return InverseMomentYResult(t_grid=tuple(ts), estimates=tuple(estimates),
                                ci=tuple(cis), slope=fit.slope, gamma=gamma)
