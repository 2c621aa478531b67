"""Pathwise first-variation and Malliavin-derivative quantities.

Along each simulated path the running exponent of the flow derivative is

    Z_k = sum_{j<k} [ dsig_j dB_j + (db_j - dsig_j^2 / 2) dt ],

with ``dsig = d sigma/dy`` and ``db = d b/dy`` evaluated at the left node.
From it the module evaluates the derivative norm of the residual,

    |DS_t|^2 = sum_k ( e^{Z_M - Z_k} sigma(t_k, X_k) - sigma_inf(t_k) )^2 dt,

the pairing of DS_t against the direction t -> int sigma_inf, and the four
computable budget terms that dominate the normal-approximation error of the
scaled statistic.  All sums use left-endpoint (Ito) evaluation, matching the
Euler scheme.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .coefficients import ModelSpec
from .simulate import (
    ModelEvaluationError,
    PathEnsemble,
    ScaledSample,
    SimConfig,
    iter_path_blocks,
    scaled_statistic,
)

_EXP_CAP = 700.0


class MalliavinOverflowError(FloatingPointError):
    """exp(Z_t - Z_s) overflowed; the derivative condition is likely violated."""


def _z_from_block(x: np.ndarray, db: np.ndarray, model: ModelSpec,
                  grid: np.ndarray, dt: float) -> np.ndarray:
    f = model.coefficients
    n, m = db.shape
    z_t = np.empty((m + 1, n))
    z_t[0] = 0.0
    for k in range(m):
        t_k = float(grid[k])
        xk = x[:, k]
        dsig = f.d_sigma_dy(t_k, xk)
        dbk = f.d_b_dy(t_k, xk)
        if not (np.all(np.isfinite(dsig)) and np.all(np.isfinite(dbk))):
            bad = ~(np.isfinite(dsig) & np.isfinite(dbk))
            i = int(np.argmax(bad))
            raise ModelEvaluationError(
                f"non-finite derivative at t={t_k:.6g}, y={xk[i]:.6g}")
        znext = z_t[k + 1]
        np.multiply(dsig, db[:, k], out=znext)
        znext += z_t[k]
        znext += (dbk - 0.5 * dsig * dsig) * dt
    return z_t.T


def first_variation_exponent(ens: PathEnsemble, model: ModelSpec) -> np.ndarray:
    """Running exponent of the flow derivative, one row per path."""
    return _z_from_block(ens.x_paths, ens.brownian_increments, model,
                         ens.grid, ens.dt)


def _sigma_on_block(model: ModelSpec, x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    f = model.coefficients
    m = grid.size - 1
    if f.sigma_const is not None:
        return np.full((x.shape[0], m), f.sigma_const)
    out = np.empty((m, x.shape[0]))
    for k in range(m):
        out[k] = f.sigma(float(grid[k]), x[:, k])
    return out.T


def _drift_on_block(model: ModelSpec, x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    f = model.coefficients
    m = grid.size - 1
    if f.drift_const is not None:
        return np.full((x.shape[0], m), f.drift_const)
    out = np.empty((m, x.shape[0]))
    for k in range(m):
        out[k] = f.drift_b(float(grid[k]), x[:, k])
    return out.T


def _sigma_inf_vec(model: ModelSpec, grid: np.ndarray) -> np.ndarray:
    prof = model.limits
    if prof.time_constant:
        return np.full(grid.size - 1, float(prof.sigma_inf(0.0)))
    return np.array([prof.sigma_inf(float(s)) for s in grid[:-1]])


def _dsq_pairing_block(z: np.ndarray, sig: np.ndarray, sig_inf: np.ndarray,
                       dt: float, on_overflow: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    expo = z[:, -1][:, None] - z[:, :-1]
    over = np.any(expo > _EXP_CAP, axis=1)
    if over.any() and on_overflow == "raise":
        raise MalliavinOverflowError(
            f"{int(over.sum())} paths exceeded exponent {_EXP_CAP:g}")
    growth = np.exp(np.minimum(expo, _EXP_CAP)) * sig - sig_inf
    dsq = np.sum(growth * growth, axis=1) * dt
    pairing = np.sum(sig_inf * growth, axis=1) * dt
    if over.any():
        dsq[over] = np.nan
        pairing[over] = np.nan
    return dsq, pairing, over


def derivative_norm_sq(ens: PathEnsemble, model: ModelSpec,
                       z: Optional[np.ndarray] = None,
                       on_overflow: str = "raise") -> np.ndarray:
    """Per-path ``|DS_t|^2``; overflowing paths raise or come back as NaN."""
    if z is None:
        z = first_variation_exponent(ens, model)
    sig = _sigma_on_block(model, ens.x_paths, ens.grid)
    sig_inf = _sigma_inf_vec(model, ens.grid)
    dsq, _, _ = _dsq_pairing_block(z, sig, sig_inf, ens.dt, on_overflow)
    return dsq


def stein_pairing(ens: PathEnsemble, model: ModelSpec,
                  z: Optional[np.ndarray] = None,
                  on_overflow: str = "raise") -> np.ndarray:
    """Per-path pairing of DS_t with the limit-volatility direction."""
    if z is None:
        z = first_variation_exponent(ens, model)
    sig = _sigma_on_block(model, ens.x_paths, ens.grid)
    sig_inf = _sigma_inf_vec(model, ens.grid)
    _, pairing, _ = _dsq_pairing_block(z, sig, sig_inf, ens.dt, on_overflow)
    return pairing


@dataclass
class MalliavinPathRecord:
    """Per-path Malliavin quantities at one horizon."""

    horizon: float
    z_traj: np.ndarray
    ds_norm_sq: np.ndarray
    pairing: np.ndarray
    r_term: np.ndarray
    s_martingale: np.ndarray
    s_drift: np.ndarray
    overflow: np.ndarray


def malliavin_record(ens: PathEnsemble, model: ModelSpec,
                     on_overflow: str = "raise") -> MalliavinPathRecord:
    z = first_variation_exponent(ens, model)
    sig = _sigma_on_block(model, ens.x_paths, ens.grid)
    sig_inf = _sigma_inf_vec(model, ens.grid)
    dsq, pairing, over = _dsq_pairing_block(z, sig, sig_inf, ens.dt, on_overflow)
    prof = model.limits
    if prof.time_constant:
        b_inf = np.full(ens.n_steps, float(prof.b_inf(0.0)))
    else:
        b_inf = np.array([prof.b_inf(float(s)) for s in ens.grid[:-1]])
    b_vals = _drift_on_block(model, ens.x_paths, ens.grid)
    s_mart = np.sum((sig - sig_inf) * ens.brownian_increments, axis=1)
    s_drift = np.sum(b_vals - b_inf, axis=1) * ens.dt
    sigma_bar = float(prof.sigma_bar(ens.horizon))
    return MalliavinPathRecord(
        horizon=ens.horizon, z_traj=z, ds_norm_sq=dsq, pairing=pairing,
        r_term=(s_mart + s_drift) / sigma_bar,
        s_martingale=s_mart, s_drift=s_drift, overflow=over)


def _mean_ci(values: np.ndarray) -> tuple[float, float, float]:
    mean = float(values.mean())
    half = 1.96 * float(values.std(ddof=1)) / np.sqrt(values.size) if values.size > 1 else 0.0
    return mean, mean - half, mean + half


@dataclass
class SteinBudget:
    """The four computable error-budget terms, each with a 95% interval."""

    horizon: float
    n: int
    pairing_term: tuple  # (value, lo, hi): mean |pairing| / (t * sigma_bar)
    df_norm_term: tuple  # mean of 2 + 2 dsq / (sigma1^2 t)
    mean_stat_term: tuple  # |mean F_t| * sqrt(t)
    residual_mean: tuple
    residual_var: tuple
    overflow_paths: int = 0


def _budget_from_arrays(t: float, model: ModelSpec, dsq: np.ndarray,
                        pairing: np.ndarray, r: np.ndarray, f_vals: np.ndarray,
                        overflow: np.ndarray) -> SteinBudget:
    ok = ~overflow
    sigma_bar = float(model.limits.sigma_bar(t))
    sigma1 = model.constants.sigma1
    a = _mean_ci(np.abs(pairing[ok]) / (t * sigma_bar))
    b = _mean_ci(2.0 + (2.0 / (sigma1 ** 2 * t)) * dsq[ok])
    mean_f, lo_f, hi_f = _mean_ci(f_vals)
    half = (hi_f - lo_f) / 2.0
    c = (abs(mean_f) * np.sqrt(t),
         max(0.0, abs(mean_f) - half) * np.sqrt(t),
         (abs(mean_f) + half) * np.sqrt(t))
    d_mean = _mean_ci(r[ok])
    var = float(r[ok].var(ddof=1)) if ok.sum() > 1 else 0.0
    rel = 1.96 * np.sqrt(2.0 / max(ok.sum() - 1, 1))
    d_var = (var, var * (1.0 - rel), var * (1.0 + rel))
    return SteinBudget(horizon=t, n=int(ok.sum()), pairing_term=a,
                       df_norm_term=b, mean_stat_term=c,
                       residual_mean=d_mean, residual_var=d_var,
                       overflow_paths=int(overflow.sum()))


def stein_budget(ens: PathEnsemble, model: ModelSpec) -> SteinBudget:
    """Budget report from a materialized ensemble (overflow paths are masked)."""
    if ens.horizon < 1.0:
        raise ValueError("budget terms are defined for t >= 1")
    rec = malliavin_record(ens, model, on_overflow="mask")
    sample = scaled_statistic(ens, model)
    return _budget_from_arrays(ens.horizon, model, rec.ds_norm_sq, rec.pairing,
                               rec.r_term, sample.f_values, rec.overflow)


@dataclass
class MalliavinHorizonStats:
    """Streaming per-horizon reduction used by the regime experiments."""

    horizon: float
    n: int
    mean_ds_norm_sq: tuple
    mean_abs_pairing: tuple
    budget: SteinBudget
    scaled: ScaledSample


def horizon_malliavin(model: ModelSpec, cfg: SimConfig,
                      block_paths: Optional[int] = None) -> MalliavinHorizonStats:
    """Simulate and reduce the Malliavin quantities in constant memory."""
    t = cfg.horizon
    prof = model.limits
    sigma_bar = float(prof.sigma_bar(t))
    b_bar = float(prof.b_bar(t))
    n = cfg.n_paths
    dsq = np.empty(n)
    pairing = np.empty(n)
    r = np.empty(n)
    x_term = np.empty(n)
    g_raw = np.empty(n)
    over = np.zeros(n, dtype=bool)
    sig_inf = None
    b_inf = None
    for blk in iter_path_blocks(model, cfg, want_y=False, block_paths=block_paths):
        s, x, db, grid = blk["start"], blk["x"], blk["db"], blk["grid"]
        nb = x.shape[0]
        if sig_inf is None:
            sig_inf = _sigma_inf_vec(model, grid)
            if prof.time_constant:
                b_inf = np.full(grid.size - 1, float(prof.b_inf(0.0)))
            else:
                b_inf = np.array([prof.b_inf(float(u)) for u in grid[:-1]])
        z = _z_from_block(x, db, model, grid, cfg.dt)
        sig = _sigma_on_block(model, x, grid)
        d, p, o = _dsq_pairing_block(z, sig, sig_inf, cfg.dt, "mask")
        dsq[s:s + nb], pairing[s:s + nb], over[s:s + nb] = d, p, o
        b_vals = _drift_on_block(model, x, grid)
        s_mart = np.sum((sig - sig_inf) * db, axis=1)
        s_drift = np.sum(b_vals - b_inf, axis=1) * cfg.dt
        r[s:s + nb] = (s_mart + s_drift) / sigma_bar
        x_term[s:s + nb] = x[:, -1]
        g_raw[s:s + nb] = db @ sig_inf
    denom = sigma_bar * np.sqrt(t)
    f_vals = (x_term - cfg.x0 - t * b_bar) / denom
    sample = ScaledSample(horizon=t, f_values=f_vals, g_values=g_raw / denom,
                          x_terminal=x_term)
    ok = ~over
    budget = _budget_from_arrays(t, model, dsq, pairing, r, f_vals, over)
    return MalliavinHorizonStats(
        horizon=t, n=int(ok.sum()),
        mean_ds_norm_sq=_mean_ci(dsq[ok]),
        mean_abs_pairing=_mean_ci(np.abs(pairing[ok])),
        budget=budget, scaled=sample)
