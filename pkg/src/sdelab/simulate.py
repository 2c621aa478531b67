"""Euler discretization of the diffusion and its comparison process.

The main process follows ``dX = sigma(t, X) dB + b(t, X) dt``; the comparison
process shares every Brownian increment but runs the constant drift ``b1``.
The centered and scaled terminal statistic

    F_t = (X_t - x0 - t * b_bar(t)) / (sigma_bar(t) * sqrt(t))

is returned together with its coupled Gaussian reference
``G_t = (sigma_bar(t) sqrt(t))^-1 * sum sigma_inf(t_k) dB_k``, which has the
standard normal law by construction.

Paths are simulated in fixed-size blocks; every path draws from its own
counter-based stream keyed by ``(seed, path index)``, so results are identical
for any block size, thread count, or process layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

from .coefficients import ModelSpec
from . import rng as _rng

MAX_DT = 2.0 ** -6
_MAX_ENSEMBLE_ELEMENTS = 120_000_000  # per-array cap for materialized ensembles
_BLOCK_ELEMENTS = 2 ** 25


class ModelEvaluationError(ValueError):
    """A coefficient evaluated to a non-finite value."""


class BoundaryInstabilityError(RuntimeError):
    """Too many boundary interventions; decrease the step size."""


class DegenerateScalingError(ValueError):
    """sigma_bar(t) vanished; the limit profile is invalid."""


@dataclass(frozen=True)
class SimConfig:
    """Discretization request: horizon, resolution, ensemble size, stream seed."""

    horizon: float
    n_steps: int
    n_paths: int
    seed: int
    x0: float
    boundary_floor: Optional[float] = None
    scheme: str = "euler_substep"

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 1 or self.n_paths < 1:
            raise ValueError("n_steps and n_paths must be positive integers")
        if self.dt > MAX_DT + 1e-15:
            raise ValueError(
                f"dt = horizon/n_steps = {self.dt:g} exceeds the cap {MAX_DT:g}; "
                "increase n_steps")
        if self.scheme not in ("euler", "euler_substep"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def floor_for(self, model: ModelSpec) -> Optional[float]:
        l = model.left_boundary
        if l is None:
            return None
        eps = self.boundary_floor
        if eps is None:
            eps = 1e-6 * max(1.0, self.x0 - l)
        if self.x0 <= l + eps:
            raise ValueError(f"x0 = {self.x0} must exceed l + floor = {l + eps}")
        return eps


@dataclass
class PathEnsemble:
    """Discretized trajectories of (X, Y) on a shared grid with shared noise."""

    grid: np.ndarray
    x_paths: np.ndarray
    y_paths: np.ndarray
    brownian_increments: np.ndarray
    boundary_interventions: np.ndarray
    horizon: float
    seed: int
    x0: float
    model_name: str = ""

    @property
    def n_paths(self) -> int:
        return self.x_paths.shape[0]

    @property
    def n_steps(self) -> int:
        return self.brownian_increments.shape[1]

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def comparison_violation_fraction(self, model: ModelSpec) -> float:
        """Fraction of grid nodes where Y exceeds X beyond discretization slack."""
        slack = 3.0 * model.constants.sigma2 * np.sqrt(self.dt)
        bad = self.x_paths < self.y_paths - slack
        return float(bad.mean())

    def export_csv(self, path) -> None:
        """Columnar dump, path-major rows: path, step, time, x, y, db."""
        n, m = self.n_paths, self.n_steps
        with open(path, "w") as fh:
            fh.write("path,step,time,x,y,db\n")
            for i in range(n):
                for k in range(m + 1):
                    db = f"{self.brownian_increments[i, k]:.10g}" if k < m else ""
                    fh.write(f"{i},{k},{self.grid[k]:.10g},"
                             f"{self.x_paths[i, k]:.10g},"
                             f"{self.y_paths[i, k]:.10g},{db}\n")

    def export_npz(self, path) -> None:
        np.savez_compressed(
            path, grid=self.grid, x=self.x_paths, y=self.y_paths,
            db=self.brownian_increments,
            interventions=self.boundary_interventions)


@dataclass
class ScaledSample:
    """Ensemble of scaled statistics at one horizon plus the Gaussian reference."""

    horizon: float
    f_values: np.ndarray
    g_values: np.ndarray
    x_terminal: np.ndarray

    @property
    def n(self) -> int:
        return self.f_values.size

    def validate(self) -> None:
        """Exact-law sanity of the reference (meaningful for n >= 1e4)."""
        if self.n < 10_000:
            return
        mean = float(self.g_values.mean())
        var = float(self.g_values.var())
        if abs(mean) > 4.0 / np.sqrt(self.n):
            raise AssertionError(f"reference mean {mean:g} outside 4/sqrt(n) band")
        if not 0.9 <= var <= 1.1:
            raise AssertionError(f"reference variance {var:g} outside [0.9, 1.1]")


def _refine_increments(incs: np.ndarray, sub_dt: float,
                       gen: np.random.Generator) -> np.ndarray:
    """Split each Brownian increment in two by a bridge draw (nested refinement)."""
    xi = gen.standard_normal(incs.size)
    first = 0.5 * incs + 0.5 * np.sqrt(sub_dt) * xi
    out = np.empty(2 * incs.size)
    out[0::2] = first
    out[1::2] = incs - first
    return out


def _substep(model: ModelSpec, x_start: float, t_start: float, dt: float,
             db: float, floor_value: float, gen: np.random.Generator,
             max_halvings: int = 20) -> tuple[float, int]:
    """Retry one boundary-violating step on successively halved sub-grids.

    Returns the end state and the number of interventions (0, or 1 when even
    the finest sub-grid had to be clamped at the floor).
    """
    f = model.coefficients
    incs = np.array([db])
    sub_dt = dt
    for _ in range(max_halvings):
        incs = _refine_increments(incs, sub_dt, gen)
        sub_dt *= 0.5
        x = x_start
        ok = True
        for j, inc in enumerate(incs):
            t_j = t_start + j * sub_dt
            sig = float(f.sigma(t_j, np.array([x]))[0])
            b = float(f.drift_b(t_j, np.array([x]))[0])
            if not (np.isfinite(sig) and np.isfinite(b)):
                raise ModelEvaluationError(
                    f"non-finite coefficient at t={t_j:.6g}, y={x:.6g}")
            x = x + sig * inc + b * sub_dt
            if x <= floor_value:
                ok = False
                break
        if ok:
            return x, 0
    # Finest level: clamp whatever still violates.
    x = x_start
    for j, inc in enumerate(incs):
        t_j = t_start + j * sub_dt
        sig = float(f.sigma(t_j, np.array([x]))[0])
        b = float(f.drift_b(t_j, np.array([x]))[0])
        x = x + sig * inc + b * sub_dt
        if x <= floor_value:
            x = floor_value
    return x, 1


def _block_size(n_steps: int, override: Optional[int]) -> int:
    if override is not None:
        return max(1, override)
    return max(64, min(16384, _BLOCK_ELEMENTS // (n_steps + 1)))


def _locate_and_raise(model: ModelSpec, x_t: np.ndarray, grid: np.ndarray,
                      upto: int) -> None:
    """Find the first non-finite update and name the coefficient evaluation."""
    f = model.coefficients
    for k in range(upto):
        col = x_t[k + 1]
        bad = ~np.isfinite(col)
        if bad.any():
            i = int(np.argmax(bad))
            t_k, y_val = float(grid[k]), float(x_t[k, i])
            sig = float(np.asarray(f.sigma(t_k, np.array([y_val])))[0])
            b = float(np.asarray(f.drift_b(t_k, np.array([y_val])))[0])
            if not (np.isfinite(sig) and np.isfinite(b)):
                raise ModelEvaluationError(
                    f"non-finite coefficient at t={t_k:.6g}, y={y_val:.6g}: "
                    f"sigma={sig!r}, b={b!r}")
            raise ModelEvaluationError(
                f"non-finite state update at t={t_k:.6g}, y={y_val:.6g}")
    raise ModelEvaluationError("non-finite state detected")


_FINITE_CHECK_EVERY = 256


def iter_path_blocks(model: ModelSpec, cfg: SimConfig, *, want_y: bool = True,
                     block_paths: Optional[int] = None) -> Iterator[dict]:
    """Simulate the ensemble block by block, yielding full in-block trajectories.

    Yields dicts with keys ``start``, ``x`` (block, M+1), ``db`` (block, M),
    ``interventions`` (block,), and ``y`` when requested.  Per-path streams
    make the results independent of the block size.  Trajectories are stored
    time-major internally (contiguous step updates) and handed out as
    transposed views.
    """
    f = model.coefficients
    l = model.left_boundary
    floor_eps = cfg.floor_for(model)
    floor_value = (l + floor_eps) if l is not None else None
    clamp_only = cfg.scheme == "euler"
    dt = cfg.dt
    m = cfg.n_steps
    grid = np.linspace(0.0, cfg.horizon, m + 1)
    b1 = model.constants.b1
    b1_dt = b1 * dt
    block = _block_size(m, block_paths)
    sig_const = f.sigma_const
    b_const = f.drift_const
    b_const_dt = b_const * dt if b_const is not None else None

    for start in range(0, cfg.n_paths, block):
        n = min(block, cfg.n_paths - start)
        db_t = np.ascontiguousarray(_rng.normal_block(cfg.seed, start, n, m).T)
        db_t *= np.sqrt(dt)
        x_t = np.empty((m + 1, n))
        x_t[0] = cfg.x0
        y_t = None
        if want_y:
            y_t = np.empty((m + 1, n))
            y_t[0] = cfg.x0
        interventions = np.zeros(n, dtype=np.int64)
        refine_gens: dict[int, np.random.Generator] = {}
        tmp = np.empty(n)

        for k in range(m):
            t_k = float(grid[k])
            xk = x_t[k]
            dbk = db_t[k]
            prop = x_t[k + 1]
            if sig_const is not None:
                np.multiply(dbk, sig_const, out=prop)
            else:
                np.multiply(f.sigma(t_k, xk), dbk, out=prop)
            prop += xk
            if b_const is not None:
                prop += b_const_dt
            else:
                np.multiply(f.drift_b(t_k, xk), dt, out=tmp)
                prop += tmp

            mn = float(prop.min())
            healthy = mn > floor_value if floor_value is not None \
                else not np.isnan(mn)
            if not healthy:
                if not np.all(np.isfinite(prop)):
                    _locate_and_raise(model, x_t, grid, k + 1)
                viol = np.flatnonzero(prop <= floor_value)
                for i in viol:
                    if clamp_only:
                        prop[i] = floor_value
                        interventions[i] += 1
                    else:
                        gen = refine_gens.get(int(i))
                        if gen is None:
                            gen = _rng.refinement_generator(cfg.seed, start + int(i))
                            refine_gens[int(i)] = gen
                        prop[i], hit = _substep(model, float(xk[i]), t_k, dt,
                                                float(dbk[i]), floor_value, gen)
                        interventions[i] += hit
            elif (k + 1) % _FINITE_CHECK_EVERY == 0 and not np.all(np.isfinite(prop)):
                _locate_and_raise(model, x_t, grid, k + 1)

            if want_y:
                yk = y_t[k]
                ynext = y_t[k + 1]
                if sig_const is not None:
                    np.multiply(dbk, sig_const, out=ynext)
                else:
                    np.multiply(f.sigma(t_k, yk), dbk, out=ynext)
                ynext += yk
                ynext += b1_dt

        if not np.all(np.isfinite(x_t[m])):
            _locate_and_raise(model, x_t, grid, m)

        out = {"start": start, "grid": grid, "x": x_t.T, "db": db_t.T,
               "interventions": interventions}
        if want_y:
            out["y"] = y_t.T
        yield out


def simulate_ensemble(model: ModelSpec, cfg: SimConfig, *,
                      block_paths: Optional[int] = None) -> PathEnsemble:
    """Materialize the full ensemble.

    Intended for moderate sizes (trajectory analysis, exports, tests); large
    distance experiments should use :func:`simulate_scaled_sample`, which
    streams in constant memory.
    """
    elements = cfg.n_paths * (cfg.n_steps + 1)
    if elements > _MAX_ENSEMBLE_ELEMENTS:
        raise MemoryError(
            f"ensemble of {elements} nodes exceeds the materialization cap; "
            "use simulate_scaled_sample / streaming reductions instead")
    m = cfg.n_steps
    grid = np.linspace(0.0, cfg.horizon, m + 1)
    x = np.empty((cfg.n_paths, m + 1))
    y = np.empty((cfg.n_paths, m + 1))
    db = np.empty((cfg.n_paths, m))
    interventions = np.zeros(cfg.n_paths, dtype=np.int64)
    for blk in iter_path_blocks(model, cfg, want_y=True, block_paths=block_paths):
        s = blk["start"]
        n = blk["x"].shape[0]
        x[s:s + n] = blk["x"]
        y[s:s + n] = blk["y"]
        db[s:s + n] = blk["db"]
        interventions[s:s + n] = blk["interventions"]
    rate = float(interventions.sum()) / (cfg.n_paths * m)
    if rate > 0.01:
        raise BoundaryInstabilityError(
            f"boundary interventions on {rate:.2%} of steps (> 1%); "
            "decrease dt or raise the floor")
    return PathEnsemble(grid=grid, x_paths=x, y_paths=y, brownian_increments=db,
                        boundary_interventions=interventions,
                        horizon=cfg.horizon, seed=cfg.seed, x0=cfg.x0,
                        model_name=model.name)


def _scaling(model: ModelSpec, t: float) -> tuple[float, float]:
    sigma_bar = float(model.limits.sigma_bar(t))
    b_bar = float(model.limits.b_bar(t))
    if not sigma_bar > 0.0:
        raise DegenerateScalingError(
            f"sigma_bar({t:g}) = {sigma_bar:g}; limit profile is degenerate")
    return sigma_bar, b_bar


def _sigma_inf_on_grid(model: ModelSpec, grid: np.ndarray) -> np.ndarray:
    prof = model.limits
    if prof.time_constant:
        return np.full(grid.size - 1, float(prof.sigma_inf(0.0)))
    return np.array([prof.sigma_inf(float(s)) for s in grid[:-1]])


def scaled_statistic(ens: PathEnsemble, model: ModelSpec) -> ScaledSample:
    """Centered-scaled terminal statistic and its coupled Gaussian reference."""
    t = ens.horizon
    sigma_bar, b_bar = _scaling(model, t)
    denom = sigma_bar * np.sqrt(t)
    f_values = (ens.x_paths[:, -1] - ens.x0 - t * b_bar) / denom
    g_values = ens.brownian_increments @ _sigma_inf_on_grid(model, ens.grid) / denom
    sample = ScaledSample(horizon=t, f_values=f_values, g_values=g_values,
                          x_terminal=ens.x_paths[:, -1].copy())
    sample.validate()
    return sample


def simulate_scaled_sample(model: ModelSpec, cfg: SimConfig, *,
                           block_paths: Optional[int] = None) -> ScaledSample:
    """Streaming version of ``scaled_statistic(simulate_ensemble(...))``.

    Only terminal values and the Gaussian reference are kept, so memory stays
    O(n_paths) for any horizon.  Identical stream keying makes the result
    bit-compatible with the materialized route.
    """
    t = cfg.horizon
    sigma_bar, b_bar = _scaling(model, t)
    denom = sigma_bar * np.sqrt(t)
    x_term = np.empty(cfg.n_paths)
    g_raw = np.empty(cfg.n_paths)
    total_interventions = 0
    sig_vec = None
    for blk in iter_path_blocks(model, cfg, want_y=False, block_paths=block_paths):
        s = blk["start"]
        n = blk["x"].shape[0]
        if sig_vec is None:
            sig_vec = _sigma_inf_on_grid(model, blk["grid"])
        x_term[s:s + n] = blk["x"][:, -1]
        g_raw[s:s + n] = blk["db"] @ sig_vec
        total_interventions += int(blk["interventions"].sum())
    rate = total_interventions / (cfg.n_paths * cfg.n_steps)
    if rate > 0.01:
        raise BoundaryInstabilityError(
            f"boundary interventions on {rate:.2%} of steps (> 1%); "
            "decrease dt or raise the floor")
    sample = ScaledSample(horizon=t,
                          f_values=(x_term - cfg.x0 - t * b_bar) / denom,
                          g_values=g_raw / denom, x_terminal=x_term)
    sample.validate()
    return sample


@dataclass
class LlnResidual:
    residuals: np.ndarray
    mean: float
    sd: float


def lln_residual(sample: Union[PathEnsemble, ScaledSample],
                 model: ModelSpec) -> LlnResidual:
    """Per-path ``X_t / t - b_bar(t)`` with ensemble mean and deviation."""
    if isinstance(sample, PathEnsemble):
        t, x_term = sample.horizon, sample.x_paths[:, -1]
    else:
        t, x_term = sample.horizon, sample.x_terminal
    if t < 1.0:
        raise ValueError(f"law-of-large-numbers residual needs t >= 1, got {t:g}")
    _, b_bar = _scaling(model, t)
    res = x_term / t - b_bar
    return LlnResidual(residuals=res, mean=float(res.mean()),
                       sd=float(res.std(ddof=1)) if res.size > 1 else 0.0)


class MomentOverflowError(FloatingPointError):
    """|f - g|^p overflowed; use a smaller moment order."""


def clt_residual_moment(sample: Union[PathEnsemble, ScaledSample],
                        model: ModelSpec, p: float) -> float:
    """Coupled residual moment ``E[|F_t - G_t|^p]^(1/p)`` on shared noise."""
    if not 1.0 <= p <= 8.0:
        raise ValueError(f"moment order must lie in [1, 8], got {p}")
    if isinstance(sample, PathEnsemble):
        sample = scaled_statistic(sample, model)
    diff = np.abs(sample.f_values - sample.g_values)
    with np.errstate(over="raise"):
        try:
            powered = diff ** p
        except FloatingPointError as exc:
            raise MomentOverflowError(
                f"|f - g|^{p} overflowed; use a smaller p") from exc
    if not np.all(np.isfinite(powered)):
        raise MomentOverflowError(f"|f - g|^{p} overflowed; use a smaller p")
    return float(powered.mean() ** (1.0 / p))
