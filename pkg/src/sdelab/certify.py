"""Numerical certification of the assumption clauses a model claims.

The certifier probes the coefficient fields on a grid, measures bounds and
decay exponents, minimizes the joint derivative condition over an exponent
grid, and returns per-clause verdicts with margins.  Strict-inequality
clauses pass only with slack at least 1e-9; two-sided bound clauses allow
floating-point slack at equality.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import ModelSpec
from .models import Q_SEARCH_GRID


class InsufficientProbeError(ValueError):
    """Probe grid too small for a meaningful certificate."""


@dataclass(frozen=True)
class ProbeGrid:
    """Log-spaced state probe with a small time grid."""

    y_min: float
    y_max: float = 1e6
    n_y: int = 600
    t_max: float = 16.0
    n_t: int = 4

    @staticmethod
    def for_model(model: ModelSpec, y_max: float = 1e6) -> "ProbeGrid":
        l = model.left_boundary
        y_min = (l + 1e-3) if l is not None else 1e-3
        return ProbeGrid(y_min=y_min, y_max=y_max)

    def nodes(self, model: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
        if self.n_y * self.n_t < 100:
            raise InsufficientProbeError(
                f"probe has {self.n_y * self.n_t} nodes; need at least 100")
        l = model.left_boundary if model.left_boundary is not None else 0.0
        ys = l + np.geomspace(self.y_min - l, self.y_max - l, self.n_y)
        if model.left_boundary is None:
            # Unbounded state space: probe the negative axis as well.
            ys = np.concatenate([-np.geomspace(1e-3, 100.0, self.n_y // 4)[::-1], ys])
        ts = np.linspace(0.0, self.t_max, self.n_t)
        return ts, ys

    def describe(self) -> str:
        return (f"y in [{self.y_min:g}, {self.y_max:g}] log-spaced x{self.n_y}, "
                f"t in [0, {self.t_max:g}] x{self.n_t}")


@dataclass(frozen=True)
class ClauseCheck:
    clause: str
    measured: float
    required: float
    margin: float
    verdict: str
    strict: bool = False


@dataclass
class AssumptionReport:
    grid: str
    sigma_min: float
    sigma_max: float
    alpha_hat: Optional[float]
    sigma3_hat: Optional[float]
    beta_hat: Optional[float]
    b3_hat: Optional[float]
    stein_q: Optional[float]
    stein_condition_margin: float
    boundary_margins: dict = field(default_factory=dict)
    clauses: list = field(default_factory=list)

    def verdict(self, clause: str) -> str:
        for c in self.clauses:
            if c.clause == clause:
                return c.verdict
        raise KeyError(clause)

    @property
    def all_pass(self) -> bool:
        return all(c.verdict == "pass" for c in self.clauses)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["clause", "measured", "required", "margin", "verdict"])
            for c in self.clauses:
                writer.writerow([c.clause, f"{c.measured:.10g}",
                                 f"{c.required:.10g}", f"{c.margin:.10g}", c.verdict])


_SLACK = 1e-9


def _clause(name: str, measured: float, required: float, margin: float,
            strict: bool = False) -> ClauseCheck:
    ok = margin > _SLACK if strict else margin >= -_SLACK
    return ClauseCheck(name, float(measured), float(required), float(margin),
                       "pass" if ok else "fail", strict)


def _sup_over_t(fn, ts: np.ndarray, ys: np.ndarray) -> np.ndarray:
    vals = np.stack([np.abs(fn(float(t), ys)) for t in ts])
    return vals.max(axis=0)


def _decay_fit(ys: np.ndarray, sup_vals: np.ndarray) -> tuple[Optional[float], Optional[float]]:
    mask = (ys >= 10.0) & (sup_vals > 1e-300)
    if mask.sum() < 10:
        return None, None
    slope, intercept = np.polyfit(np.log(ys[mask]), np.log(sup_vals[mask]), 1)
    return float(-slope - 1.0), float(np.exp(intercept))


def certify_assumptions(model: ModelSpec, probe: Optional[ProbeGrid] = None) -> AssumptionReport:
    """Measure every assumption clause of ``model`` on a probe grid."""
    if probe is None:
        probe = ProbeGrid.for_model(model)
    ts, ys = probe.nodes(model)
    c = model.constants
    f = model.coefficients
    clauses: list[ClauseCheck] = []

    sig_vals = np.stack([f.sigma(float(t), ys) for t in ts])
    sigma_min, sigma_max = float(sig_vals.min()), float(sig_vals.max())
    clauses.append(_clause("sigma_bounds", sigma_min, c.sigma1,
                           min(sigma_min - c.sigma1, c.sigma2 - sigma_max)))

    # Decay of the volatility derivative: sup_t |dsigma| * (y v 1)^(alpha+1) <= sigma3.
    dsig_sup = _sup_over_t(f.d_sigma_dy, ts, ys)
    weighted = dsig_sup * np.maximum(ys, 1.0) ** (c.alpha + 1.0)
    clauses.append(_clause("sigma_decay", float(weighted.max()), c.sigma3,
                           c.sigma3 - float(weighted.max())))

    # Drift bounds: lower bound global, upper bound away from a finite boundary.
    b_vals = np.stack([f.drift_b(float(t), ys) for t in ts])
    b_lower = float(b_vals.min())
    l0 = max(model.left_boundary, 0.0) if model.left_boundary is not None else 0.0
    interior = ys >= l0 + 1.0 if model.left_boundary is not None \
        else np.ones_like(ys, dtype=bool)
    b_upper = float(b_vals[:, interior].max()) if interior.any() else b_lower
    clauses.append(_clause("b_bounds", b_lower, c.b1,
                           min(b_lower - c.b1, c.b2 - b_upper)))

    db_sup = _sup_over_t(f.d_b_dy, ts, ys)
    tail = ys >= l0 + 1.0
    weighted_b = db_sup[tail] * ys[tail] ** (c.beta + 1.0)
    clauses.append(_clause("b_decay", float(weighted_b.max()), c.b3,
                           c.b3 - float(weighted_b.max())))

    # Joint derivative condition, minimized over the exponent grid.
    dsig0 = np.stack([f.d_sigma_dy(float(t), ys) for t in ts])
    db0 = np.stack([f.d_b_dy(float(t), ys) for t in ts])
    threshold = 0.5 * c.sigma1 ** 2 * c.b1 ** 2
    best_q, best_val = None, np.inf
    for q in Q_SEARCH_GRID:
        expr = (q * (q + 1.0) / (q - 1.0)) * dsig0 ** 2 + 2.0 * q * db0
        val = max(0.0, float(expr.max()))
        if val < best_val:
            best_q, best_val = float(q), val
    stein_margin = threshold - best_val
    clauses.append(_clause("stein_q", best_val, threshold, stein_margin, strict=True))

    boundary_margins: dict[str, float] = {}
    if model.left_boundary is not None and model.boundary is not None:
        l, bp = model.left_boundary, model.boundary
        yb = l + np.geomspace(max(probe.y_min - l, 1e-9), 1.0, 400, endpoint=False)
        bb = np.stack([f.drift_b(float(t), yb) for t in ts])
        drift_inf = float((bb * (yb - l) ** bp.gamma1).min())
        boundary_margins["boundary_drift"] = drift_inf - bp.c1
        clauses.append(_clause("boundary_drift", drift_inf, bp.c1, drift_inf - bp.c1))

        dbb = _sup_over_t(f.d_b_dy, ts, yb)
        deriv_sup = float((dbb * (yb - l) ** bp.gamma2).max())
        boundary_margins["boundary_derivative"] = bp.c2 - deriv_sup
        clauses.append(_clause("boundary_derivative", deriv_sup, bp.c2,
                               bp.c2 - deriv_sup))

        if bp.gamma1 == 1.0:
            ratio = 2.0 * bp.c1 / c.sigma2 ** 2
            margin = min(ratio - 3.0, 1.0 + 0.25 * (ratio - 3.0) - bp.gamma2,
                         bp.gamma2 - 1.0)
            boundary_margins["sharp_rate_gamma2"] = margin
            clauses.append(_clause("sharp_rate_gamma2", bp.gamma2,
                                   1.0 + 0.25 * (ratio - 3.0), margin, strict=True))

    alpha_hat, sigma3_hat = _decay_fit(ys, dsig_sup)
    beta_hat, b3_hat = _decay_fit(ys, db_sup)

    return AssumptionReport(
        grid=probe.describe(),
        sigma_min=sigma_min, sigma_max=sigma_max,
        alpha_hat=alpha_hat, sigma3_hat=sigma3_hat,
        beta_hat=beta_hat, b3_hat=b3_hat,
        stein_q=best_q if stein_margin > _SLACK else None,
        stein_condition_margin=stein_margin,
        boundary_margins=boundary_margins,
        clauses=clauses,
    )
