"""Model data: coefficient fields, spatial-limit profiles, and constants.

A model bundles the diffusion coefficients ``sigma(t, y)`` / ``drift_b(t, y)``,
their spatial derivatives, the large-``y`` limit profiles ``sigma_inf(t)`` /
``b_inf(t)`` together with their running time averages, and the constants
(bounds, decay exponents, boundary exponents) that the assumption certifier
checks numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Field2 = Callable[[float, np.ndarray], np.ndarray]
Profile = Callable[[float], float]


class ModelError(ValueError):
    """Invalid model construction or evaluation."""


@dataclass(frozen=True)
class CoefficientField:
    """Volatility and drift fields with spatial derivatives.

    All four callables accept ``(t, y)`` with ``y`` a float array and must be
    vectorized over ``y``.  ``sigma`` has to be defined on all of R because the
    comparison process (same volatility, constant drift) may wander below a
    finite left boundary of the main process.  When a field is a constant,
    ``sigma_const`` / ``drift_const`` let the simulation kernel skip the
    callable in its hot loop.
    """

    sigma: Field2
    drift_b: Field2
    d_sigma_dy: Field2
    d_b_dy: Field2
    sigma_const: Optional[float] = None
    drift_const: Optional[float] = None


@dataclass(frozen=True)
class LimitProfile:
    """Spatial limits of the coefficients and their running time averages.

    ``sigma_bar(t)`` is the root mean square of ``sigma_inf`` over ``[0, t]``
    and ``b_bar(t)`` the plain mean of ``b_inf``; at ``t == 0`` both fall back
    to the instantaneous value.
    """

    sigma_inf: Profile
    b_inf: Profile
    sigma_bar: Profile
    b_bar: Profile
    time_constant: bool = False


def constant_limits(sigma_value: float, b_value: float) -> LimitProfile:
    """Limit profile of a model whose coefficients do not depend on time."""
    return LimitProfile(
        sigma_inf=lambda t: sigma_value,
        b_inf=lambda t: b_value,
        sigma_bar=lambda t: sigma_value,
        b_bar=lambda t: b_value,
        time_constant=True,
    )


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _integrate(f: Callable[[np.ndarray], np.ndarray], t: float) -> float:
    # Composite 64-node Gauss-Legendre; panels of length <= 4 keep the rule
    # inside its accuracy range for smoothly oscillating profiles.
    n_panels = max(1, int(np.ceil(t / 4.0)))
    edges = np.linspace(0.0, t, n_panels + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        xs = 0.5 * (a + b) + half * _GL_NODES
        total += half * float(np.dot(_GL_WEIGHTS, f(xs)))
    return total


def quadrature_limits(sigma_inf: Profile, b_inf: Profile) -> LimitProfile:
    """Limit profile with time averages computed by quadrature.

    Used when a model declares genuinely time-dependent limits; relative
    accuracy is far below 1e-10 for smooth profiles.
    """
    sig_vec = np.vectorize(sigma_inf, otypes=[float])
    b_vec = np.vectorize(b_inf, otypes=[float])

    def sigma_bar(t: float) -> float:
        if t <= 0.0:
            return float(sigma_inf(0.0))
        return float(np.sqrt(_integrate(lambda s: sig_vec(s) ** 2, t) / t))

    def b_bar(t: float) -> float:
        if t <= 0.0:
            return float(b_inf(0.0))
        return _integrate(b_vec, t) / t

    return LimitProfile(sigma_inf=sigma_inf, b_inf=b_inf,
                        sigma_bar=sigma_bar, b_bar=b_bar, time_constant=False)


@dataclass(frozen=True)
class ModelConstants:
    """Numeric constants entering the assumption clauses.

    ``l`` is the left boundary (``None`` means the state space is all of R).
    ``q`` is a Hoelder-type exponent for which the joint derivative condition
    holds, or ``None`` when no exponent on the search grid works.
    """

    sigma1: float
    sigma2: float
    sigma3: float
    b1: float
    b2: float
    b3: float
    alpha: float
    beta: float
    l: Optional[float] = None
    q: Optional[float] = None


@dataclass(frozen=True)
class BoundaryProfile:
    """Exponents and constants of the drift blow-up near a finite boundary.

    ``gamma1 == 1`` marks the relaxed boundary condition, under which the
    sharp-rate theorem needs ``2 * c1 / sigma2**2 > 3`` and
    ``1 < gamma2 < 1 + (2 * c1 / sigma2**2 - 3) / 4``.
    """

    gamma1: float
    gamma2: float
    c1: float
    c2: float


@dataclass(frozen=True)
class ModelSpec:
    name: str
    coefficients: CoefficientField
    limits: LimitProfile
    constants: ModelConstants
    boundary: Optional[BoundaryProfile] = None
    applicable: Optional[bool] = None
    meta: dict = field(default_factory=dict)

    @property
    def left_boundary(self) -> Optional[float]:
        return self.constants.l

    def sharp_rate_admissible_gamma(self) -> Optional[float]:
        """Upper bound on admissible inverse-moment exponents, relaxed route."""
        if self.boundary is None:
            return None
        ratio = 2.0 * self.boundary.c1 / self.constants.sigma2 ** 2
        if ratio <= 3.0:
            return 0.0
        return 0.5 * (ratio - 3.0)


def derivative_mismatch(field2: CoefficientField, t: float, ys: np.ndarray,
                        step: float = 1e-5) -> float:
    """Largest relative gap between declared derivatives and central differences.

    Probe for the field invariant: analytic ``d_sigma_dy`` / ``d_b_dy`` must
    agree with finite differences of the value fields.
    """
    ys = np.asarray(ys, dtype=float)
    worst = 0.0
    for value, deriv in ((field2.sigma, field2.d_sigma_dy),
                         (field2.drift_b, field2.d_b_dy)):
        fd = (value(t, ys + step) - value(t, ys - step)) / (2.0 * step)
        an = deriv(t, ys)
        scale = np.maximum(np.abs(an), 1.0)
        worst = max(worst, float(np.max(np.abs(fd - an) / scale)))
    return worst
