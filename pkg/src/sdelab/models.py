"""Shipped diffusion families.

Three production families (``constant``, ``perturbed``, ``hyperbolic``) plus a
linear-drift family used only to cross-check the pathwise Malliavin formulas
against closed-form integrals.  Constructors derive every assumption constant
analytically, so the numerical certifier has exact targets to verify.
"""

from __future__ import annotations

import warnings

import numpy as np

from .coefficients import (
    BoundaryProfile,
    CoefficientField,
    ModelConstants,
    ModelError,
    ModelSpec,
    constant_limits,
)

Q_SEARCH_GRID = np.round(np.arange(1.1, 8.0 + 1e-9, 0.1), 10)


def _as_array(y) -> np.ndarray:
    return np.asarray(y, dtype=float)


def constant_model(sigma0: float, b0: float) -> ModelSpec:
    """Diffusion with constant coefficients; the scaled statistic is exactly N(0,1)."""
    if sigma0 <= 0.0 or b0 <= 0.0:
        raise ModelError("constant_model requires sigma0 > 0 and b0 > 0, got "
                         f"sigma0={sigma0}, b0={b0}")

    fields = CoefficientField(
        sigma=lambda t, y: np.full_like(_as_array(y), sigma0),
        drift_b=lambda t, y: np.full_like(_as_array(y), b0),
        d_sigma_dy=lambda t, y: np.zeros_like(_as_array(y)),
        d_b_dy=lambda t, y: np.zeros_like(_as_array(y)),
        sigma_const=sigma0, drift_const=b0,
    )
    constants = ModelConstants(sigma1=sigma0, sigma2=sigma0, sigma3=0.0,
                               b1=b0, b2=b0, b3=0.0, alpha=1.0, beta=1.0,
                               l=None, q=2.0)
    return ModelSpec(name="constant", coefficients=fields,
                     limits=constant_limits(sigma0, b0), constants=constants,
                     applicable=True,
                     meta={"sigma0": sigma0, "b0": b0, "params": {"sigma0": sigma0, "b0": b0}})


def _stein_sup(d_sigma_sq_max: float, expr_on_grid) -> float:
    # sup over the state of A(q) * dsigma^2 + 2q * db, joint in y.
    return max(0.0, float(np.max(expr_on_grid)))


def perturbed_model(sigma_inf0: float, b_inf0: float, s3: float, b3: float,
                    alpha: float, beta: float) -> ModelSpec:
    """Constant limits plus smooth power-law envelopes decaying in the state.

    ``sigma(t, y) = sigma_inf0 + s3 * (1 + max(y, 0)^2)^(-alpha/2)`` and the
    analogous drift with ``(b3, beta)``.  The envelopes are flat on ``y <= 0``
    so the derivatives stay globally bounded, and the decay constants come out
    exactly as ``|sigma - sigma_inf| <= s3 * y^-alpha`` for ``y >= 1``.
    """
    if sigma_inf0 - s3 <= 0.0 or b_inf0 - b3 <= 0.0:
        raise ModelError("perturbed_model requires sigma_inf0 > s3 and b_inf0 > b3")
    if alpha <= 0.0 or beta <= 0.0 or s3 < 0.0 or b3 < 0.0:
        raise ModelError("perturbed_model requires alpha, beta > 0 and s3, b3 >= 0")

    def sigma(t, y):
        yp = np.maximum(_as_array(y), 0.0)
        return sigma_inf0 + s3 * (1.0 + yp * yp) ** (-0.5 * alpha)

    def drift_b(t, y):
        yp = np.maximum(_as_array(y), 0.0)
        return b_inf0 + b3 * (1.0 + yp * yp) ** (-0.5 * beta)

    def d_sigma_dy(t, y):
        yp = np.maximum(_as_array(y), 0.0)
        return -s3 * alpha * yp * (1.0 + yp * yp) ** (-0.5 * (alpha + 2.0))

    def d_b_dy(t, y):
        yp = np.maximum(_as_array(y), 0.0)
        return -b3 * beta * yp * (1.0 + yp * yp) ** (-0.5 * (beta + 2.0))

    constants = ModelConstants(
        sigma1=sigma_inf0, sigma2=sigma_inf0 + s3, sigma3=alpha * s3,
        b1=b_inf0, b2=b_inf0 + b3, b3=beta * b3,
        alpha=alpha, beta=beta, l=None, q=None,
    )

    # Search the exponent grid for the joint derivative condition.
    ys = np.linspace(0.0, 60.0, 24001)
    dsig = d_sigma_dy(0.0, ys)
    db = d_b_dy(0.0, ys)
    threshold = 0.5 * constants.sigma1 ** 2 * constants.b1 ** 2
    best_q, best_val = None, np.inf
    for q in Q_SEARCH_GRID:
        val = _stein_sup(0.0, (q * (q + 1.0) / (q - 1.0)) * dsig ** 2 + 2.0 * q * db)
        if val < best_val:
            best_q, best_val = float(q), val
    if best_val >= threshold:
        warnings.warn(
            "no exponent on the search grid satisfies the joint derivative "
            f"condition (best sup {best_val:.4g} >= {threshold:.4g}); "
            "rate theorems do not apply, simulation is still allowed",
            stacklevel=2)
        q_value = None
    else:
        q_value = best_q

    constants = ModelConstants(**{**constants.__dict__, "q": q_value})
    fields = CoefficientField(sigma=sigma, drift_b=drift_b,
                              d_sigma_dy=d_sigma_dy, d_b_dy=d_b_dy)
    applicable = q_value is not None and alpha > 0.5 and beta > 1.0
    return ModelSpec(name="perturbed", coefficients=fields,
                     limits=constant_limits(sigma_inf0, b_inf0),
                     constants=constants, applicable=applicable,
                     meta={"params": {"sigma_inf0": sigma_inf0, "b_inf0": b_inf0,
                                      "s3": s3, "b3": b3,
                                      "alpha": alpha, "beta": beta}})


def hyperbolic_radial(d: int) -> ModelSpec:
    """Radial part of Brownian motion on d-dimensional hyperbolic space.

    Unit volatility, drift ``(d - 1) / 2 * coth(y)`` blowing up at the left
    boundary ``l = 0``.  The drift envelope near 0 has exponent 1 (relaxed
    boundary condition), and the sharp-rate inequality on the derivative
    exponent holds exactly when ``d > 8``.
    """
    if int(d) != d or d < 2:
        raise ModelError(f"hyperbolic_radial requires an integer d >= 2, got {d}")
    d = int(d)
    half = 0.5 * (d - 1)

    def sigma(t, y):
        return np.ones_like(_as_array(y))

    def drift_b(t, y):
        return half / np.tanh(_as_array(y))

    def d_sigma_dy(t, y):
        return np.zeros_like(_as_array(y))

    def d_b_dy(t, y):
        with np.errstate(over="ignore"):
            s = np.sinh(_as_array(y))
            out = np.where(np.isinf(s), 0.0, -half / np.where(np.isinf(s), 1.0, s) ** 2)
        return out

    # sup_{y >= 1} |db/dy| * y^(beta+1) with beta = 2, evaluated numerically.
    ys = np.linspace(1.0, 40.0, 20001)
    b3 = float(np.max(-d_b_dy(0.0, ys) * ys ** 3))

    constants = ModelConstants(
        sigma1=1.0, sigma2=1.0, sigma3=0.0,
        b1=half, b2=half / np.tanh(1.0), b3=b3,
        alpha=1.0, beta=2.0, l=0.0, q=2.0,
    )
    boundary = BoundaryProfile(gamma1=1.0, gamma2=2.0, c1=half, c2=half)
    ratio = 2.0 * boundary.c1 / constants.sigma2 ** 2
    applicable = ratio > 3.0 and 1.0 < boundary.gamma2 < 1.0 + 0.25 * (ratio - 3.0)
    spec = ModelSpec(name="hyperbolic", coefficients=CoefficientField(
                         sigma=sigma, drift_b=drift_b,
                         d_sigma_dy=d_sigma_dy, d_b_dy=d_b_dy,
                         sigma_const=1.0),
                     limits=constant_limits(1.0, half), constants=constants,
                     boundary=boundary, applicable=applicable,
                     meta={"d": d, "params": {"d": d}})
    return spec


def linear_drift_model(kappa: float, sigma0: float) -> ModelSpec:
    """Test family with ``b(t, y) = kappa * y`` and constant volatility.

    The first-variation exponent is deterministic (``kappa * t``), which gives
    closed-form integrals for the Malliavin norms.  The drift violates the
    boundedness assumptions; not part of the production registry.
    """
    if sigma0 <= 0.0:
        raise ModelError("linear_drift_model requires sigma0 > 0")

    fields = CoefficientField(
        sigma=lambda t, y: np.full_like(_as_array(y), sigma0),
        drift_b=lambda t, y: kappa * _as_array(y),
        d_sigma_dy=lambda t, y: np.zeros_like(_as_array(y)),
        d_b_dy=lambda t, y: np.full_like(_as_array(y), kappa),
        sigma_const=sigma0,
    )
    constants = ModelConstants(sigma1=sigma0, sigma2=sigma0, sigma3=0.0,
                               b1=0.0, b2=0.0, b3=0.0, alpha=1.0, beta=1.0,
                               l=None, q=None)
    return ModelSpec(name="linear_drift", coefficients=fields,
                     limits=constant_limits(sigma0, 0.0), constants=constants,
                     applicable=False,
                     meta={"unit_test_family": True,
                           "params": {"kappa": kappa, "sigma0": sigma0}})


MODEL_FAMILIES = {
    "constant": constant_model,
    "perturbed": perturbed_model,
    "hyperbolic": hyperbolic_radial,
}


def build_model(name: str, **params) -> ModelSpec:
    """Construct a registered family from config-file parameters."""
    try:
        ctor = MODEL_FAMILIES[name]
    except KeyError:
        raise ModelError(
            f"unknown model {name!r}; registered: {sorted(MODEL_FAMILIES)}") from None
    return ctor(**params)
