import numpy as np
import pytest
from scipy.integrate import quad

from sdelab import (
    constant_model,
    derivative_mismatch,
    hyperbolic_radial,
    linear_drift_model,
    perturbed_model,
    quadrature_limits,
)


def test_time_constant_profile_collapses():
    m = constant_model(2.0, 3.0)
    for t in (0.0, 1.0, 17.5, 256.0):
        assert m.limits.sigma_bar(t) == 2.0
        assert m.limits.b_bar(t) == 3.0


def test_quadrature_profile_matches_adaptive_quadrature():
    sigma_inf = lambda t: 2.0 + np.sin(t)
    b_inf = lambda t: 1.5 + 0.25 * np.cos(t / 3.0)
    prof = quadrature_limits(sigma_inf, b_inf)
    for t in (3.7, 17.3, 121.0):
        ref_s, _ = quad(lambda u: sigma_inf(u) ** 2, 0.0, t, limit=400)
        assert prof.sigma_bar(t) ** 2 * t == pytest.approx(ref_s, rel=1e-10)
        ref_b, _ = quad(b_inf, 0.0, t, limit=400)
        assert prof.b_bar(t) * t == pytest.approx(ref_b, rel=1e-10)


def test_quadrature_profile_at_zero():
    prof = quadrature_limits(lambda t: 2.0, lambda t: 1.0)
    assert prof.sigma_bar(0.0) == 2.0
    assert prof.b_bar(0.0) == 1.0


@pytest.mark.parametrize("model", [
    constant_model(1.0, 1.0),
    perturbed_model(1.0, 1.0, 0.5, 0.5, 1.0, 2.0),
    hyperbolic_radial(9),
    linear_drift_model(0.1, 1.0),
])
def test_declared_derivatives_match_finite_differences(model):
    l = model.left_boundary
    lo = (l + 0.05) if l is not None else -5.0
    ys = np.linspace(lo, 30.0, 211)
    assert derivative_mismatch(model.coefficients, 0.7, ys) < 1e-6


def test_admissible_gamma_bound():
    assert hyperbolic_radial(9).sharp_rate_admissible_gamma() == pytest.approx(2.5)
    assert constant_model(1.0, 1.0).sharp_rate_admissible_gamma() is None
