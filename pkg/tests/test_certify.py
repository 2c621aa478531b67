import numpy as np
import pytest

from sdelab import (
    InsufficientProbeError,
    ProbeGrid,
    certify_assumptions,
    constant_model,
    hyperbolic_radial,
    perturbed_model,
)
from sdelab.models import Q_SEARCH_GRID


def test_constant_model_passes_everything():
    rep = certify_assumptions(constant_model(1.0, 1.0))
    assert rep.all_pass
    assert rep.alpha_hat is None  # zero derivative: any exponent admissible
    assert rep.stein_condition_margin == pytest.approx(0.5)
    assert rep.sigma_min == rep.sigma_max == 1.0


def test_hyperbolic_d9_passes_including_boundary():
    rep = certify_assumptions(hyperbolic_radial(9))
    assert rep.all_pass
    # measured drift lower bound on the grid approaches (d-1)/2
    b_clause = next(c for c in rep.clauses if c.clause == "b_bounds")
    assert b_clause.measured == pytest.approx(4.0, abs=1e-9)
    assert rep.boundary_margins["boundary_drift"] >= 0.0
    assert rep.boundary_margins["boundary_derivative"] >= 0.0
    assert rep.boundary_margins["sharp_rate_gamma2"] > 0.0


def test_hyperbolic_d8_fails_only_sharp_rate_clause():
    rep = certify_assumptions(hyperbolic_radial(8))
    verdicts = {c.clause: c.verdict for c in rep.clauses}
    assert verdicts.pop("sharp_rate_gamma2") == "fail"
    assert all(v == "pass" for v in verdicts.values())


def test_perturbed_passes_and_recovers_exponents():
    rep = certify_assumptions(perturbed_model(1.0, 1.0, 0.5, 0.5, 1.0, 2.0))
    assert rep.all_pass
    assert rep.alpha_hat == pytest.approx(1.0, abs=0.05)
    assert rep.beta_hat == pytest.approx(2.0, abs=0.05)
    assert rep.stein_q is not None


@pytest.mark.parametrize("alpha,beta", [(0.6, 1.2), (1.5, 3.0)])
def test_decay_fit_recovery_across_exponents(alpha, beta):
    rep = certify_assumptions(perturbed_model(1.0, 1.0, 0.4, 0.3, alpha, beta))
    assert rep.alpha_hat == pytest.approx(alpha, abs=0.05)
    assert rep.beta_hat == pytest.approx(beta, abs=0.05)


def test_stein_sup_reduces_to_sigma_term_without_drift_envelope():
    # With b3 = 0 the drift derivative vanishes, so the measured sup is the
    # volatility term alone, minimized over the exponent grid.
    s3, alpha = 0.4, 1.0
    m = perturbed_model(1.0, 1.0, s3, 0.0, alpha, 2.0)
    rep = certify_assumptions(m)
    ys = np.linspace(0.0, 60.0, 24001)
    dsig_sq_max = float(np.max(m.coefficients.d_sigma_dy(0.0, ys) ** 2))
    oracle = min(q * (q + 1.0) / (q - 1.0) for q in Q_SEARCH_GRID) * dsig_sq_max
    clause = next(c for c in rep.clauses if c.clause == "stein_q")
    assert clause.measured == pytest.approx(oracle, rel=1e-6)


def test_insufficient_probe_errors():
    probe = ProbeGrid(y_min=1e-3, n_y=10, n_t=2)
    with pytest.raises(InsufficientProbeError):
        certify_assumptions(constant_model(1.0, 1.0), probe)


def test_report_csv_is_deterministic(tmp_path):
    rep = certify_assumptions(hyperbolic_radial(9))
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    rep.to_csv(p1)
    rep.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == "clause,measured,required,margin,verdict"
