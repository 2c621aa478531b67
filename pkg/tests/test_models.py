import numpy as np
import pytest

from sdelab import (
    ModelError,
    build_model,
    constant_model,
    hyperbolic_radial,
    linear_drift_model,
    perturbed_model,
)


class TestConstantModel:
    def test_constants(self):
        m = constant_model(1.0, 1.0)
        assert m.constants.sigma1 == m.constants.sigma2 == 1.0
        assert m.constants.b1 == m.constants.b2 == 1.0

    def test_guards(self):
        with pytest.raises(ModelError):
            constant_model(0.0, 1.0)
        with pytest.raises(ModelError):
            constant_model(1.0, -2.0)

    def test_limits_are_the_constants(self):
        m = constant_model(2.0, 3.0)
        assert m.limits.b_bar(10.0) == 3.0
        assert m.limits.sigma_bar(0.5) == 2.0


class TestPerturbedModel:
    def test_degenerate_amplitudes_reduce_to_constant(self):
        m = perturbed_model(1.3, 0.7, 0.0, 0.0, 1.0, 2.0)
        ref = constant_model(1.3, 0.7)
        ys = np.linspace(-3.0, 50.0, 301)
        for field in ("sigma", "drift_b", "d_sigma_dy", "d_b_dy"):
            got = getattr(m.coefficients, field)(0.0, ys)
            want = getattr(ref.coefficients, field)(0.0, ys)
            np.testing.assert_array_equal(got, want)

    def test_guards(self):
        with pytest.raises(ModelError):
            perturbed_model(1.0, 1.0, 1.0, 0.5, 1.0, 2.0)  # sigma_inf0 <= s3
        with pytest.raises(ModelError):
            perturbed_model(1.0, 1.0, 0.5, 0.5, -1.0, 2.0)

    def test_applicability_flag(self):
        assert perturbed_model(1.0, 1.0, 0.5, 0.5, 0.6, 1.2).applicable
        assert not perturbed_model(1.0, 1.0, 0.5, 0.5, 0.4, 2.0).applicable

    def test_no_valid_exponent_warns_and_records_none(self):
        with pytest.warns(UserWarning, match="no exponent"):
            m = perturbed_model(1.0, 1.0, 0.9, 0.0, 1.0, 2.0)
        assert m.constants.q is None
        assert not m.applicable

    def test_envelope_constants(self):
        m = perturbed_model(1.0, 1.0, 0.5, 0.25, 1.5, 2.0)
        c = m.constants
        assert c.sigma1 == 1.0 and c.sigma2 == 1.5
        assert c.sigma3 == pytest.approx(1.5 * 0.5)
        assert c.b3 == pytest.approx(2.0 * 0.25)


class TestHyperbolicRadial:
    def test_guards(self):
        with pytest.raises(ModelError):
            hyperbolic_radial(1)
        with pytest.raises(ModelError):
            hyperbolic_radial(2.5)

    def test_drift_value_d2(self):
        m = hyperbolic_radial(2)
        b = float(m.coefficients.drift_b(0.0, np.array([0.5]))[0])
        assert b == pytest.approx(0.5 / np.tanh(0.5))
        assert b == pytest.approx(1.0820, abs=5e-5)

    def test_constants_d9(self):
        m = hyperbolic_radial(9)
        assert m.constants.b1 == 4.0
        assert m.constants.sigma1 == m.constants.sigma2 == 1.0
        assert m.boundary.gamma1 == 1.0 and m.boundary.gamma2 == 2.0
        assert m.boundary.c1 == 4.0
        assert m.left_boundary == 0.0

    def test_applicability_monotone_in_dimension(self):
        flags = [hyperbolic_radial(d).applicable for d in range(2, 13)]
        assert flags == [d >= 9 for d in range(2, 13)]


def test_linear_drift_is_flagged_as_test_family():
    m = linear_drift_model(0.1, 1.0)
    assert m.meta["unit_test_family"]
    with pytest.raises(ModelError):
        linear_drift_model(0.1, 0.0)


class TestRegistry:
    def test_build_by_name(self):
        assert build_model("constant", sigma0=1.0, b0=2.0).name == "constant"
        assert build_model("hyperbolic", d=9).meta["d"] == 9
        m = build_model("perturbed", sigma_inf0=1.0, b_inf0=1.0, s3=0.5,
                        b3=0.5, alpha=1.0, beta=2.0)
        assert m.name == "perturbed"

    def test_unknown_name(self):
        with pytest.raises(ModelError, match="unknown model"):
            build_model("ornstein")
