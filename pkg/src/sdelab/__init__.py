"""Monte Carlo laboratory for large-time Gaussian limits of 1-d diffusions.

Simulates diffusions whose coefficients converge at spatial infinity, forms
the centered-scaled terminal statistic together with a coupled Gaussian
reference, and verifies the law of large numbers, the quantitative CLT, the
square-root Berry-Esseen rate, the pathwise Malliavin-derivative formulas,
and the supporting tail and exponential-functional estimates.
"""

from .bounds import (
    ExpFunctionalResult,
    GaussianTvQuery,
    HittingTailResult,
    InverseMomentResult,
    InverseMomentYResult,
    TimeTailResult,
    exp_functional_mc,
    gaussian_tv_bound,
    gaussian_tv_constant,
    gaussian_tv_crossing_form,
    gaussian_tv_exact_1d,
    hitting_tail_mc,
    inf_tail_eval,
    inf_tail_mc,
    inverse_moment_proxy,
    inverse_moment_y_mc,
    time_tail_mc,
)
from .certify import AssumptionReport, InsufficientProbeError, ProbeGrid, certify_assumptions
from .coefficients import (
    BoundaryProfile,
    CoefficientField,
    LimitProfile,
    ModelConstants,
    ModelError,
    ModelSpec,
    constant_limits,
    derivative_mismatch,
    quadrature_limits,
)
from .distances import (
    DistanceEstimate,
    RateFit,
    kolmogorov_distance,
    rate_fit,
    tv_scheffe,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    emit_csv,
    parse_config,
    run_experiment,
)
from .malliavin import (
    MalliavinOverflowError,
    MalliavinPathRecord,
    SteinBudget,
    derivative_norm_sq,
    first_variation_exponent,
    horizon_malliavin,
    malliavin_record,
    stein_budget,
    stein_pairing,
)
from .models import (
    MODEL_FAMILIES,
    build_model,
    constant_model,
    hyperbolic_radial,
    linear_drift_model,
    perturbed_model,
)
from .simulate import (
    BoundaryInstabilityError,
    DegenerateScalingError,
    LlnResidual,
    ModelEvaluationError,
    MomentOverflowError,
    PathEnsemble,
    ScaledSample,
    SimConfig,
    clt_residual_moment,
    lln_residual,
    scaled_statistic,
    simulate_ensemble,
    simulate_scaled_sample,
)

__version__ = "0.1.0"
