"""Midpoint-guidance posterior sampling with exact priors, baselines and benchmarks."""

from .errors import NumericError, ParameterError
from .gaussian_oracle import run_moment_recursion, sample_random_instance, surrogate_transition, w2_landscape
from .likelihood import LinearGaussianLikelihood, MagnitudeLikelihood, make_likelihood
from .metrics import gaussian_w2, sliced_wasserstein
from .priors import ExactDenoiser, GaussianMixturePrior, GaussianPrior, gauss_exact_posterior, gm_exact_posterior
from .samplers import DpsConfig, GradStepRule, MgpsConfig, PgdmConfig, dps_sample, mgps_sample, pgdm_sample
from .schedule import build_schedule, half_plan, midpoint_plan, piecewise_plan, plan_from_sequence

__version__ = "0.1.0"

__all__ = [
    "NumericError",
    "ParameterError",
    "run_moment_recursion",
    "sample_random_instance",
    "surrogate_transition",
    "w2_landscape",
    "LinearGaussianLikelihood",
    "MagnitudeLikelihood",
    "make_likelihood",
    "gaussian_w2",
    "sliced_wasserstein",
    "ExactDenoiser",
    "GaussianMixturePrior",
    "GaussianPrior",
    "gauss_exact_posterior",
    "gm_exact_posterior",
    "DpsConfig",
    "GradStepRule",
    "MgpsConfig",
    "PgdmConfig",
    "dps_sample",
    "mgps_sample",
    "pgdm_sample",
    "build_schedule",
    "half_plan",
    "midpoint_plan",
    "piecewise_plan",
    "plan_from_sequence",
]
