"""Monte Carlo tools for the occupation-time arcsine law and its curvature deviation.

The package simulates standard Brownian motion on [0, 1], estimates its local
time at a level by three independent methods, runs the time-scaled diffusion
whose first coordinate feels the mean-curvature drift of a hypersurface, and
fits the square-root-of-horizon deviation of the occupation time from the
arcsine law together with the remainder decay rate.
"""

from occudev.paths import TimeGrid, SeedSpec, Path, sample_increments, build_bm_path
from occudev.localtime import (
    local_time_tanaka,
    local_time_interval,
    local_time_downcrossing,
    local_time_profile,
    integral_u_dL,
    occupation_formula_residual,
)
from occudev.geometry import MetricSpec, metric_at, drift_b1, sphere_preset
from occudev.diffusion import (
    ScaledRunConfig,
    DeviationSample,
    simulate_scaled,
    occupation_positive,
    deviation_sample,
)
from occudev.statistics import (
    arcsine_cdf,
    arcsine_density,
    arcsine_expectation,
    ks_against,
    ks_two_sample,
    fit_deviation_coefficient,
    fit_remainder_exponent,
    weak_expansion_check,
    KSReport,
    SweepResult,
    MEAN_INT_U_DL,
)
from occudev.config import ExperimentConfig, ConfigError
from occudev.harness import run_experiment, replay_sample

__version__ = "0.1.0"

__all__ = [
    "TimeGrid",
    "SeedSpec",
    "Path",
    "sample_increments",
    "build_bm_path",
    "local_time_tanaka",
    "local_time_interval",
    "local_time_downcrossing",
    "local_time_profile",
    "integral_u_dL",
    "occupation_formula_residual",
    "MetricSpec",
    "metric_at",
    "drift_b1",
    "sphere_preset",
    "ScaledRunConfig",
    "DeviationSample",
    "simulate_scaled",
    "occupation_positive",
    "deviation_sample",
    "arcsine_cdf",
    "arcsine_density",
    "arcsine_expectation",
    "ks_against",
    "ks_two_sample",
    "fit_deviation_coefficient",
    "fit_remainder_exponent",
    "weak_expansion_check",
    "KSReport",
    "SweepResult",
    "MEAN_INT_U_DL",
    "ExperimentConfig",
    "ConfigError",
    "run_experiment",
    "replay_sample",
    "__version__",
]
