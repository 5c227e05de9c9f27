import math

import numpy as np
import pytest

from occudev.diffusion import (
    DeviationSample,
    ScaledRunConfig,
    _deviation_block,
    deviation_sample,
    occupation_positive,
    run_deviation_sweep,
    run_w_ensemble,
    simulate_scaled,
)
from occudev.geometry import MetricSpec, sphere_preset
from occudev.paths import Path, SeedSpec, TimeGrid, sample_increments
from occudev.statistics import cmean
from occudev.tests_support import reflection_max_abs_tail  # noqa: F401  (see below)

SEED = 60601


def test_config_validation():
    grid = TimeGrid(16)
    with pytest.raises(ValueError):
        ScaledRunConfig(t=0.0, grid=grid, drift_mode="zero")
    with pytest.raises(ValueError):
        ScaledRunConfig(t=1.5, grid=grid, drift_mode="zero")
    with pytest.raises(ValueError):
        ScaledRunConfig(t=0.1, grid=grid, alpha=0.5, drift_mode="zero")
    with pytest.raises(ValueError):
        ScaledRunConfig(t=0.1, grid=grid, drift_mode="bogus")
    with pytest.raises(ValueError):
        ScaledRunConfig(t=0.1, grid=grid, drift_mode="exact_b1", spec=None)
    cfg = ScaledRunConfig(t=0.04, grid=grid, spec=sphere_preset(3, 1.0))
    assert cfg.H == 2.0
    assert cfg.dim == 3
    assert cfg.comparator_slope() == pytest.approx(0.5 * 0.2 * 2.0)
    zero = ScaledRunConfig(t=0.04, grid=grid, drift_mode="zero")
    assert zero.dim == 1 and zero.H == 0.0
