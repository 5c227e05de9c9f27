import math

import numpy as np
import pytest

from occudev.paths import Path, SeedSpec, TimeGrid, build_bm_path, sample_increments

SEED = 1711


def test_time_grid_basics():
    grid = TimeGrid(4)
    assert grid.dt == 0.25
    assert np.allclose(grid.times(), [0.0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        TimeGrid(0)
    with pytest.raises(ValueError):
        TimeGrid(1)


def test_seed_spec_validation():
    with pytest.raises(ValueError):
        SeedSpec(-1, 0)
    with pytest.raises(ValueError):
        SeedSpec(2**64, 0)
    with pytest.raises(ValueError):
        SeedSpec(1, -2)


def test_increments_deterministic():
    grid = TimeGrid(4)
    a = sample_increments(SeedSpec(SEED, 3), grid, dim=1)
    b = sample_increments(SeedSpec(SEED, 3), grid, dim=1)
    assert a.shape == (1, 4)
    assert np.array_equal(a, b)


def test_increments_distinct_replicates_differ():
    grid = TimeGrid(8)
    a = sample_increments(SeedSpec(SEED, 0), grid)
    b = sample_increments(SeedSpec(SEED, 1), grid)
    assert not np.array_equal(a, b)


def test_first_row_stable_as_dim_grows():
    # the scalar driver must not change when tangential rows are appended
    grid = TimeGrid(32)
    one = sample_increments(SeedSpec(SEED, 5), grid, dim=1)
    three = sample_increments(SeedSpec(SEED, 5), grid, dim=3)
    assert np.array_equal(one[0], three[0])


def test_increments_reject_bad_dim():
    with pytest.raises(ValueError):
        sample_increments(SeedSpec(SEED, 0), TimeGrid(4), dim=0)


def test_increment_moments():
    # mean oracle: se = sqrt(dt/N); variance oracle: relative se = sqrt(2/N)
    grid = TimeGrid(1024)
    dt = grid.dt
    total = 1_000_000
    n_rep = total // grid.n_steps
    draws = np.concatenate(
        [sample_increments(SeedSpec(SEED, r), grid)[0] for r in range(n_rep)]
    )
    n = draws.size
    assert abs(draws.mean()) < 4.0 * math.sqrt(dt / n)
    assert abs(draws.var() - dt) < 0.01 * dt


def test_build_bm_path_prefix_sums():
    zero = build_bm_path(np.zeros(5))
    assert np.array_equal(zero.values, np.zeros(6))
    p = build_bm_path(np.array([1.0, -1.0]))
    assert np.array_equal(p.values, [0.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        build_bm_path(np.zeros((2, 4)))


def test_path_validation():
    grid = TimeGrid(2)
    with pytest.raises(ValueError):
        Path(grid=grid, values=np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        Path(grid=grid, values=np.array([0.0, np.nan, 1.0]))


def _endpoints(n_rep, n_steps, at=None, offset=0):
    grid = TimeGrid(n_steps)
    idx = n_steps if at is None else at
    out = np.empty(n_rep)
    for r in range(n_rep):
        inc = sample_increments(SeedSpec(SEED, offset + r), grid)[0]
        out[r] = inc[:idx].sum()
    return out


def test_terminal_variance():
    # CLT oracle: relative se of the sample variance is sqrt(2/N)
    n_rep = 100_000
    w1 = _endpoints(n_rep, 64)
    assert abs(w1.var() - 1.0) < 0.02


def test_variance_scaling():
    n_rep = 100_000
    grid = TimeGrid(64)
    w = np.empty((n_rep, 3))
    marks = [16, 32, 64]
    for r in range(n_rep):
        inc = sample_increments(SeedSpec(SEED, r), grid)[0]
        c = np.cumsum(inc)
        w[r] = [c[m - 1] for m in marks]
    for j, m in enumerate(marks):
        s = m / 64.0
        assert abs(w[:, j].var() - s) < 0.03 * s


def test_replicate_independence():
    n_rep = 100_000
    w1 = _endpoints(n_rep + 1, 16)
    corr = np.corrcoef(w1[:-1], w1[1:])[0, 1]
    assert abs(corr) < 4.0 / math.sqrt(n_rep)
