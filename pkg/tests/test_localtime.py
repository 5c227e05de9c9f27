import math
import warnings

import numpy as np
import pytest

from occudev import _kernels
from occudev.diffusion import _draw_block
from occudev.localtime import (
    LocalTimeProfile,
    batch_downcrossing_l1,
    batch_interval_l1,
    integral_u_dL,
    local_time_downcrossing,
    local_time_interval,
    local_time_profile,
    local_time_tanaka,
    occupation_formula_residual,
    occupation_residual_batch,
    stieltjes_integral_u_dL,
)
from occudev.paths import Path, SeedSpec, TimeGrid, build_bm_path, sample_increments
from occudev.statistics import MEAN_L1

SEED = 424242


def _brownian(r, n):
    return build_bm_path(sample_increments(SeedSpec(SEED, r), TimeGrid(n))[0])


def _w_matrix(n_rep, n, offset=0, master=SEED):
    grid = TimeGrid(n)
    block = _draw_block(master, offset, offset + n_rep, grid, 1)
    return (
        np.concatenate([np.zeros((n_rep, 1)), np.cumsum(block[:, 0, :], axis=1)], axis=1),
        grid,
    )


# ---------------------------------------------------------------------------
# tanaka estimator
# ---------------------------------------------------------------------------


def test_tanaka_level_never_reached():
    path = Path(grid=TimeGrid(4), values=np.full(5, 5.0))
    assert np.array_equal(local_time_tanaka(path, x=0.0), np.zeros(5))


def test_tanaka_hand_evaluation():
    # values (0, 1, 0) at level 1/2: the discrete identity gives
    # |W_s - x| - |W_0 - x| - sum sgn(W_k - x) dW_k = (0, 1, 2)
    path = Path(grid=TimeGrid(2), values=np.array([0.0, 1.0, 0.0]))
    curve = local_time_tanaka(path, x=0.5)
    assert np.array_equal(curve, [0.0, 1.0, 2.0])
    # as (|0.5| - |0.5|) - (sgn(-0.5) * 1 + sgn(0.5) * (-1)) = 0 - (-2)
    assert curve[-1] == 2.0


def test_tanaka_identity_reconstruction():
    # the defining identity holds exactly at the grid times by construction
    path = _brownian(0, 512)
    w = path.values
    x = 0.1
    curve, viol = local_time_tanaka(path, x=x, return_violation=True)
    mart = np.concatenate(([0.0], np.cumsum(np.sign(w[:-1] - x) * np.diff(w))))
    raw = np.abs(w - x) - abs(w[0] - x) - mart
    assert np.max(np.abs(curve - raw)) <= viol + 1e-15
    assert viol < 1e-10


def test_tanaka_monotone_and_violations_tiny():
    # the raw increments vanish off sign changes and equal 2|W_{k+1} - x| at
    # them, so clamping only ever corrects float rounding
    n = 2048
    worst = 0.0
    for r in range(50):
        path = _brownian(r, n)
        curve, viol = local_time_tanaka(path, x=0.0, return_violation=True)
        assert np.all(np.diff(curve) >= 0.0)
        worst = max(worst, viol)
    assert worst < 3.0 * math.sqrt(1.0 / n)
    assert worst < 1e-10


def test_tanaka_requested_times():
    path = Path(grid=TimeGrid(2), values=np.array([0.0, 1.0, 0.0]))
    assert np.array_equal(local_time_tanaka(path, x=0.5, times=[0.5, 1.0]), [1.0, 2.0])


def test_tanaka_matches_batch_kernel():
    grid = TimeGrid(256)
    inc = sample_increments(SeedSpec(SEED, 7), grid)
    path = build_bm_path(inc[0])
    curve = local_time_tanaka(path, x=0.0)
    _, _, l1, iudl, _ = _kernels.w_functionals(inc, grid.dt, backend="numpy")
    assert math.isclose(curve[-1], l1[0], rel_tol=0, abs_tol=1e-12)
    assert math.isclose(integral_u_dL(path), iudl[0], rel_tol=0, abs_tol=1e-12)


# ---------------------------------------------------------------------------
# interval estimator
# ---------------------------------------------------------------------------


def test_interval_level_never_reached():
    path = Path(grid=TimeGrid(4), values=np.full(5, 5.0))
    assert np.array_equal(local_time_interval(path, x=0.0, eps=0.1), np.zeros(5))


def test_interval_counts_left_endpoints():
    path = Path(grid=TimeGrid(2), values=np.array([0.0, 1.0, 0.0]))
    curve = local_time_interval(path, x=0.0, eps=0.5)
    # only W_0 = 0 falls inside (-1/2, 1/2): dt/(2 eps) = 0.5 from s >= dt on
    assert np.array_equal(curve, [0.0, 0.5, 0.5])


def test_interval_starvation_warns():
    path = _brownian(1, 256)
    with pytest.warns(UserWarning, match="starved"):
        local_time_interval(path, x=0.0, eps=0.001 * math.sqrt(path.grid.dt))


def test_interval_tracks_tanaka_in_mean():
    # per-path deviations are O(dt^{1/4}); the means must agree much tighter
    n_rep, n = 2000, 2048
    w, grid = _w_matrix(n_rep, n)
    l1_int = batch_interval_l1(w, grid.dt)
    _, _, l1_tan, _, _ = _kernels.w_functionals(np.diff(w, axis=1), grid.dt, backend="numpy")
    assert abs(l1_int.mean() - l1_tan.mean()) < 0.02
    mad = np.abs(l1_int - l1_tan).mean()
    assert mad < 1.5 * (1.0 / n) ** 0.25


# ---------------------------------------------------------------------------
# downcrossing estimator
# ---------------------------------------------------------------------------


def test_downcrossing_monotone_path_is_zero():
    path = Path(grid=TimeGrid(4), values=np.linspace(0.0, 2.0, 5))
    assert np.array_equal(local_time_downcrossing(path, x=0.0, eps=0.5), np.zeros(5))


def test_downcrossing_hand_count():
    # (0, 1, 0, 1, 0) crosses [0, 1] downward twice: 2 * eps * D = 4
    path = Path(grid=TimeGrid(4), values=np.array([0.0, 1.0, 0.0, 1.0, 0.0]))
    curve = local_time_downcrossing(path, x=0.0, eps=1.0)
    assert np.array_equal(curve, [0.0, 0.0, 2.0, 2.0, 4.0])


def _brute_downcrossings(values, x, eps):
    count = 0
    armed = False
    for v in values:
        if v >= x + eps:
            armed = True
        elif v <= x and armed:
            count += 1
            armed = False
    return count


def test_downcrossing_matches_brute_force():
    rng = np.random.default_rng(9)
    grid = TimeGrid(64)
    for _ in range(100):
        vals = np.concatenate([[0.0], np.cumsum(rng.normal(0.0, 0.3, 64))])
        path = Path(grid=grid, values=vals)
        got = local_time_downcrossing(path, x=0.1, eps=0.25)[-1]
        want = 2.0 * 0.25 * _brute_downcrossings(vals, 0.1, 0.25)
        assert got == want


def test_downcrossing_monitoring_deficit():
    # With the band width at the step scale, whole excursions fall between
    # observations: the estimator sees roughly half the true local time, and
    # widening the band recovers part of the loss. Characterized here so the
    # bias stays visible; tanaka and interval carry the quantitative anchors.
    n_rep, n = 2000, 8192
    w, grid = _w_matrix(n_rep, n)
    at_step = batch_downcrossing_l1(w, grid.dt).mean()
    wide = batch_downcrossing_l1(w, grid.dt, eps=8.0 * math.sqrt(grid.dt)).mean()
    assert 0.30 * MEAN_L1 < at_step < 0.60 * MEAN_L1
    assert wide > at_step
    assert 0.65 * MEAN_L1 < wide < 0.90 * MEAN_L1


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------


def test_profile_shape_and_flags():
    path = _brownian(2, 256)
    prof = local_time_profile(path, levels=[-0.5, 0.0, 0.5], method="interval")
    assert prof.L.shape == (3, 257)
    assert prof.bandwidth == pytest.approx(math.sqrt(path.grid.dt))
    assert not prof.starved
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        starved = local_time_profile(
            path, levels=[0.0], method="interval", eps=1e-5
        )
    assert starved.starved
    with pytest.raises(ValueError):
        local_time_profile(path, levels=[0.0], method="nope")


def test_profile_rejects_bad_matrix():
    with pytest.raises(ValueError):
        LocalTimeProfile(
            levels=np.array([0.0]),
            times=np.array([0.0, 0.5, 1.0]),
            L=np.array([[0.0, 1.0, 0.5]]),
            method="tanaka",
            bandwidth=None,
        )


# ---------------------------------------------------------------------------
# integral of u dL
# ---------------------------------------------------------------------------


def test_integral_zero_curve():
    assert integral_u_dL(np.zeros(101)) == 0.0


def test_integral_linear_curve():
    # L_u = u: integral u dL = 1 - 1/2 by parts; the left Stieltjes sum is
    # (1 - dt)/2, inside the discretization allowance
    grid = TimeGrid(1000)
    curve = grid.times().copy()
    val = integral_u_dL(curve, grid)
    assert val == pytest.approx(0.5, abs=1e-12)
    direct = stieltjes_integral_u_dL(curve, grid)
    assert direct == pytest.approx((1.0 - grid.dt) / 2.0, abs=1e-12)
    assert abs(direct - val) <= 1e-8 + 2.0 * grid.dt * curve[-1]


def test_integral_rejects_decreasing_curve():
    curve = np.array([0.0, 0.5, 0.2, 0.6])
    with pytest.raises(ValueError, match="clamping tolerance"):
        integral_u_dL(curve, TimeGrid(3))


def test_integral_accepts_path_input():
    path = _brownian(3, 512)
    val = integral_u_dL(path)
    curve = local_time_tanaka(path)
    assert val == pytest.approx(integral_u_dL(curve, path.grid))
    assert val >= -1e-12


# ---------------------------------------------------------------------------
# occupation-time formula
# ---------------------------------------------------------------------------


def test_occupation_residual_zero_function():
    path = _brownian(4, 256)
    levels = np.linspace(-4.0, 4.0, 101)
    res = occupation_formula_residual(path, lambda x, s: 0.0 * x + 0.0 * s, levels)
    assert res == 0.0


def test_occupation_residual_halfspace_small():
    # the level-space side differs from the direct occupation only through
    # binning at the dividing level, a band of one level spacing
    n_rep, n = 100, 2048
    w, grid = _w_matrix(n_rep, n)
    eps = math.sqrt(grid.dt)
    dx = 2.0 * eps
    n_levels = int(math.ceil(10.0 / dx))
    levels = -5.0 + dx * (np.arange(n_levels) + 0.5)
    res = occupation_residual_batch(w, grid, lambda x, s: 1.0 * (x + 0.0 * s >= 0.0), levels, eps)
    assert res.mean() < 0.03
    res_shift = occupation_residual_batch(
        w, grid, lambda x, s: 1.0 * (x + 0.5 * s >= 0.0), levels, eps
    )
    assert res_shift.mean() < 0.04


def test_occupation_residual_single_matches_batch():
    w, grid = _w_matrix(3, 512)
    levels = np.linspace(-4.0, 4.0, 201)
    psi = lambda x, s: 1.0 * (x + 0.25 * s >= 0.0)  # noqa: E731
    batch = occupation_residual_batch(w, grid, psi, levels)
    for row in range(3):
        path = Path(grid=grid, values=w[row])
        assert occupation_formula_residual(path, psi, levels) == pytest.approx(batch[row])


def test_occupation_residual_rejects_negative_psi():
    path = _brownian(5, 128)
    with pytest.raises(ValueError, match="non-negative"):
        occupation_formula_residual(path, lambda x, s: x + 0.0 * s, np.linspace(-4, 4, 41))


def test_occupation_residual_rejects_irregular_levels():
    path = _brownian(5, 128)
    with pytest.raises(ValueError, match="uniformly spaced"):
        occupation_formula_residual(
            path, lambda x, s: 0.0 * x, np.array([0.0, 0.1, 0.3])
        )
