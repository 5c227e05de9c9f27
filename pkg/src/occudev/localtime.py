"""Local time of a discretized Brownian path at a level, by three estimators.

The reference estimator discretizes the absolute-value decomposition of the
path around the level (`tanaka`); the other two (`interval` occupation
density, `downcrossing` counting) exist to detect implementation bias: all
three must agree on desk-scale ensembles. The functional integral u dL over
[0, 1] is evaluated both by parts and as a direct Stieltjes sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from occudev.paths import Path, TimeGrid

#: bandwidths below sqrt(dt)/10 leave the interval estimator statistically starved
STARVED_FACTOR = 0.1


def _times_to_indices(grid: TimeGrid, times) -> np.ndarray:
    """Map requested times to grid indices floor(s/dt), full grid when None."""
    if times is None:
        return np.arange(grid.n_steps + 1)
    s = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(s < 0) or np.any(s > 1.0 + 1e-12):
        raise ValueError("requested times must lie in [0, 1]")
    idx = np.floor(s / grid.dt + 1e-9).astype(int)
    return np.clip(idx, 0, grid.n_steps)


def _scalar_values(path: Path) -> np.ndarray:
    if path.dim != 1:
        raise ValueError("local time estimators need a 1-dimensional path")
    return path.scalar()


def local_time_tanaka(path: Path, x: float = 0.0, times=None, return_violation: bool = False):
    """Local time curve at level ``x`` from the discrete absolute-value identity.

    The raw curve is |W_s - x| - |W_0 - x| - sum_k sgn(W_k - x) dW_k with
    sgn(0) = 0, then clamped to its running maximum so the increments form a
    non-negative measure. Returns the curve at the requested times; with
    ``return_violation`` also the largest clamp correction that was applied.
    """
    w = _scalar_values(path)
    dw = np.diff(w)
    sgn = np.sign(w[:-1] - x)
    mart = np.empty(w.size)
    mart[0] = 0.0
    np.cumsum(sgn * dw, out=mart[1:])
    raw = np.abs(w - x) - abs(w[0] - x) - mart
    clamped = np.maximum.accumulate(raw)
    violation = float(np.max(clamped - raw))
    idx = _times_to_indices(path.grid, times)
    curve = clamped[idx]
    if return_violation:
        return curve, violation
    return curve


def local_time_interval(path: Path, x: float = 0.0, eps: float | None = None, times=None):
    """Occupation-density estimate: time spent in (x-eps, x+eps) over 2*eps."""
    w = _scalar_values(path)
    dt = path.grid.dt
    if eps is None:
        eps = np.sqrt(dt)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if eps < STARVED_FACTOR * np.sqrt(dt):
        warnings.warn(
            f"bandwidth eps={eps:g} is below sqrt(dt)/10; the interval "
            "estimator is statistically starved at this resolution",
            stacklevel=2,
        )
    inside = (np.abs(w[:-1] - x) < eps).astype(float)
    counts = np.empty(w.size)
    counts[0] = 0.0
    np.cumsum(inside, out=counts[1:])
    curve_full = (dt / (2.0 * eps)) * counts
    return curve_full[_times_to_indices(path.grid, times)]


def local_time_downcrossing(path: Path, x: float = 0.0, eps: float | None = None, times=None):
    """2*eps times the number of completed downcrossings of [x, x+eps]."""
    w = _scalar_values(path)
    dt = path.grid.dt
    if eps is None:
        eps = np.sqrt(dt)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if eps < STARVED_FACTOR * np.sqrt(dt):
        warnings.warn(
            f"bandwidth eps={eps:g} is below sqrt(dt)/10; the downcrossing "
            "estimator is statistically starved at this resolution",
            stacklevel=2,
        )
    state = np.zeros(w.size, dtype=np.int8)
    state[w >= x + eps] = 1
    state[w <= x] = -1
    # last non-zero state seen strictly before each index
    pos = np.arange(w.size)
    last_nz = np.maximum.accumulate(np.where(state != 0, pos, -1))
    prev_nz = np.concatenate(([-1], last_nz[:-1]))
    prev_state = np.where(prev_nz >= 0, state[np.clip(prev_nz, 0, None)], 0)
    completes = (state == -1) & (prev_state == 1)
    d_curve = np.cumsum(completes.astype(float))
    curve_full = 2.0 * eps * d_curve
    return curve_full[_times_to_indices(path.grid, times)]


_ESTIMATORS = {
    "tanaka": local_time_tanaka,
    "interval": local_time_interval,
    "downcrossing": local_time_downcrossing,
}


@dataclass(frozen=True)
class LocalTimeProfile:
    """Local time estimates on a (level x time) grid with estimator provenance."""

    levels: np.ndarray
    times: np.ndarray
    L: np.ndarray
    method: str
    bandwidth: float | None
    starved: bool = False

    def __post_init__(self):
        if self.L.shape != (len(self.levels), len(self.times)):
            raise ValueError("L must have shape (n_levels, n_times)")
        if np.any(self.L < 0):
            raise ValueError("local time must be non-negative")
        if np.any(np.diff(self.L, axis=1) < 0):
            raise ValueError("local time must be non-decreasing in time")


def local_time_profile(path: Path, levels, method: str = "tanaka",
                       eps: float | None = None, times=None) -> LocalTimeProfile:
    """Estimate the local time at every requested level."""
    if method not in _ESTIMATORS:
        raise ValueError(f"unknown method {method!r}; pick one of {sorted(_ESTIMATORS)}")
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    dt = path.grid.dt
    if method == "tanaka":
        bandwidth = None
        rows = [local_time_tanaka(path, x, times) for x in levels]
        starved = False
    else:
        bandwidth = float(np.sqrt(dt) if eps is None else eps)
        starved = bandwidth < STARVED_FACTOR * np.sqrt(dt)
        est = _ESTIMATORS[method]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rows = [est(path, x, bandwidth, times) for x in levels]
    t_idx = _times_to_indices(path.grid, times)
    return LocalTimeProfile(
        levels=levels,
        times=t_idx * dt,
        L=np.vstack(rows),
        method=method,
        bandwidth=bandwidth,
        starved=starved,
    )


def _curve_and_grid(source, grid: TimeGrid | None):
    if isinstance(source, Path):
        return local_time_tanaka(source), source.grid
    curve = np.asarray(source, dtype=float)
    if curve.ndim != 1 or curve.size < 3:
        raise ValueError("curve must be a 1-d array over the full time grid")
    if grid is None:
        grid = TimeGrid(curve.size - 1)
    elif grid.n_steps + 1 != curve.size:
        raise ValueError("curve length does not match grid")
    return curve, grid


def stieltjes_integral_u_dL(source, grid: TimeGrid | None = None) -> float:
    """Direct left-endpoint Stieltjes sum  sum_k u_k (L_{k+1} - L_k)."""
    curve, grid = _curve_and_grid(source, grid)
    u = grid.times()[:-1]
    return float(np.dot(u, np.diff(curve)))


def integral_u_dL(source, grid: TimeGrid | None = None) -> float:
    """The functional  integral of u dL_u  over [0, 1], by parts.

    ``source`` is a path (its level-0 tanaka curve is used) or a local time
    curve on the full grid. Computed as L_1 - trapezoid(L); the direct
    Stieltjes sum must agree within pure discretization algebra, otherwise the
    curve is inconsistent and a RuntimeError is raised. Curves that decrease
    by more than a clamping tolerance are rejected.
    """
    curve, grid = _curve_and_grid(source, grid)
    dt = grid.dt
    dips = np.diff(curve)
    worst_dip = -float(min(dips.min(initial=0.0), 0.0))
    tol_dip = 1e-9 * (1.0 + float(np.max(np.abs(curve))))
    if worst_dip > tol_dip:
        raise ValueError(
            f"curve decreases by {worst_dip:g}, beyond the clamping tolerance {tol_dip:g}"
        )
    if worst_dip > 0.0:
        curve = np.maximum.accumulate(curve)
    l1 = float(curve[-1])
    trapezoid = dt * (0.5 * curve[0] + float(curve[1:-1].sum()) + 0.5 * curve[-1])
    by_parts = l1 - trapezoid
    direct = stieltjes_integral_u_dL(curve, grid)
    if abs(direct - by_parts) > 1e-8 + 2.0 * dt * abs(l1):
        raise RuntimeError(
            f"Stieltjes sum {direct:g} and by-parts value {by_parts:g} disagree "
            "beyond discretization algebra; the curve is not a valid local time"
        )
    return by_parts


def occupation_residual_batch(w_grid: np.ndarray, grid: TimeGrid, psi, levels,
                              eps: float | None = None) -> np.ndarray:
    """Occupation-formula residuals for a (B, n_steps+1) batch of path levels.

    For each path this is the gap between the time integral of psi(W_s, s)
    and the level-space integral of psi against interval-estimator local time
    increments on the uniform ``levels`` grid with bandwidth ``eps`` (default:
    half the level spacing, which tiles the line). ``psi`` must be
    non-negative, bounded and vectorized over numpy arrays.
    """
    w = np.atleast_2d(np.asarray(w_grid, dtype=float))
    if w.shape[1] != grid.n_steps + 1:
        raise ValueError("path levels do not match the grid")
    dt = grid.dt
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or levels.size < 2:
        raise ValueError("levels must be a 1-d grid with at least 2 points")
    spacing = np.diff(levels)
    dx = float(spacing[0])
    if dx <= 0 or not np.allclose(spacing, dx, rtol=1e-9, atol=0.0):
        raise ValueError("levels must be uniformly spaced and increasing")
    if eps is None:
        eps = 0.5 * dx
    if eps <= 0:
        raise ValueError("eps must be positive")

    s_left = grid.times()[:-1]
    w_left = w[:, :-1]
    m = np.asarray(psi(levels[:, None], s_left[None, :]), dtype=float)
    if m.shape != (levels.size, s_left.size):
        raise ValueError("psi must broadcast over (levels, times) grids")
    if not np.all(np.isfinite(m)) or m.min() < 0:
        raise ValueError("psi must be non-negative and bounded on the grid")

    lhs = dt * np.asarray(psi(w_left, s_left[None, :]), dtype=float).sum(axis=1)

    # column prefix sums let every (W_k - eps, W_k + eps) window be a O(1) gather
    prefix = np.zeros((levels.size + 1, s_left.size))
    np.cumsum(m, axis=0, out=prefix[1:])
    lo = np.searchsorted(levels, w_left - eps, side="right")
    hi = np.searchsorted(levels, w_left + eps, side="left")
    cols = np.arange(s_left.size)[None, :]
    window_sums = prefix[hi, cols] - prefix[lo, cols]
    rhs = (dt / (2.0 * eps)) * dx * window_sums.sum(axis=1)
    return np.abs(lhs - rhs)


def occupation_formula_residual(path: Path, psi, levels, eps: float | None = None) -> float:
    """Occupation-formula residual of a single path; see occupation_residual_batch."""
    w = _scalar_values(path)
    return float(occupation_residual_batch(w[None, :], path.grid, psi, levels, eps)[0])


def batch_interval_l1(w_grid: np.ndarray, dt: float, x: float = 0.0,
                      eps: float | None = None) -> np.ndarray:
    """Endpoint interval-estimator local time for a (B, n_steps+1) level batch."""
    if eps is None:
        eps = np.sqrt(dt)
    inside = np.abs(w_grid[:, :-1] - x) < eps
    return (dt / (2.0 * eps)) * inside.sum(axis=1)


def batch_downcrossing_l1(w_grid: np.ndarray, dt: float, x: float = 0.0,
                          eps: float | None = None) -> np.ndarray:
    """Endpoint downcrossing-estimator local time for a (B, n_steps+1) batch."""
    if eps is None:
        eps = np.sqrt(dt)
    state = np.zeros(w_grid.shape, dtype=np.int8)
    state[w_grid >= x + eps] = 1
    state[w_grid <= x] = -1
    pos = np.arange(w_grid.shape[1])[None, :]
    last_nz = np.maximum.accumulate(np.where(state != 0, pos, -1), axis=1)
    prev_nz = np.concatenate([np.full((w_grid.shape[0], 1), -1), last_nz[:, :-1]], axis=1)
    rows = np.arange(w_grid.shape[0])[:, None]
    prev_state = np.where(prev_nz >= 0, state[rows, np.clip(prev_nz, 0, None)], 0)
    completes = (state == -1) & (prev_state == 1)
    return 2.0 * eps * completes.sum(axis=1).astype(float)
