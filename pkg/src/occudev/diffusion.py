"""Time-scaled diffusion near the hypersurface, coupled to one driving motion.

For horizon t, the first coordinate solves
    X1_{k+1} = X1_k + sqrt(t) dW1_k + (t/2) b1(X_k) dt
with b1 the normal drift of the metric, while the tangential block diffuses
with the inverse-metric square root (drift_mode "exact_b1"). Modes
"constant_H" and "zero" freeze the drift at the mean curvature or at nothing
and skip the tangential coordinates. Every derived quantity of one
replication (occupation time, arcsine comparators, local-time functional,
exit flag) comes from the same increment block, so differences of functionals
are variance-reduced by construction.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from occudev import _kernels
from occudev.geometry import MetricSpec
from occudev.paths import Path, SeedSpec, TimeGrid, sample_increments

DRIFT_MODES = ("exact_b1", "constant_H", "zero")

#: replication block size; fixed so results never depend on the thread count
CHUNK_SIZE = 512


@dataclass(frozen=True)
class ScaledRunConfig:
    """One (horizon, geometry, drift mode) setting for scaled runs.

    ``alpha`` sets the diagnostic ball radius t**alpha for the exit time.
    ``spec`` may be None for a flat ambient space (zero mean curvature).
    """

    t: float
    grid: TimeGrid
    spec: MetricSpec | None = None
    drift_mode: str = "exact_b1"
    alpha: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.t <= 1.0:
            raise ValueError("t must lie in (0, 1]")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 1/2)")
        if self.drift_mode not in DRIFT_MODES:
            raise ValueError(f"drift_mode must be one of {DRIFT_MODES}")
        if self.drift_mode == "exact_b1" and self.spec is None:
            raise ValueError("drift_mode 'exact_b1' needs a MetricSpec")

    @property
    def H(self) -> float:
        return 0.0 if self.spec is None else self.spec.H

    @property
    def dim(self) -> int:
        """Number of simulated coordinates (1 for the frozen-drift modes)."""
        return self.spec.n if self.drift_mode == "exact_b1" else 1

    @property
    def sqrt_t(self) -> float:
        return math.sqrt(self.t)

    @property
    def ball_radius(self) -> float:
        return self.t**self.alpha

    @property
    def ball2(self) -> float:
        return self.ball_radius**2

    @property
    def drift_slope(self) -> float:
        """Coefficient of s in the frozen-drift displacement (t/2) H s."""
        return 0.5 * self.t * self.H

    def comparator_slope(self) -> float:
        """Slope of the drifted arcsine comparator W_s + (sqrt(t) H / 2) s."""
        return 0.5 * self.sqrt_t * self.H

    def pi_eigs(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and eigenvectors of the second fundamental form."""
        if self.spec is None:
            raise ValueError("no metric attached")
        return np.linalg.eigh(self.spec.pi)

    def quad_eigenframe(self) -> np.ndarray | None:
        """Quadratic correction rotated into the eigenframe, or None."""
        if self.spec is None or self.spec.quad is None:
            return None
        _, u = self.pi_eigs()
        return u.T @ self.spec.quad @ u


@dataclass(frozen=True)
class DeviationSample:
    """Per-replication coupled readout for one horizon t."""

    t: float
    T_t: float
    A1: float
    A1_drift: float
    I_udL: float
    exited: bool
    seed: SeedSpec
    ok: bool = True

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "T_t": self.T_t,
            "A1": self.A1,
            "A1_drift": self.A1_drift,
            "I_udL": self.I_udL,
            "exited": self.exited,
            "ok": self.ok,
            "seed": {
                "master_seed": self.seed.master_seed,
                "replicate_index": self.seed.replicate_index,
            },
        }


def _run_block(dW, cfg: ScaledRunConfig, backend=None, record=False):
    """Dispatch one (B, dim, n) block through the right stepping kernel."""
    grid = cfg.grid
    if cfg.drift_mode == "exact_b1":
        d, _ = cfg.pi_eigs()
        return _kernels.euler_curved(
            dW,
            cfg.sqrt_t,
            cfg.t,
            grid.dt,
            d,
            cfg.spec.r_valid,
            cfg.ball2,
            cquad=cfg.quad_eigenframe(),
            fd_base=cfg.spec.fd_step,
            backend=backend,
            record=record,
        )
    slope = cfg.drift_slope if cfg.drift_mode == "constant_H" else 0.0
    out = _kernels.euler_scalar(
        dW[:, 0, :], cfg.sqrt_t, slope, grid.dt, cfg.ball2, backend=backend
    )
    if record:
        w = np.cumsum(dW[:, 0, :], axis=1)
        s = np.arange(1, grid.n_steps + 1) * grid.dt
        x = cfg.sqrt_t * w + slope * s
        traj = np.zeros((grid.n_steps + 1, dW.shape[0], 1))
        traj[1:, :, 0] = x.T
        return out + (traj,)
    return out


def simulate_scaled(increments, cfg: ScaledRunConfig):
    """Run one replication and return its trajectory and first exit time.

    ``increments`` is the (dim, n_steps) block whose first row drives the
    normal coordinate. For the exact drift mode the tangential coordinates
    are simulated in the eigenframe of the second fundamental form and
    rotated back. Returns (Path, tau) with tau = +inf when the ball
    |X| > t**alpha is never left; raises FloatingPointError if the state
    degenerates.
    """
    inc = np.atleast_2d(np.asarray(increments, dtype=float))
    if inc.shape[0] < cfg.dim:
        raise ValueError(f"need {cfg.dim} increment rows, got {inc.shape[0]}")
    inc = inc[: cfg.dim]
    if inc.shape[1] != cfg.grid.n_steps:
        raise ValueError("increment block does not match the time grid")
    counts, tau_idx, ok, traj = _run_block(inc[None, :, :], cfg, record=True)
    if not ok[0]:
        raise FloatingPointError("scaled diffusion reached a non-finite state")
    values = traj[:, 0, :].T  # (dim, n+1), eigenframe
    if cfg.drift_mode == "exact_b1" and cfg.dim > 1:
        _, u = cfg.pi_eigs()
        values = np.vstack([values[0:1], u @ values[1:]])
    if values.shape[0] == 1:
        values = values[0]
    path = Path(grid=cfg.grid, values=values)
    tau = float(tau_idx[0] * cfg.grid.dt) if tau_idx[0] > 0 else math.inf
    return path, tau


def occupation_positive(values, grid: TimeGrid | None = None) -> float:
    """Fraction of grid cells with the (first) coordinate >= 0.

    The start point is excluded: it sits exactly on the dividing level and
    would contribute a deterministic dt of measure-zero origin.
    """
    if isinstance(values, Path):
        grid = values.grid
        vals = values.scalar()
    else:
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("occupation_positive expects a scalar series")
        if grid is None:
            grid = TimeGrid(vals.size - 1)
        elif grid.n_steps + 1 != vals.size:
            raise ValueError("series length does not match grid")
    return int((vals[1:] >= 0.0).sum()) * grid.dt


def deviation_sample(seed: SeedSpec, cfg: ScaledRunConfig,
                     backend: str | None = None) -> DeviationSample:
    """Draw one replication and compute its coupled deviation readout."""
    inc = sample_increments(seed, cfg.grid, cfg.dim)
    batch = _deviation_block(inc[None, :, :], cfg, backend=backend)
    return DeviationSample(
        t=cfg.t,
        T_t=float(batch["T"][0]),
        A1=float(batch["A1"][0]),
        A1_drift=float(batch["A1_drift"][0]),
        I_udL=float(batch["I"][0]),
        exited=bool(batch["exited"][0]),
        seed=seed,
        ok=bool(batch["ok"][0]),
    )


def _deviation_block(dW, cfg: ScaledRunConfig, backend=None):
    """All per-sample quantities for one increment block, as arrays."""
    grid = cfg.grid
    dt = grid.dt
    counts, tau_idx, ok = _run_block(dW, cfg, backend=backend)
    w1, a_counts, l1, iudl, viol = _kernels.w_functionals(dW[:, 0, :], dt, backend=backend)
    w_grid = np.cumsum(dW[:, 0, :], axis=1)
    drift_counts = _kernels.drifted_occupation_counts(w_grid, cfg.comparator_slope(), dt)
    out = {
        "T": counts * dt,
        "A1": a_counts * dt,
        "A1_drift": drift_counts * dt,
        "I": iudl,
        "L1": l1,
        "W1": w1,
        "viol": viol,
        "exited": tau_idx > 0,
        "ok": np.asarray(ok, dtype=bool),
    }
    bad = ~out["ok"]
    if np.any(bad):
        for key in ("T", "A1", "A1_drift", "I", "L1", "W1"):
            out[key] = out[key].astype(float, copy=True)
            out[key][bad] = np.nan
    return out


@dataclass
class DeviationBatch:
    """Column-wise DeviationSample collection for one horizon t."""

    t: float
    H: float
    master_seed: int
    T: np.ndarray
    A1: np.ndarray
    A1_drift: np.ndarray
    I: np.ndarray
    exited: np.ndarray
    ok: np.ndarray

    @property
    def n(self) -> int:
        return self.T.size

    def residual(self) -> np.ndarray:
        """Pathwise remainder T - A1 - (sqrt(t) H / 2) I for healthy samples."""
        good = self.ok
        return (
            self.T[good]
            - self.A1[good]
            - 0.5 * math.sqrt(self.t) * self.H * self.I[good]
        )


def _chunk_ranges(n: int, chunk: int):
    return [(a, min(a + chunk, n)) for a in range(0, n, chunk)]


def _draw_block(master_seed: int, start: int, stop: int, grid: TimeGrid, dim: int):
    block = np.empty((stop - start, dim, grid.n_steps))
    for j, r in enumerate(range(start, stop)):
        block[j] = sample_increments(SeedSpec(master_seed, r), grid, dim)
    return block


def run_deviation_sweep(master_seed: int, n_rep: int, grid: TimeGrid,
                        t_grid, spec: MetricSpec | None,
                        drift_mode: str = "exact_b1", alpha: float = 0.3,
                        threads: int = 1, backend: str | None = None,
                        chunk: int = CHUNK_SIZE) -> list[DeviationBatch]:
    """Coupled deviation samples for every t, sharing paths across horizons.

    Replication r always uses the stream (master_seed, r); chunks have a fixed
    size, results are merged by replicate order, and each path's arithmetic is
    independent of the batch split, so the output is identical for any thread
    count.
    """
    cfgs = [
        ScaledRunConfig(t=float(t), grid=grid, spec=spec, drift_mode=drift_mode, alpha=alpha)
        for t in t_grid
    ]
    if not cfgs:
        raise ValueError("t_grid must be non-empty")
    dim = max(c.dim for c in cfgs)
    h = cfgs[0].H

    columns = ("T", "A1", "A1_drift", "I", "exited", "ok")
    store = {
        c.t: {k: np.empty(n_rep, dtype=bool if k in ("exited", "ok") else float)
              for k in columns}
        for c in cfgs
    }

    def work(rng_range):
        start, stop = rng_range
        block = _draw_block(master_seed, start, stop, grid, dim)
        results = []
        for c in cfgs:
            results.append((c.t, _deviation_block(block[:, : c.dim, :], c, backend=backend)))
        return start, stop, results

    ranges = _chunk_ranges(n_rep, chunk)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(work, ranges))
    else:
        outputs = [work(r) for r in ranges]
    for start, stop, results in outputs:
        for t, block in results:
            for k in columns:
                store[t][k][start:stop] = block[k]
    return [
        DeviationBatch(
            t=c.t, H=h, master_seed=master_seed,
            T=store[c.t]["T"], A1=store[c.t]["A1"], A1_drift=store[c.t]["A1_drift"],
            I=store[c.t]["I"], exited=store[c.t]["exited"], ok=store[c.t]["ok"],
        )
        for c in cfgs
    ]


def run_w_ensemble(master_seed: int, n_rep: int, grid: TimeGrid,
                   threads: int = 1, backend: str | None = None,
                   chunk: int = CHUNK_SIZE) -> dict:
    """Per-replication Brownian functionals (no diffusion): W1, A1, L1, I, viol."""
    keys = ("W1", "A1", "L1", "I", "viol")
    out = {k: np.empty(n_rep) for k in keys}

    def work(rng_range):
        start, stop = rng_range
        block = _draw_block(master_seed, start, stop, grid, 1)
        w1, counts, l1, iudl, viol = _kernels.w_functionals(
            block[:, 0, :], grid.dt, backend=backend
        )
        return start, stop, (w1, counts * grid.dt, l1, iudl, viol)

    ranges = _chunk_ranges(n_rep, chunk)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(work, ranges))
    else:
        outputs = [work(r) for r in ranges]
    for start, stop, values in outputs:
        for k, v in zip(keys, values):
            out[k][start:stop] = v
    return out
