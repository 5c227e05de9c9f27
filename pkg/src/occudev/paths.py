"""Reproducible Brownian increments and paths on the uniform grid over [0, 1].

Every stream is a pure function of (master_seed, replicate_index): the pair is
hashed into a Philox counter-based generator, so replications are independent
and can be produced in any order and merged deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HORIZON = 1.0


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = s_0 < s_1 < ... < s_n = 1 with n_steps = n cells."""

    n_steps: int

    def __post_init__(self):
        if not isinstance(self.n_steps, (int, np.integer)) or self.n_steps < 2:
            raise ValueError(f"n_steps must be an integer >= 2, got {self.n_steps!r}")

    @property
    def dt(self) -> float:
        return HORIZON / self.n_steps

    def times(self) -> np.ndarray:
        """Grid points s_k = k*dt, shape (n_steps+1,)."""
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one replication stream."""

    master_seed: int
    replicate_index: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")
        if int(self.replicate_index) < 0:
            raise ValueError("replicate_index must be non-negative")

    def generator(self) -> np.random.Generator:
        """Fresh counter-based generator for this (master, replicate) pair."""
        ss = np.random.SeedSequence((int(self.master_seed), int(self.replicate_index)))
        return np.random.Generator(np.random.Philox(seed=ss))


@dataclass(frozen=True)
class Path:
    """A trajectory sampled on `grid`; values[..., 0] is the start point.

    `values` has shape (n_steps+1,) for scalar paths and (dim, n_steps+1)
    otherwise. Entries must be finite.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (1, 2):
            raise ValueError("values must be a 1-d or 2-d array")
        if v.shape[-1] != self.grid.n_steps + 1:
            raise ValueError(
                f"values length {v.shape[-1]} does not match grid with "
                f"{self.grid.n_steps} steps"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("path contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]

    def scalar(self) -> np.ndarray:
        """First coordinate as a flat (n_steps+1,) array."""
        return self.values if self.values.ndim == 1 else self.values[0]


def sample_increments(seed: SeedSpec, grid: TimeGrid, dim: int = 1) -> np.ndarray:
    """Draw a (dim, n_steps) block of independent N(0, dt) increments.

    Deterministic in `seed`; row 0 is unchanged when `dim` grows, so the
    driving scalar motion is shared across ambient dimensions for one seed.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    g = seed.generator()
    z = g.standard_normal((dim, grid.n_steps))
    return np.sqrt(grid.dt) * z


def build_bm_path(increments: np.ndarray, grid: TimeGrid | None = None) -> Path:
    """Prefix-sum one increment row into a Brownian path started at 0."""
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 2:
        if inc.shape[0] != 1:
            raise ValueError("build_bm_path expects a single increment row")
        inc = inc[0]
    if inc.ndim != 1:
        raise ValueError("increments must be a 1-d array or a single row")
    if grid is None:
        grid = TimeGrid(inc.size)
    elif grid.n_steps != inc.size:
        raise ValueError("grid size does not match increments")
    values = np.empty(inc.size + 1)
    values[0] = 0.0
    np.cumsum(inc, out=values[1:])
    return Path(grid=grid, values=values)
