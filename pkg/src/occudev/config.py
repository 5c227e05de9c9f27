"""Experiment configuration: strict JSON schema with lossless round-trips."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from occudev.diffusion import DRIFT_MODES
from occudev.geometry import DEFAULT_FD_STEP, MetricSpec

EXPERIMENTS = (
    "verify-arcsine",
    "local-time-check",
    "deviation-sweep",
    "weak-expansion",
    "occupation-formula",
)

#: experiments that consume the horizon grid
SWEEP_EXPERIMENTS = ("deviation-sweep", "weak-expansion")


class ConfigError(Exception):
    """Invalid configuration; maps to exit status 2."""


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class MetricConfig:
    """JSON-facing form of a MetricSpec (pi and quad stored row-major)."""

    dimension: int
    pi_matrix: tuple
    r_valid: float
    quadratic_correction: tuple | None = None
    fd_step: float = DEFAULT_FD_STEP

    @staticmethod
    def _flatten(name: str, raw, m: int) -> tuple:
        arr = np.asarray(raw, dtype=float)
        if arr.shape == (m, m):
            arr = arr.reshape(-1)
        _require(arr.shape == (m * m,), f"{name} must have {m}x{m} entries (row-major)")
        _require(bool(np.all(np.isfinite(arr))), f"{name} must be finite")
        return tuple(float(v) for v in arr)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricConfig":
        _require(isinstance(d, dict), "metric must be an object")
        allowed = {"dimension", "pi_matrix", "r_valid", "quadratic_correction", "fd_step"}
        unknown = set(d) - allowed
        _require(not unknown, f"unknown metric keys: {sorted(unknown)}")
        _require("dimension" in d and "pi_matrix" in d and "r_valid" in d,
                 "metric needs dimension, pi_matrix and r_valid")
        n = d["dimension"]
        _require(isinstance(n, int) and n >= 2, "metric dimension must be an integer >= 2")
        m = n - 1
        pi = cls._flatten("pi_matrix", d["pi_matrix"], m)
        quad = d.get("quadratic_correction")
        if quad is not None:
            quad = cls._flatten("quadratic_correction", quad, m)
        r_valid = d["r_valid"]
        _require(isinstance(r_valid, (int, float)) and r_valid > 0, "r_valid must be positive")
        fd_step = d.get("fd_step", DEFAULT_FD_STEP)
        _require(isinstance(fd_step, (int, float)) and fd_step > 0, "fd_step must be positive")
        return cls(dimension=n, pi_matrix=pi, r_valid=float(r_valid),
                   quadratic_correction=quad, fd_step=float(fd_step))

    def to_dict(self) -> dict:
        out = {
            "dimension": self.dimension,
            "pi_matrix": list(self.pi_matrix),
            "r_valid": self.r_valid,
        }
        if self.quadratic_correction is not None:
            out["quadratic_correction"] = list(self.quadratic_correction)
        out["fd_step"] = self.fd_step
        return out

    def spec(self) -> MetricSpec:
        m = self.dimension - 1
        pi = np.asarray(self.pi_matrix, dtype=float).reshape(m, m)
        quad = None
        if self.quadratic_correction is not None:
            quad = np.asarray(self.quadratic_correction, dtype=float).reshape(m, m)
        try:
            return MetricSpec(n=self.dimension, pi=pi, r_valid=self.r_valid,
                              quad=quad, fd_step=self.fd_step)
        except ValueError as exc:
            raise ConfigError(f"invalid metric: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description; round-trips through JSON."""

    experiment: str
    n_steps: int
    n_rep: int
    t_grid: tuple = ()
    alpha: float = 0.3
    drift_mode: str = "exact_b1"
    metric: MetricConfig | None = None
    master_seed: int = 0
    threads: int = 0
    output_dir: str = "occudev-out"

    def __post_init__(self):
        _require(self.experiment in EXPERIMENTS,
                 f"experiment must be one of {list(EXPERIMENTS)}")
        _require(isinstance(self.n_steps, int) and self.n_steps >= 2,
                 "n_steps must be an integer >= 2")
        _require(isinstance(self.n_rep, int) and self.n_rep >= 1,
                 "N must be an integer >= 1")
        ts = tuple(float(t) for t in self.t_grid)
        object.__setattr__(self, "t_grid", ts)
        for t in ts:
            _require(math.isfinite(t) and 0.0 < t <= 1.0, "t_grid entries must lie in (0, 1]")
        _require(all(ts[i] > ts[i + 1] for i in range(len(ts) - 1)),
                 "t_grid must be strictly decreasing")
        if self.experiment in SWEEP_EXPERIMENTS:
            _require(len(ts) >= 3, f"{self.experiment} needs a t_grid with >= 3 horizons")
        _require(0.0 < self.alpha < 0.5, "alpha must lie in (0, 1/2)")
        _require(self.drift_mode in DRIFT_MODES,
                 f"drift_mode must be one of {list(DRIFT_MODES)}")
        if self.experiment in SWEEP_EXPERIMENTS and self.drift_mode == "exact_b1":
            _require(self.metric is not None,
                     "drift_mode 'exact_b1' needs a metric block")
        _require(isinstance(self.master_seed, int) and 0 <= self.master_seed < 2**64,
                 "master_seed must be a 64-bit unsigned integer")
        _require(isinstance(self.threads, int) and self.threads >= 0,
                 "threads must be a non-negative integer (0 = auto)")
        _require(isinstance(self.output_dir, str) and self.output_dir != "",
                 "output_dir must be a non-empty string")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _require(isinstance(d, dict), "config must be a JSON object")
        allowed = {"experiment", "n_steps", "N", "t_grid", "alpha", "drift_mode",
                   "metric", "master_seed", "threads", "output_dir"}
        unknown = set(d) - allowed
        _require(not unknown, f"unknown config keys: {sorted(unknown)}")
        for key in ("experiment", "n_steps", "N"):
            _require(key in d, f"config key '{key}' is required")
        metric = d.get("metric")
        if metric is not None:
            metric = MetricConfig.from_dict(metric)
        try:
            return cls(
                experiment=d["experiment"],
                n_steps=d["n_steps"],
                n_rep=d["N"],
                t_grid=tuple(d.get("t_grid", ())),
                alpha=d.get("alpha", 0.3),
                drift_mode=d.get("drift_mode", "exact_b1"),
                metric=metric,
                master_seed=d.get("master_seed", 0),
                threads=d.get("threads", 0),
                output_dir=d.get("output_dir", "occudev-out"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {
            "experiment": self.experiment,
            "n_steps": self.n_steps,
            "N": self.n_rep,
            "t_grid": list(self.t_grid),
            "alpha": self.alpha,
            "drift_mode": self.drift_mode,
        }
        if self.metric is not None:
            out["metric"] = self.metric.to_dict()
        out["master_seed"] = self.master_seed
        out["threads"] = self.threads
        out["output_dir"] = self.output_dir
        return out

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def with_overrides(self, master_seed=None, threads=None, output_dir=None):
        cfg = self
        if master_seed is not None:
            cfg = replace(cfg, master_seed=master_seed)
        if threads is not None:
            cfg = replace(cfg, threads=threads)
        if output_dir is not None:
            cfg = replace(cfg, output_dir=output_dir)
        return cfg

    def resolved_threads(self) -> int:
        """0 means auto: the OCCUDEV_THREADS variable, then the CPU count."""
        if self.threads > 0:
            return self.threads
        env = os.environ.get("OCCUDEV_THREADS", "").strip()
        if env:
            try:
                k = int(env)
            except ValueError as exc:
                raise ConfigError(f"OCCUDEV_THREADS is not an integer: {env!r}") from exc
            if k > 0:
                return k
        return os.cpu_count() or 1

    def metric_spec(self) -> MetricSpec | None:
        return None if self.metric is None else self.metric.spec()
