"""Experiment orchestration: seeded parallel runs, assertions, artifacts.

Every experiment writes four artifacts into its output directory, atomically
(write-then-rename): ``config.echo.json`` (the fully resolved configuration),
``results.json`` and ``results.csv`` (deterministic: no timing, identical for
any thread count), and ``summary.txt`` (human-readable pass/fail lines next
to the versioned tolerance table). Exit status: 0 all assertions pass,
2 configuration error, 3 numerical failure, 4 assertion failure.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from occudev import _kernels
from occudev.config import ConfigError, ExperimentConfig
from occudev.diffusion import (
    DeviationSample,
    ScaledRunConfig,
    SeedSpec,
    _draw_block,
    deviation_sample,
    run_deviation_sweep,
    run_w_ensemble,
)
from occudev.localtime import (
    batch_downcrossing_l1,
    batch_interval_l1,
    occupation_residual_batch,
)
from occudev.paths import TimeGrid
from occudev.statistics import (
    MEAN_INT_U_DL,
    MEAN_L1,
    batch_stats,
    cmean,
    fit_deviation_coefficient,
    ks_against,
    ks_two_sample,
    weak_expansion_check,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ASSERTION = 4

TOLERANCE_TABLE_VERSION = 1

#: thresholds applied by the built-in assertions, versioned and echoed next to
#: the numbers they judge
TOLERANCES = {
    "verify-arcsine": {"ks_max": 0.01},
    "local-time-check": {
        "mean_l1_rtol": 0.02,
        "ks_half_normal_max": 0.015,
        "mean_iudl_rtol": 0.02,
        "cross_estimator_mad_max": 0.05,
    },
    "deviation-sweep": {
        "coefficient_rtol": 0.15,
        "remainder_slope_lo": 0.6,
        "remainder_slope_hi": 0.9,
    },
    "weak-expansion": {"slope_rtol": 0.20},
    "occupation-formula": {
        "halfspace_residual_max": 0.02,
        "shifted_residual_max": 0.03,
    },
}

SWEEP_CSV_HEADER = [
    "t", "N", "mean_dev_over_sqrt_t", "stderr", "paired_mean", "paired_stderr",
    "residual_L1", "residual_L2", "exit_fraction",
]


@dataclass(frozen=True)
class Assertion:
    name: str
    passed: bool
    value: float
    threshold: str


# ---------------------------------------------------------------------------
# deterministic emission: floats always carry 17 significant digits
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    return f"{x:.17g}"


def _format_cell(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return "nan" if math.isnan(v) else ("inf" if math.isinf(v) else f"{v:.17g}")
    return str(x)


def jsonable(obj):
    """Reduce dataclasses/numpy containers to plain JSON-ready values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj, indent: int = 0) -> str:
    """JSON with every float rendered at 17 significant digits."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{inner}{json.dumps(str(k))}: {dump_json(v, indent + 1)}"
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{inner}{dump_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def write_atomic(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def render_csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(v) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# experiment bodies
# ---------------------------------------------------------------------------


def _aux_generator(master_seed: int, tag: int) -> np.random.Generator:
    """Auxiliary stream that cannot collide with any replicate stream.

    Replicates hash 2-tuples (master_seed, index); auxiliary draws hash
    3-tuples, which seed different entropy pools.
    """
    ss = np.random.SeedSequence((int(master_seed), int(tag), 1))
    return np.random.Generator(np.random.Philox(seed=ss))


def _run_verify_arcsine(config: ExperimentConfig, threads: int):
    grid = TimeGrid(config.n_steps)
    ens = run_w_ensemble(config.master_seed, config.n_rep, grid, threads=threads)
    report = ks_against(ens["A1"], "arcsine")
    tol = TOLERANCES["verify-arcsine"]
    values = {
        "ks_statistic": report.statistic,
        "n_samples": report.n,
        "mean_occupation": cmean(ens["A1"]),
    }
    assertions = [
        Assertion(
            "arcsine_ks",
            report.statistic <= tol["ks_max"],
            report.statistic,
            f"<= {tol['ks_max']}",
        )
    ]
    rows = [[k, v] for k, v in values.items()]
    return values, ("metric", "value"), rows, assertions, True


def _run_local_time_check(config: ExperimentConfig, threads: int):
    grid = TimeGrid(config.n_steps)
    dt = grid.dt
    n_rep = config.n_rep
    ens = run_w_ensemble(config.master_seed, n_rep, grid, threads=threads)
    tol = TOLERANCES["local-time-check"]

    mean_l1 = cmean(ens["L1"])
    mean_i = cmean(ens["I"])
    half_normal = np.abs(_aux_generator(config.master_seed, 2).standard_normal(n_rep))
    ks2 = ks_two_sample(ens["L1"], half_normal)

    # three-way estimator agreement on a deterministic subsample
    n_cross = min(n_rep, 10_000)
    gap_interval = 0.0
    gap_down = 0.0
    done = 0
    while done < n_cross:
        stop = min(done + 512, n_cross)
        block = _draw_block(config.master_seed, done, stop, grid, 1)
        w = np.concatenate(
            [np.zeros((stop - done, 1)), np.cumsum(block[:, 0, :], axis=1)], axis=1
        )
        l1_t = ens["L1"][done:stop]
        gap_interval += float(np.abs(batch_interval_l1(w, dt) - l1_t).sum())
        gap_down += float(np.abs(batch_downcrossing_l1(w, dt) - l1_t).sum())
        done = stop
    gap_interval /= n_cross
    gap_down /= n_cross

    values = {
        "mean_L1": mean_l1,
        "mean_L1_target": MEAN_L1,
        "ks_L1_vs_abs_W1": ks2,
        "mean_I_udL": mean_i,
        "mean_I_udL_target": MEAN_INT_U_DL,
        "interval_vs_tanaka_mad": gap_interval,
        "downcrossing_vs_tanaka_mad": gap_down,
        "mean_clamp_violation": cmean(ens["viol"]),
        "n_samples": n_rep,
        "n_cross_checked": n_cross,
    }
    assertions = [
        Assertion(
            "mean_L1",
            abs(mean_l1 - MEAN_L1) <= tol["mean_l1_rtol"] * MEAN_L1,
            mean_l1,
            f"within {tol['mean_l1_rtol']:.0%} of {MEAN_L1:.5f}",
        ),
        Assertion(
            "ks_L1_vs_abs_W1",
            ks2 <= tol["ks_half_normal_max"],
            ks2,
            f"<= {tol['ks_half_normal_max']}",
        ),
        Assertion(
            "mean_I_udL",
            abs(mean_i - MEAN_INT_U_DL) <= tol["mean_iudl_rtol"] * MEAN_INT_U_DL,
            mean_i,
            f"within {tol['mean_iudl_rtol']:.0%} of {MEAN_INT_U_DL:.5f}",
        ),
        Assertion(
            "interval_vs_tanaka",
            gap_interval <= tol["cross_estimator_mad_max"],
            gap_interval,
            f"<= {tol['cross_estimator_mad_max']}",
        ),
        Assertion(
            "downcrossing_vs_tanaka",
            gap_down <= tol["cross_estimator_mad_max"],
            gap_down,
            f"<= {tol['cross_estimator_mad_max']}",
        ),
    ]
    rows = [[k, v] for k, v in values.items()]
    return values, ("metric", "value"), rows, assertions, True


def _sweep_batches(config: ExperimentConfig, threads: int):
    grid = TimeGrid(config.n_steps)
    spec = config.metric_spec()
    return run_deviation_sweep(
        config.master_seed,
        config.n_rep,
        grid,
        config.t_grid,
        spec,
        drift_mode=config.drift_mode,
        alpha=config.alpha,
        threads=threads,
    )


def _sweep_csv_rows(per_t):
    return [
        [s.t, s.n, s.mean_dev, s.stderr, s.paired_mean, s.paired_stderr,
         s.residual_l1, s.residual_l2, s.exit_fraction]
        for s in per_t
    ]


def _run_deviation_sweep(config: ExperimentConfig, threads: int):
    batches = _sweep_batches(config, threads)
    flagged = int(sum((~np.asarray(b.ok, bool)).sum() for b in batches))
    sweep = fit_deviation_coefficient(batches)
    h = batches[0].H
    target = 0.5 * h * MEAN_INT_U_DL
    tol = TOLERANCES["deviation-sweep"]
    assertions = []
    if h != 0.0:
        assertions.append(
            Assertion(
                "coefficient_band",
                abs(sweep.fitted_coefficient - target) <= tol["coefficient_rtol"] * abs(target),
                sweep.fitted_coefficient,
                f"within {tol['coefficient_rtol']:.0%} of {target:.5f}",
            )
        )
        for name, slope in (
            ("remainder_slope_L1", sweep.remainder_exponent_l1),
            ("remainder_slope_L2", sweep.remainder_exponent_l2),
        ):
            ok = (
                math.isfinite(slope)
                and tol["remainder_slope_lo"] <= slope <= tol["remainder_slope_hi"]
            )
            assertions.append(
                Assertion(
                    name, ok, slope,
                    f"in [{tol['remainder_slope_lo']}, {tol['remainder_slope_hi']}]",
                )
            )
    else:
        lo, hi = sweep.coefficient_ci
        assertions.append(
            Assertion(
                "coefficient_ci_contains_zero",
                lo <= 0.0 <= hi,
                sweep.fitted_coefficient,
                f"CI [{format_float(lo)}, {format_float(hi)}] contains 0",
            )
        )
    values = {
        "H": h,
        "target_coefficient": target,
        "flagged_samples": flagged,
        "sweep": jsonable(sweep),
    }
    rows = _sweep_csv_rows(sweep.per_t)
    return values, tuple(SWEEP_CSV_HEADER), rows, assertions, flagged == 0


def _run_weak_expansion(config: ExperimentConfig, threads: int):
    batches = _sweep_batches(config, threads)
    flagged = int(sum((~np.asarray(b.ok, bool)).sum() for b in batches))
    h = batches[0].H
    rep_linear = weak_expansion_check(lambda x: x, 1.0, batches, h=h)
    rep_square = weak_expansion_check(lambda x: (x - 1.0) ** 2, -2.0, batches, h=h)
    tol = TOLERANCES["weak-expansion"]
    assertions = []
    if h != 0.0:
        # judge the per-horizon slopes: the t -> 0 extrapolation only
        # amplifies the (common-path) noise without moving the target
        worst = max(
            abs(slope - rep_linear.predicted_slope) for _, slope, _ in rep_linear.per_t
        )
        assertions.append(
            Assertion(
                "weak_slope_linear",
                worst <= tol["slope_rtol"] * abs(rep_linear.predicted_slope),
                worst,
                f"per-t |slope - {rep_linear.predicted_slope:.5f}| within "
                f"{tol['slope_rtol']:.0%}",
            )
        )
    else:
        lo, hi = rep_linear.measured_ci
        assertions.append(
            Assertion(
                "weak_slope_ci_contains_zero",
                lo <= 0.0 <= hi,
                rep_linear.measured_slope,
                f"CI [{format_float(lo)}, {format_float(hi)}] contains 0",
            )
        )
    values = {
        "H": h,
        "flagged_samples": flagged,
        "phi_linear": jsonable(rep_linear),
        "phi_shifted_square": jsonable(rep_square),
    }
    per_t_stats = [batch_stats(b) for b in sorted(batches, key=lambda b: -b.t)]
    rows = _sweep_csv_rows(per_t_stats)
    return values, tuple(SWEEP_CSV_HEADER), rows, assertions, flagged == 0


def _run_occupation_formula(config: ExperimentConfig, threads: int):
    grid = TimeGrid(config.n_steps)
    dt = grid.dt
    eps = math.sqrt(dt)
    dx = 2.0 * eps
    span = 5.0
    n_levels = int(math.ceil(2.0 * span / dx))
    levels = -span + dx * (np.arange(n_levels) + 0.5)

    def psi_halfspace(x, s):
        return 1.0 * ((x + 0.0 * s) >= 0.0)

    def psi_shifted(x, s):
        return 1.0 * ((x + 0.5 * s) >= 0.0)

    sums = {"halfspace": 0.0, "shifted": 0.0}
    done = 0
    while done < config.n_rep:
        stop = min(done + 256, config.n_rep)
        block = _draw_block(config.master_seed, done, stop, grid, 1)
        w = np.concatenate(
            [np.zeros((stop - done, 1)), np.cumsum(block[:, 0, :], axis=1)], axis=1
        )
        sums["halfspace"] += float(
            occupation_residual_batch(w, grid, psi_halfspace, levels, eps).sum()
        )
        sums["shifted"] += float(
            occupation_residual_batch(w, grid, psi_shifted, levels, eps).sum()
        )
        done = stop
    mean_half = sums["halfspace"] / config.n_rep
    mean_shift = sums["shifted"] / config.n_rep
    tol = TOLERANCES["occupation-formula"]
    values = {
        "mean_residual_halfspace": mean_half,
        "mean_residual_shifted": mean_shift,
        "n_samples": config.n_rep,
        "n_levels": n_levels,
        "bandwidth": eps,
    }
    assertions = [
        Assertion(
            "residual_halfspace",
            mean_half <= tol["halfspace_residual_max"],
            mean_half,
            f"<= {tol['halfspace_residual_max']}",
        ),
        Assertion(
            "residual_shifted",
            mean_shift <= tol["shifted_residual_max"],
            mean_shift,
            f"<= {tol['shifted_residual_max']}",
        ),
    ]
    rows = [[k, v] for k, v in values.items()]
    return values, ("metric", "value"), rows, assertions, True


_RUNNERS = {
    "verify-arcsine": _run_verify_arcsine,
    "local-time-check": _run_local_time_check,
    "deviation-sweep": _run_deviation_sweep,
    "weak-expansion": _run_weak_expansion,
    "occupation-formula": _run_occupation_formula,
}


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig) -> int:
    """Run one experiment, write its four artifacts, return the exit status."""
    threads = config.resolved_threads()
    outdir = config.output_dir
    try:
        os.makedirs(outdir, exist_ok=True)
        probe = os.path.join(outdir, ".writable")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise ConfigError(f"output_dir {outdir!r} is not writable: {exc}") from exc

    start = time.perf_counter()
    numerics_failed = False
    failure_note = ""
    try:
        values, header, rows, assertions, numerical_ok = _RUNNERS[config.experiment](
            config, threads
        )
    except FloatingPointError as exc:
        numerics_failed = True
        failure_note = str(exc)
        values, header, rows, assertions, numerical_ok = (
            {"error": failure_note}, ("metric", "value"), [], [], False
        )
    elapsed = time.perf_counter() - start
    if not numerical_ok:
        numerics_failed = True

    resolved = config.with_overrides(threads=threads)
    write_atomic(os.path.join(outdir, "config.echo.json"),
                 dump_json(resolved.to_dict()) + "\n")

    results = {
        "experiment": config.experiment,
        "backend": _kernels.active_backend(),
        "tolerance_table_version": TOLERANCE_TABLE_VERSION,
        "tolerances": TOLERANCES[config.experiment],
        "values": jsonable(values),
        "assertions": [jsonable(a) for a in assertions],
        "numerical_ok": not numerics_failed,
    }
    write_atomic(os.path.join(outdir, "results.json"), dump_json(results) + "\n")
    write_atomic(os.path.join(outdir, "results.csv"), render_csv(header, rows))

    all_passed = all(a.passed for a in assertions)
    lines = [
        f"occudev {config.experiment} summary",
        f"tolerance table v{TOLERANCE_TABLE_VERSION}: "
        + ", ".join(f"{k}={v}" for k, v in TOLERANCES[config.experiment].items()),
        f"backend: {_kernels.active_backend()}  threads: {threads}  "
        f"wall: {elapsed:.1f}s  seed: {config.master_seed}",
        "",
    ]
    for a in assertions:
        status = "PASS" if a.passed else "FAIL"
        lines.append(f"[{status}] {a.name}: value={format_float(a.value)} ({a.threshold})")
    if numerics_failed:
        lines.append(f"[FAIL] numerical health: {failure_note or 'flagged samples present'}")
    if numerics_failed:
        code = EXIT_NUMERICAL
    elif not all_passed:
        code = EXIT_ASSERTION
    else:
        code = EXIT_OK
    lines.append("")
    lines.append(f"exit status: {code}")
    write_atomic(os.path.join(outdir, "summary.txt"), "\n".join(lines) + "\n")
    return code


def replay_sample(config: ExperimentConfig, replicate_index: int,
                  t_index: int = 0) -> DeviationSample:
    """Deterministically re-run a single replication of a sweep config."""
    if not config.t_grid:
        raise ConfigError("replay needs a config with a non-empty t_grid")
    if not 0 <= t_index < len(config.t_grid):
        raise ConfigError(f"t_index must be in [0, {len(config.t_grid)})")
    if not 0 <= replicate_index < 2**63:
        raise ConfigError("replicate index out of range")
    cfg = ScaledRunConfig(
        t=config.t_grid[t_index],
        grid=TimeGrid(config.n_steps),
        spec=config.metric_spec(),
        drift_mode=config.drift_mode,
        alpha=config.alpha,
    )
    return deviation_sample(SeedSpec(config.master_seed, replicate_index), cfg)
