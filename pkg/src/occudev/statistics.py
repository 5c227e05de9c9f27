"""Arcsine-law tests, deviation-coefficient fits, and remainder-rate regression.

The deviation coefficient is estimated from the coupled per-sample difference
(T_t - A1)/sqrt(t), extrapolated to t = 0 with the model a + b t^(1/4): the
remainder decays like t^(3/4), so dividing by sqrt(t) leaves a t^(1/4)
correction that a two-parameter fit removes. The closed-form target is
    mean of integral u dL = 2/3 sqrt(1/(2 pi)) ~= 0.26596,
and the first-order distributional statement perturbs the arcsine law by a
delta-derivative term acting on a test function through its derivative at
zero. The sign of that action is pinned so the distributional slope matches
the (positive, for positive mean curvature) pathwise deviation; the
consistency tests exercise exactly this triangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT_INV_2PI = math.sqrt(1.0 / (2.0 * math.pi))
#: closed-form mean of the local-time functional integral u dL over [0, 1]
MEAN_INT_U_DL = (2.0 / 3.0) * SQRT_INV_2PI
#: per-unit-curvature coefficient of the distributional first-order term
WEAK_COEFF = (1.0 / 3.0) * SQRT_INV_2PI
#: closed-form mean local time at the end of the unit interval, E|W_1|
MEAN_L1 = math.sqrt(2.0 / math.pi)

# two-sided 97.5% Student quantiles for tiny regression dofs
_T975 = {1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 6: 2.447, 7: 2.365}


def _t975(dof: int) -> float:
    return _T975.get(dof, 1.96) if dof >= 1 else math.inf


def cmean(x) -> float:
    """Compensated (exactly rounded) mean; order-independent merges."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    return math.fsum(x.tolist()) / x.size


def cstd(x, mean: float | None = None) -> float:
    """Compensated sample standard deviation (ddof=1)."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    m = cmean(x) if mean is None else mean
    return math.sqrt(math.fsum(((x - m) ** 2).tolist()) / (x.size - 1))


def arcsine_cdf(x):
    """CDF of the arcsine law: (2/pi) arcsin(sqrt(x)) on [0, 1]."""
    arr = np.asarray(x, dtype=float)
    out = (2.0 / math.pi) * np.arcsin(np.sqrt(np.clip(arr, 0.0, 1.0)))
    return out if arr.shape else float(out)


def arcsine_density(x):
    """Density 1 / (pi sqrt(x (1 - x))) on the open unit interval."""
    arr = np.asarray(x, dtype=float)
    out = 1.0 / (math.pi * np.sqrt(arr * (1.0 - arr)))
    return out if arr.shape else float(out)


def arcsine_quantile(u):
    """Inverse CDF sin^2(pi u / 2); handy for sampling the null."""
    arr = np.asarray(u, dtype=float)
    out = np.sin(0.5 * math.pi * arr) ** 2
    return out if arr.shape else float(out)


def arcsine_expectation(phi, n_nodes: int = 256) -> float:
    """Gauss-Legendre quadrature of phi against the arcsine density.

    The substitution x = sin^2(theta) removes both endpoint singularities, so
    smooth integrands converge at spectral rate.
    """
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    theta = 0.25 * math.pi * (nodes + 1.0)
    vals = np.asarray(phi(np.sin(theta) ** 2), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("quadrature integrand is not finite")
    return (2.0 / math.pi) * (0.25 * math.pi) * float(np.dot(weights, vals))


def half_normal_cdf(x):
    """CDF of |N(0,1)|: erf(x / sqrt(2)) for x >= 0."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.array([math.erf(v / math.sqrt(2.0)) if v > 0 else 0.0 for v in arr])
    return out if np.asarray(x).shape else float(out[0])


@dataclass(frozen=True)
class KSReport:
    """Exact sup-distance between an empirical CDF and a reference law."""

    statistic: float
    n: int
    reference: str


_REFERENCES = {"arcsine": arcsine_cdf, "half_normal": half_normal_cdf}


def ks_against(samples, reference: str) -> KSReport:
    """One-sample Kolmogorov-Smirnov statistic, evaluated at every jump."""
    if reference not in _REFERENCES:
        raise ValueError(f"reference must be one of {sorted(_REFERENCES)}")
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size < 10:
        raise ValueError("need at least 10 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    f = np.asarray(_REFERENCES[reference](x), dtype=float)
    steps = np.arange(1, x.size + 1) / x.size
    d_plus = float(np.max(steps - f))
    d_minus = float(np.max(f - (steps - 1.0 / x.size)))
    return KSReport(statistic=max(d_plus, d_minus), n=x.size, reference=reference)


def ks_two_sample(a, b) -> float:
    """Exact two-sample Kolmogorov-Smirnov sup-distance."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples must be finite")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


@dataclass(frozen=True)
class PerTStats:
    """Aggregates of one coupled deviation batch."""

    t: float
    n: int
    n_flagged: int
    mean_dev: float          # mean of (T - A1)/sqrt(t)
    stderr: float
    paired_mean: float       # mean of T - A1 - (sqrt(t) H / 2) I
    paired_stderr: float
    residual_l1: float
    residual_l2: float
    exit_fraction: float


@dataclass(frozen=True)
class SweepResult:
    """Per-horizon aggregates plus the extrapolated deviation coefficient."""

    t_grid: tuple
    per_t: tuple
    fitted_coefficient: float
    coefficient_ci: tuple
    predicted_coefficient: float   # (H/2) mean(I), the variance-reduced route
    remainder_exponent_l1: float
    remainder_exponent_l1_ci: tuple
    remainder_exponent_l2: float
    remainder_exponent_l2_ci: tuple

    def __post_init__(self):
        ts = self.t_grid
        if any(ts[i] <= ts[i + 1] for i in range(len(ts) - 1)):
            raise ValueError("t_grid must be strictly decreasing")
        lo, hi = self.coefficient_ci
        if math.isfinite(self.fitted_coefficient) and not (
            lo <= self.fitted_coefficient <= hi
        ):
            raise ValueError("confidence interval must contain the point estimate")


def batch_stats(batch) -> PerTStats:
    """Reduce one DeviationBatch to its per-horizon aggregates."""
    good = np.asarray(batch.ok, dtype=bool)
    n_flagged = int((~good).sum())
    if not np.any(good):
        raise ValueError(f"batch at t={batch.t} has no healthy samples")
    sq = math.sqrt(batch.t)
    dev = (batch.T[good] - batch.A1[good]) / sq
    resid = batch.T[good] - batch.A1[good] - 0.5 * sq * batch.H * batch.I[good]
    m_dev = cmean(dev)
    m_res = cmean(resid)
    n = dev.size
    return PerTStats(
        t=batch.t,
        n=n,
        n_flagged=n_flagged,
        mean_dev=m_dev,
        stderr=cstd(dev, m_dev) / math.sqrt(n),
        paired_mean=m_res,
        paired_stderr=cstd(resid, m_res) / math.sqrt(n),
        residual_l1=cmean(np.abs(resid)),
        residual_l2=math.sqrt(cmean(resid * resid)),
        exit_fraction=float(batch.exited[good].sum()) / n,
    )


def _wls_quarter_fit(ts, means, ses):
    """Weighted fit of means = a + b t^(1/4); returns (a, se_a, b)."""
    x = np.asarray(ts, dtype=float) ** 0.25
    y = np.asarray(means, dtype=float)
    se = np.asarray(ses, dtype=float)
    wts = 1.0 / np.maximum(se, 1e-300) ** 2
    sw = wts.sum()
    swx = (wts * x).sum()
    swxx = (wts * x * x).sum()
    swy = (wts * y).sum()
    swxy = (wts * x * y).sum()
    det = sw * swxx - swx * swx
    if det <= 0:
        raise ValueError("degenerate design for the extrapolation fit")
    a = (swxx * swy - swx * swxy) / det
    b = (sw * swxy - swx * swy) / det
    se_a = math.sqrt(swxx / det)
    return a, se_a, b


def fit_deviation_coefficient(batches) -> SweepResult:
    """Extrapolate the coupled deviation to t = 0 and attach remainder rates.

    Needs at least three distinct horizons. The paired per-sample prediction
    (H/2) I is pooled into `predicted_coefficient` as the variance-reduced
    cross-estimate of the same limit.
    """
    if len(batches) < 3:
        raise ValueError("need at least 3 horizons to extrapolate")
    batches = sorted(batches, key=lambda b: -b.t)
    ts = [b.t for b in batches]
    if len(set(ts)) != len(ts):
        raise ValueError("horizons must be distinct")
    stats = [batch_stats(b) for b in batches]
    a, se_a, _ = _wls_quarter_fit(
        ts, [s.mean_dev for s in stats], [max(s.stderr, 1e-300) for s in stats]
    )
    ci = (a - 1.96 * se_a, a + 1.96 * se_a)
    h = batches[0].H
    pooled_i = cmean(np.concatenate([b.I[np.asarray(b.ok, bool)] for b in batches]))
    predicted = 0.5 * h * pooled_i
    exp1, ci1 = fit_remainder_exponent(batches, p=1)
    exp2, ci2 = fit_remainder_exponent(batches, p=2)
    return SweepResult(
        t_grid=tuple(ts),
        per_t=tuple(stats),
        fitted_coefficient=a,
        coefficient_ci=ci,
        predicted_coefficient=predicted,
        remainder_exponent_l1=exp1,
        remainder_exponent_l1_ci=ci1,
        remainder_exponent_l2=exp2,
        remainder_exponent_l2_ci=ci2,
    )


def fit_remainder_exponent(batches, p: int = 1):
    """Log-log slope of the L^p norm of the pathwise remainder against t.

    Returns (slope, (lo, hi)); NaNs when a norm degenerates (all-zero
    remainders underflow the logarithm), which the caller must treat as a
    failed, not a passing, fit.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if len(batches) < 3:
        raise ValueError("need at least 3 horizons")
    ts, norms = [], []
    for b in sorted(batches, key=lambda x: -x.t):
        r = b.residual()
        if r.size == 0:
            return math.nan, (math.nan, math.nan)
        norm = cmean(np.abs(r)) if p == 1 else math.sqrt(cmean(r * r))
        ts.append(b.t)
        norms.append(norm)
    if any((not math.isfinite(v)) or v <= 0.0 for v in norms):
        return math.nan, (math.nan, math.nan)
    x = np.log(np.asarray(ts))
    y = np.log(np.asarray(norms))
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    intercept = ym - slope * xm
    resid = y - intercept - slope * x
    dof = n - 2
    if dof > 0:
        se = math.sqrt(float((resid**2).sum()) / dof / sxx)
        half = _t975(dof) * se
    else:
        half = 0.0
    return slope, (slope - half, slope + half)


@dataclass(frozen=True)
class WeakExpansionReport:
    """Distributional first-order check for one test function.

    Two candidate first-order actions are reported: the delta-derivative
    form (through phi'(0), sign fixed by the pathwise deviation) and the
    boundary-difference form (through phi(1) - phi(0)). They coincide for
    phi(x) = x; measurements side with the boundary form on every other
    test function tried, see the consistency tests.
    """

    per_t: tuple                      # (t, slope, stderr) rows
    measured_slope: float
    measured_ci: tuple
    predicted_slope: float            # delta-derivative form
    predicted_slope_boundary: float   # boundary-difference form
    reference_mean: float


def weak_expansion_prediction(h: float, dphi0: float) -> float:
    """Delta-derivative first-order slope for mean curvature h and phi'(0).

    The action is taken as +phi'(0); the sign is fixed by matching the
    pathwise deviation, which is positive for positive mean curvature.
    """
    return WEAK_COEFF * h * dphi0


def weak_expansion_check(phi, dphi0: float, batches, h: float | None = None,
                         n_nodes: int = 256) -> WeakExpansionReport:
    """Compare the measured distributional slope with its first-order value.

    ``phi`` must be bounded with a bounded derivative and vectorized; its
    arcsine mean is computed by quadrature. The measured slope extrapolates
    (mean phi(T_t) - arcsine mean)/sqrt(t) with the a + b t^(1/4) model.
    """
    if len(batches) < 3:
        raise ValueError("need at least 3 horizons")
    batches = sorted(batches, key=lambda b: -b.t)
    if h is None:
        h = batches[0].H
    mu0 = arcsine_expectation(phi, n_nodes=n_nodes)
    rows, means, ses = [], [], []
    for b in batches:
        good = np.asarray(b.ok, dtype=bool)
        vals = np.asarray(phi(b.T[good]), dtype=float)
        sq = math.sqrt(b.t)
        m = cmean(vals)
        slope = (m - mu0) / sq
        se = cstd(vals, m) / math.sqrt(vals.size) / sq
        rows.append((b.t, slope, se))
        means.append(slope)
        ses.append(max(se, 1e-300))
    a, se_a, _ = _wls_quarter_fit([r[0] for r in rows], means, ses)
    boundary = float(np.asarray(phi(np.array([1.0])))[0] - np.asarray(phi(np.array([0.0])))[0])
    return WeakExpansionReport(
        per_t=tuple(rows),
        measured_slope=a,
        measured_ci=(a - 1.96 * se_a, a + 1.96 * se_a),
        predicted_slope=weak_expansion_prediction(h, dphi0),
        predicted_slope_boundary=WEAK_COEFF * h * boundary,
        reference_mean=mu0,
    )
