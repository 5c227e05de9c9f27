"""Hypersurface geometry in semi-geodesic coordinates.

A point is x = (x1, xt) where x1 is the signed distance to the hypersurface
and xt are normal coordinates on it. The metric keeps the first row and
column euclidean; the tangential block is perturbed linearly in x1 by the
second fundamental form, optionally quadratically in |x|, and is blended back
to the identity between ``r_valid`` and ``2 * r_valid`` so the metric is
euclidean far from the origin and positive-definite everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYMMETRY_TOL = 1e-12
DEFAULT_FD_STEP = 1e-5


def blend_weight(r: float, r_valid: float) -> float:
    """Cubic taper: 1 inside r_valid, 0 beyond 2*r_valid, smooth between."""
    if r <= r_valid:
        return 1.0
    if r >= 2.0 * r_valid:
        return 0.0
    u = (r - r_valid) / r_valid
    return 1.0 - u * u * (3.0 - 2.0 * u)


def blend_weight_grad(r: float, r_valid: float) -> float:
    """d/dr of blend_weight."""
    if r <= r_valid or r >= 2.0 * r_valid:
        return 0.0
    u = (r - r_valid) / r_valid
    return -(6.0 * u - 6.0 * u * u) / r_valid


@dataclass(frozen=True)
class MetricSpec:
    """Second fundamental form and validity data for the semi-geodesic metric.

    ``pi`` is the (n-1, n-1) symmetric second fundamental form at the origin;
    its trace is the mean curvature. ``quad`` optionally supplies a symmetric
    form entering as quad * |x|^2. ``fd_step`` is the base step for the
    finite-difference drift, scaled by (1 + |x|) at the evaluation point.
    """

    n: int
    pi: np.ndarray
    r_valid: float
    quad: np.ndarray | None = None
    fd_step: float = DEFAULT_FD_STEP

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("ambient dimension n must be >= 2")
        pi = np.atleast_2d(np.asarray(self.pi, dtype=float))
        m = self.n - 1
        if pi.shape != (m, m):
            raise ValueError(f"pi must be ({m}, {m}) for n={self.n}")
        if np.max(np.abs(pi - pi.T), initial=0.0) > SYMMETRY_TOL:
            raise ValueError("pi must be symmetric within 1e-12")
        object.__setattr__(self, "pi", pi)
        if self.quad is not None:
            quad = np.atleast_2d(np.asarray(self.quad, dtype=float))
            if quad.shape != (m, m):
                raise ValueError(f"quad must be ({m}, {m}) for n={self.n}")
            if np.max(np.abs(quad - quad.T), initial=0.0) > SYMMETRY_TOL:
                raise ValueError("quad must be symmetric within 1e-12")
            if np.all(quad == 0.0):
                quad = None
            object.__setattr__(self, "quad", quad)
        if not self.r_valid > 0:
            raise ValueError("r_valid must be positive")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        self._check_positive_definite()

    @property
    def H(self) -> float:
        """Mean curvature: the trace of the second fundamental form."""
        return float(np.trace(self.pi))

    def _tangential_block(self, x1: float, r: float) -> np.ndarray:
        m = self.n - 1
        w = blend_weight(r, self.r_valid)
        g = np.eye(m) + (2.0 * x1 * w) * self.pi
        if self.quad is not None:
            g += (w * r * r) * self.quad
        return g

    def _check_positive_definite(self):
        # The tangential block is linear in x1 at fixed radius, so its smallest
        # eigenvalue over |x1| <= r is attained at x1 = +-r; scan radii through
        # the blend zone where the taper competes with the perturbation.
        radii = np.linspace(0.0, 2.0 * self.r_valid, 65)
        for r in radii:
            for x1 in (-r, r):
                g = self._tangential_block(x1, r)
                if np.linalg.eigvalsh(g)[0] <= 1e-10:
                    raise ValueError(
                        f"metric loses positive-definiteness at |x|={r:g}, x1={x1:g}; "
                        "shrink r_valid or the second fundamental form"
                    )


def metric_at(spec: MetricSpec, x) -> np.ndarray:
    """Metric matrix at the point x; identity beyond the blend zone."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.n,):
        raise ValueError(f"point must have dimension {spec.n}")
    r = float(np.linalg.norm(x))
    g = np.eye(spec.n)
    g[1:, 1:] = spec._tangential_block(float(x[0]), r)
    return g


def _log_sqrt_det(spec: MetricSpec, x: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(metric_at(spec, x))
    if sign <= 0:
        raise FloatingPointError("metric determinant is not positive")
    return 0.5 * logdet


def drift_b1(spec: MetricSpec, x) -> float:
    """Drift of the normal coordinate: d/dx1 of log sqrt(det g), central difference."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.n,):
        raise ValueError(f"point must have dimension {spec.n}")
    h = spec.fd_step * (1.0 + float(np.linalg.norm(x)))
    xp = x.copy()
    xm = x.copy()
    xp[0] += h
    xm[0] -= h
    return (_log_sqrt_det(spec, xp) - _log_sqrt_det(spec, xm)) / (2.0 * h)


def sphere_preset(n: int, R: float) -> MetricSpec:
    """Round hypersurface of radius R: pi = I/R, mean curvature (n-1)/R."""
    if R <= 0:
        raise ValueError("R must be positive")
    return MetricSpec(n=n, pi=np.eye(n - 1) / R, r_valid=R / 4.0)
