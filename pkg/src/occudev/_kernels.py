"""Hot numerical kernels: Euler stepping and per-path Brownian functionals.

Every hot kernel exists twice: a numba @njit version (per-path scalar loops,
nogil so replication chunks parallelize across threads) and a pure-numpy
version vectorized over the path batch. The numpy path is the fallback and
the cross-check; set ``OCCUDEV_NO_NUMBA=1`` to force it. Both backends use
the same arithmetic expressions so they agree to rounding noise, and each
path's result is independent of batch partitioning and thread count.

The accelerated diffusion kernels cover the metric without a quadratic
correction, where the tangential block is diagonal in the eigenframe of the
second fundamental form. A general, slower numpy route handles the optional
quadratic term with stacked linear algebra.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


def numba_disabled_by_env() -> bool:
    return os.environ.get("OCCUDEV_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not numba_disabled_by_env()


def active_backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def _resolve_backend(backend: str | None) -> str:
    if backend is None:
        return active_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"backend must be 'numba' or 'numpy', got {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend


# ---------------------------------------------------------------------------
# scalar diffusion: drift_mode zero / constant_H
#
# X_k = sqrt_t * W_k + slope * s_k with W the running increment sum; written
# exactly this way in both backends so that slope == 0 couples X to W
# sign-for-sign, bit for bit.
# ---------------------------------------------------------------------------


def _euler_scalar_numpy(dW1, sqrt_t, slope, dt, ball2):
    B, n = dW1.shape
    w = np.cumsum(dW1, axis=1)
    s = np.arange(1, n + 1) * dt
    x = sqrt_t * w + slope * s
    counts = (x >= 0.0).sum(axis=1).astype(np.int64)
    over = x * x > ball2
    any_over = over.any(axis=1)
    first = np.where(any_over, over.argmax(axis=1) + 1, 0).astype(np.int64)
    ok = np.isfinite(x[:, -1])
    return counts, first, ok


@njit(cache=True, nogil=True)
def _euler_scalar_numba(dW1, sqrt_t, slope, dt, ball2):
    B, n = dW1.shape
    counts = np.zeros(B, np.int64)
    tau_idx = np.zeros(B, np.int64)
    ok = np.ones(B, np.bool_)
    for p in range(B):
        w = 0.0
        cnt = 0
        tau = 0
        for k in range(n):
            w += dW1[p, k]
            x = sqrt_t * w + slope * ((k + 1) * dt)
            if x >= 0.0:
                cnt += 1
            if tau == 0 and x * x > ball2:
                tau = k + 1
        counts[p] = cnt
        tau_idx[p] = tau
        ok[p] = math.isfinite(w)
    return counts, tau_idx, ok


def euler_scalar(dW1, sqrt_t, slope, dt, ball2, backend: str | None = None):
    """Occupation count, first-exit index and health flag per scalar path."""
    dW1 = np.ascontiguousarray(dW1, dtype=np.float64)
    if _resolve_backend(backend) == "numba":
        return _euler_scalar_numba(dW1, sqrt_t, slope, dt, ball2)
    return _euler_scalar_numpy(dW1, sqrt_t, slope, dt, ball2)


# ---------------------------------------------------------------------------
# curved diffusion, diagonal route (no quadratic correction)
#
# State (x1, y) with y the tangential coordinates in the eigenframe of the
# second fundamental form; tangential metric eigenvalues are
#     g_i = 1 + 2 d_i x1 w(r),        r = |(x1, y)|,
# with w the blend taper. The normal drift is the exact x1-derivative of
# log sqrt(det g); the tangential drift is non-zero only in the blend zone,
# where it enters through the radial dependence of the taper:
#     b1      = sum_i d_i (w + x1^2 w'(r)/r) / g_i
#     btang_i = y_i / (r g_i) * (S/2 - gp_i/g_i),  gp_i = 2 d_i x1 w'(r),
# with S = sum_j gp_j / g_j. All coefficients are evaluated at the pre-step
# state (explicit Euler).
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _euler_curved_diag_numba(dW, sqrt_t, t, dt, d, rv, ball2):
    B, dim, n = dW.shape
    m = dim - 1
    counts = np.zeros(B, np.int64)
    tau_idx = np.zeros(B, np.int64)
    ok = np.ones(B, np.bool_)
    half_t_dt = 0.5 * t * dt
    for p in range(B):
        x1 = 0.0
        y = np.zeros(m)
        g = np.empty(m)
        gp = np.empty(m)
        cnt = 0
        tau = 0
        good = True
        for k in range(n):
            rho = 0.0
            for i in range(m):
                rho += y[i] * y[i]
            r = math.sqrt(x1 * x1 + rho)
            if r <= rv:
                w = 1.0
                wg = 0.0
            elif r >= 2.0 * rv:
                w = 0.0
                wg = 0.0
            else:
                u = (r - rv) / rv
                w = 1.0 - u * u * (3.0 - 2.0 * u)
                wg = -(6.0 * u - 6.0 * u * u) / rv
            b1 = 0.0
            ssum = 0.0
            extra = 0.0
            if wg != 0.0 and r > 0.0:
                extra = x1 * x1 * wg / r
            for i in range(m):
                gi = 1.0 + 2.0 * d[i] * (x1 * w)
                if not (gi > 0.0) or not math.isfinite(gi):
                    good = False
                    break
                g[i] = gi
                b1 += d[i] * (w + extra) / gi
                gpi = 2.0 * d[i] * (x1 * wg)
                gp[i] = gpi
                ssum += gpi / gi
            if not good:
                break
            new_x1 = x1 + sqrt_t * dW[p, 0, k] + half_t_dt * b1
            for i in range(m):
                btang = 0.0
                if wg != 0.0 and r > 0.0:
                    btang = y[i] / (r * g[i]) * (0.5 * ssum - gp[i] / g[i])
                y[i] = y[i] + sqrt_t * dW[p, 1 + i, k] / math.sqrt(g[i]) + half_t_dt * btang
            x1 = new_x1
            if not math.isfinite(x1):
                good = False
                break
            if x1 >= 0.0:
                cnt += 1
            rad2 = x1 * x1
            for i in range(m):
                rad2 += y[i] * y[i]
            if tau == 0 and rad2 > ball2:
                tau = k + 1
        counts[p] = cnt
        tau_idx[p] = tau
        ok[p] = good
    return counts, tau_idx, ok


def _blend_arrays(r, rv):
    """Vectorized blend taper and its radial derivative."""
    w = np.ones_like(r)
    wg = np.zeros_like(r)
    zone = (r > rv) & (r < 2.0 * rv)
    w[r >= 2.0 * rv] = 0.0
    if np.any(zone):
        u = (r[zone] - rv) / rv
        w[zone] = 1.0 - u * u * (3.0 - 2.0 * u)
        wg[zone] = -(6.0 * u - 6.0 * u * u) / rv
    return w, wg


def _euler_curved_diag_numpy(dW, sqrt_t, t, dt, d, rv, ball2, record=False):
    B, dim, n = dW.shape
    m = dim - 1
    half_t_dt = 0.5 * t * dt
    x1 = np.zeros(B)
    y = np.zeros((B, m))
    counts = np.zeros(B, np.int64)
    tau_idx = np.zeros(B, np.int64)
    ok = np.ones(B, dtype=bool)
    trajectory = np.zeros((n + 1, B, dim)) if record else None
    with np.errstate(all="ignore"):
        for k in range(n):
            rho = (y * y).sum(axis=1)
            r = np.sqrt(x1 * x1 + rho)
            w, wg = _blend_arrays(r, rv)
            extra = np.zeros(B)
            live = (wg != 0.0) & (r > 0.0)
            extra[live] = x1[live] * x1[live] * wg[live] / r[live]
            g = 1.0 + 2.0 * d[None, :] * (x1 * w)[:, None]
            bad = ~np.all((g > 0.0) & np.isfinite(g), axis=1)
            if np.any(bad):
                ok &= ~bad
                g[bad] = 1.0
            b1 = (d[None, :] * (w + extra)[:, None] / g).sum(axis=1)
            gp = 2.0 * d[None, :] * (x1 * wg)[:, None]
            ssum = (gp / g).sum(axis=1)
            btang = np.zeros((B, m))
            if np.any(live):
                btang[live] = (
                    y[live] / (r[live, None] * g[live])
                    * (0.5 * ssum[live, None] - gp[live] / g[live])
                )
            new_x1 = x1 + sqrt_t * dW[:, 0, k] + half_t_dt * b1
            y = y + sqrt_t * dW[:, 1:, k] / np.sqrt(g) + half_t_dt * btang
            x1 = new_x1
            ok &= np.isfinite(x1)
            counts += (x1 >= 0.0).astype(np.int64)
            rad2 = x1 * x1 + (y * y).sum(axis=1)
            newly = ok & (tau_idx == 0) & (rad2 > ball2)
            tau_idx[newly] = k + 1
            if record:
                trajectory[k + 1, :, 0] = x1
                trajectory[k + 1, :, 1:] = y
    if record:
        return counts, tau_idx, ok, trajectory
    return counts, tau_idx, ok


def _spd_sqrt_stack(mats):
    """Symmetric square root of a (B, m, m) stack of SPD matrices."""
    m = mats.shape[-1]
    if m == 1:
        return np.sqrt(mats)
    vals, vecs = np.linalg.eigh(mats)
    vals = np.clip(vals, 1e-300, None)
    root = np.sqrt(vals)
    return np.einsum("bij,bj,bkj->bik", vecs, root, vecs)


def _euler_curved_general_numpy(dW, sqrt_t, t, dt, d, cquad, rv, fd_base, ball2,
                                record=False):
    """Curved diffusion with the quadratic metric correction.

    The tangential block is G = I + w(r) (2 x1 D + r^2 C); the normal drift
    uses a central finite difference of log sqrt(det G) in x1, the tangential
    drift differences sqrt(det G) G^{-1} radially, and the noise factor is the
    symmetric square root of G^{-1}. Slower than the diagonal route; intended
    for exploratory runs.
    """
    B, dim, n = dW.shape
    m = dim - 1
    half_t_dt = 0.5 * t * dt
    eye = np.eye(m)
    dmat = np.diag(d)

    def tang_block(x1v, r):
        w, _ = _blend_arrays(r, rv)
        return (
            eye[None, :, :]
            + (2.0 * x1v * w)[:, None, None] * dmat[None, :, :]
            + (w * r * r)[:, None, None] * cquad[None, :, :]
        )

    def log_sqrt_det(x1v, rho):
        r = np.sqrt(x1v * x1v + rho)
        sign, logdet = np.linalg.slogdet(tang_block(x1v, r))
        out = 0.5 * logdet
        out[sign <= 0] = np.nan
        return out

    x1 = np.zeros(B)
    y = np.zeros((B, m))
    counts = np.zeros(B, np.int64)
    tau_idx = np.zeros(B, np.int64)
    ok = np.ones(B, dtype=bool)
    trajectory = np.zeros((n + 1, B, dim)) if record else None
    with np.errstate(all="ignore"):
        for k in range(n):
            rho = (y * y).sum(axis=1)
            r = np.sqrt(x1 * x1 + rho)
            h = fd_base * (1.0 + r)
            b1 = (log_sqrt_det(x1 + h, rho) - log_sqrt_det(x1 - h, rho)) / (2.0 * h)
            g = tang_block(x1, r)
            vals = np.linalg.eigvalsh(g)
            bad = (vals[:, 0] <= 0.0) | ~np.isfinite(vals[:, 0]) | ~np.isfinite(b1)
            if np.any(bad):
                ok &= ~bad
                g[bad] = eye
                b1[bad] = 0.0
            ginv = np.linalg.inv(g)
            sigma = _spd_sqrt_stack(ginv)
            sqrtdet = np.sqrt(np.linalg.det(g))
            # radial derivative of A = sqrt(det G) G^{-1} drives the
            # tangential drift: btang = (dA/dr) (y / r) / sqrt(det G)
            gp_mats = tang_block(x1, r + h)
            gm_mats = tang_block(x1, np.maximum(r - h, 0.0))
            a_plus = np.sqrt(np.abs(np.linalg.det(gp_mats)))[:, None, None] * np.linalg.inv(gp_mats)
            a_minus = np.sqrt(np.abs(np.linalg.det(gm_mats)))[:, None, None] * np.linalg.inv(gm_mats)
            da = (a_plus - a_minus) / (2.0 * h)[:, None, None]
            btang = np.zeros((B, m))
            live = r > 1e-12
            if np.any(live):
                direction = np.zeros((B, m))
                direction[live] = y[live] / r[live, None]
                btang = np.einsum("bij,bj->bi", da, direction) / sqrtdet[:, None]
                btang[~live] = 0.0
            noise = np.einsum("bij,bj->bi", sigma, dW[:, 1:, k])
            new_x1 = x1 + sqrt_t * dW[:, 0, k] + half_t_dt * b1
            y = y + sqrt_t * noise + half_t_dt * btang
            x1 = new_x1
            ok &= np.isfinite(x1) & np.all(np.isfinite(y), axis=1)
            counts += (x1 >= 0.0).astype(np.int64)
            rad2 = x1 * x1 + (y * y).sum(axis=1)
            newly = ok & (tau_idx == 0) & (rad2 > ball2)
            tau_idx[newly] = k + 1
            if record:
                trajectory[k + 1, :, 0] = x1
                trajectory[k + 1, :, 1:] = y
    if record:
        return counts, tau_idx, ok, trajectory
    return counts, tau_idx, ok


def euler_curved(dW, sqrt_t, t, dt, d, rv, ball2, cquad=None, fd_base=1e-5,
                 backend: str | None = None, record: bool = False):
    """Curved-metric Euler step over a (B, dim, n) increment block.

    Returns (occupation counts, first-exit index, ok flags) and, with
    ``record``, the full trajectory stack (n+1, B, dim) in the eigenframe.
    """
    dW = np.ascontiguousarray(dW, dtype=np.float64)
    d = np.ascontiguousarray(d, dtype=np.float64)
    if cquad is not None and np.any(cquad != 0.0):
        return _euler_curved_general_numpy(
            dW, sqrt_t, t, dt, d, np.asarray(cquad, dtype=np.float64), rv, fd_base,
            ball2, record=record,
        )
    if record:
        return _euler_curved_diag_numpy(dW, sqrt_t, t, dt, d, rv, ball2, record=True)
    if _resolve_backend(backend) == "numba":
        return _euler_curved_diag_numba(dW, sqrt_t, t, dt, d, rv, ball2)
    return _euler_curved_diag_numpy(dW, sqrt_t, t, dt, d, rv, ball2)


# ---------------------------------------------------------------------------
# per-path Brownian functionals from one increment row
#
# One pass computes the endpoint W_1, the occupation count of [0, inf), the
# level-0 local time curve (running-maximum clamped) reduced to its endpoint,
# its trapezoid time integral (hence the integral of u dL), and the largest
# clamp correction.
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _w_functionals_numba(dW1, dt):
    B, n = dW1.shape
    w1 = np.empty(B)
    counts = np.zeros(B, np.int64)
    l1 = np.empty(B)
    iudl = np.empty(B)
    viol = np.zeros(B)
    for p in range(B):
        w = 0.0
        mart = 0.0
        lmax = 0.0
        lprev = 0.0
        trap = 0.0
        cnt = 0
        worst = 0.0
        for k in range(n):
            dw = dW1[p, k]
            if w > 0.0:
                sgn = 1.0
            elif w < 0.0:
                sgn = -1.0
            else:
                sgn = 0.0
            w += dw
            mart += sgn * dw
            lraw = abs(w) - mart
            if lraw < lmax:
                gap = lmax - lraw
                if gap > worst:
                    worst = gap
                lnew = lmax
            else:
                lnew = lraw
                lmax = lraw
            trap += 0.5 * (lprev + lnew) * dt
            lprev = lnew
            if w >= 0.0:
                cnt += 1
        w1[p] = w
        counts[p] = cnt
        l1[p] = lprev
        iudl[p] = lprev - trap
        viol[p] = worst
    return w1, counts, l1, iudl, viol


def _w_functionals_numpy(dW1, dt):
    B, n = dW1.shape
    w = np.cumsum(dW1, axis=1)
    sgn = np.empty_like(w)
    sgn[:, 0] = 0.0
    np.sign(w[:, :-1], out=sgn[:, 1:])
    mart = np.cumsum(sgn * dW1, axis=1)
    lraw = np.abs(w) - mart
    lclamp = np.maximum.accumulate(lraw, axis=1)
    viol = (lclamp - lraw).max(axis=1)
    counts = (w >= 0.0).sum(axis=1).astype(np.int64)
    l1 = lclamp[:, -1]
    trap = dt * (lclamp[:, :-1].sum(axis=1) + 0.5 * l1)
    iudl = l1 - trap
    return w[:, -1].copy(), counts, l1, iudl, viol


def w_functionals(dW1, dt, backend: str | None = None):
    """Per-path (W_1, occupation count, L_1, integral u dL, clamp violation)."""
    dW1 = np.ascontiguousarray(dW1, dtype=np.float64)
    if _resolve_backend(backend) == "numba":
        return _w_functionals_numba(dW1, dt)
    return _w_functionals_numpy(dW1, dt)


def drifted_occupation_counts(w_grid, slope, dt):
    """Occupation counts of W_k + slope * s_k >= 0 from precomputed W levels."""
    n = w_grid.shape[1]
    s = np.arange(1, n + 1) * dt
    return (w_grid + slope * s >= 0.0).sum(axis=1).astype(np.int64)


def warmup():
    """Trigger jit compilation of the numba kernels on tiny inputs."""
    if not HAVE_NUMBA:
        return
    dW = np.zeros((1, 2, 4))
    _euler_scalar_numba(dW[:, 0, :], 0.1, 0.0, 0.25, 1.0)
    _euler_curved_diag_numba(dW, 0.1, 0.01, 0.25, np.ones(1), 0.25, 1.0)
    _w_functionals_numba(dW[:, 0, :], 0.25)
