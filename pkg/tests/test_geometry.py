import math

import numpy as np
import pytest

from occudev.geometry import (
    MetricSpec,
    blend_weight,
    drift_b1,
    metric_at,
    sphere_preset,
)


def test_spec_rejects_asymmetric_pi():
    with pytest.raises(ValueError, match="symmetric"):
        MetricSpec(n=3, pi=np.array([[0.0, 1.0], [0.5, 0.0]]), r_valid=0.1)


def test_spec_rejects_nonpositive_definite():
    # at x1 = -r_valid the tangential eigenvalue 1 - 2 * 0.6 goes negative
    with pytest.raises(ValueError, match="positive-definiteness"):
        MetricSpec(n=2, pi=np.array([[1.0]]), r_valid=0.6)


def test_spec_rejects_bad_shapes():
    with pytest.raises(ValueError):
        MetricSpec(n=3, pi=np.eye(3), r_valid=0.1)
    with pytest.raises(ValueError):
        MetricSpec(n=3, pi=np.eye(2), r_valid=-0.1)


def test_metric_flat_is_identity():
    spec = MetricSpec(n=3, pi=np.zeros((2, 2)), r_valid=0.5)
    for x in (np.zeros(3), np.array([0.3, -0.1, 0.2]), np.array([5.0, 0.0, 0.0])):
        assert np.array_equal(metric_at(spec, x), np.eye(3))


def test_metric_linear_term_2d():
    # one tangential direction: g_22 = 1 + 2 kappa x1
    kappa = 1.0
    spec = MetricSpec(n=2, pi=np.array([[kappa]]), r_valid=0.25)
    g = metric_at(spec, np.array([0.1, 0.0]))
    assert g[0, 0] == 1.0 and g[0, 1] == 0.0 and g[1, 0] == 0.0
    assert g[1, 1] == pytest.approx(1.0 + 2.0 * kappa * 0.1, abs=1e-15)


def test_metric_unit_first_row_and_symmetry():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 3))
    spec = MetricSpec(n=4, pi=0.2 * (a + a.T), r_valid=0.2)
    for _ in range(20):
        x = 0.5 * rng.normal(size=4)
        g = metric_at(spec, x)
        assert np.array_equal(g[0], np.eye(4)[0])
        assert np.array_equal(g[:, 0], np.eye(4)[0])
        assert np.array_equal(g, g.T)
        assert np.linalg.eigvalsh(g)[0] > 0.0


def test_metric_smallest_eigenvalue_at_validity_edge():
    # pi = I, r_valid = 1/4: smallest tangential eigenvalue 1 - 2 * 0.25
    spec = MetricSpec(n=3, pi=np.eye(2), r_valid=0.25)
    g = metric_at(spec, np.array([-0.25, 0.0, 0.0]))
    assert np.linalg.eigvalsh(g)[0] == pytest.approx(0.5, abs=1e-12)


def test_metric_euclidean_beyond_blend_zone():
    spec = sphere_preset(3, 1.0)
    x = np.array([0.6, 0.0, 0.0])  # beyond 2 * r_valid = 0.5
    assert np.array_equal(metric_at(spec, x), np.eye(3))
    assert drift_b1(spec, x) == 0.0


def test_blend_weight_profile():
    assert blend_weight(0.1, 0.25) == 1.0
    assert blend_weight(0.25, 0.25) == 1.0
    assert blend_weight(0.5, 0.25) == 0.0
    mid = blend_weight(0.375, 0.25)
    assert 0.0 < mid < 1.0
    assert mid == pytest.approx(0.5, abs=1e-12)


def test_drift_flat_zero():
    spec = MetricSpec(n=3, pi=np.zeros((2, 2)), r_valid=0.5)
    assert drift_b1(spec, np.zeros(3)) == 0.0
    assert drift_b1(spec, np.array([0.2, 0.1, -0.1])) == 0.0


def test_drift_at_origin_is_mean_curvature():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 5))
        a = rng.normal(size=(n - 1, n - 1))
        pi = a + a.T
        norm = np.linalg.norm(pi, 2)
        if norm > 2.0:
            pi *= 2.0 / norm
            norm = 2.0
        spec = MetricSpec(n=n, pi=pi, r_valid=0.1)
        h_fd = spec.fd_step
        slack = 10.0 * h_fd**2 * (1.0 + norm**3) + 1e-9
        assert abs(drift_b1(spec, np.zeros(n)) - spec.H) <= slack


def test_drift_closed_form_2d():
    # det g = 1 + 2 kappa x1, so b1 = kappa / (1 + 2 kappa x1)
    spec = MetricSpec(n=2, pi=np.array([[1.0]]), r_valid=0.25)
    got = drift_b1(spec, np.array([0.1, 0.0]))
    assert got == pytest.approx(1.0 / 1.2, abs=1e-6)


def test_drift_permutation_invariance():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 3))
    pi = 0.3 * (a + a.T)
    spec = MetricSpec(n=4, pi=pi, r_valid=0.2)
    for _ in range(5):
        perm = rng.permutation(3)
        p = np.eye(3)[perm]
        spec_p = MetricSpec(n=4, pi=p @ pi @ p.T, r_valid=0.2)
        assert spec_p.H == pytest.approx(spec.H, abs=1e-12)
        assert drift_b1(spec_p, np.zeros(4)) == pytest.approx(
            drift_b1(spec, np.zeros(4)), abs=1e-10
        )


def test_sphere_preset_values():
    assert sphere_preset(2, 1.0).H == 1.0
    assert sphere_preset(3, 2.0).H == pytest.approx(1.0)
    assert sphere_preset(3, 1.0).r_valid == 0.25


def test_sphere_flat_limit():
    spec = sphere_preset(2, 1e9)
    assert abs(spec.H) < 1e-8
    g = metric_at(spec, np.array([0.1, 0.0]))
    assert np.allclose(g, np.eye(2), atol=1e-9)


def test_quadratic_correction_enters_metric():
    quad = np.array([[0.5, 0.0], [0.0, -0.25]])
    spec = MetricSpec(n=3, pi=np.zeros((2, 2)), r_valid=0.3, quad=quad)
    x = np.array([0.1, 0.05, 0.0])
    r2 = float(x @ x)
    g = metric_at(spec, x)
    assert g[1, 1] == pytest.approx(1.0 + 0.5 * r2, abs=1e-15)
    assert g[2, 2] == pytest.approx(1.0 - 0.25 * r2, abs=1e-15)
    # quadratic term bends the drift away from zero mean curvature
    assert spec.H == 0.0
    assert drift_b1(spec, x) != 0.0
