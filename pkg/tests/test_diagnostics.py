import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_rotation, random_se23, random_spd
from legged_iekf.diagnostics import (
    build_observability_matrix,
    canonical_projection,
    error_metrics,
    estimation_error,
    extract_observables,
    gravity_angle,
    nees_from_terms,
    nees_sequence,
    nees_term,
    pairwise_sum,
)
from legged_iekf.liegroup import ProductState, Se23State, exp_so3
from legged_iekf.state_models import LEFT, PRODUCT, Belief

E = np.eye(9)


# ---------------------------------------------------------------- observability


def test_observability_rank_five():
    assert build_observability_matrix(0.05).rank == 5


def test_observability_nullspace_contains_yaw_and_position():
    res = build_observability_matrix(0.05)
    for k in (2, 6, 7, 8):
        assert canonical_projection(res, E[k]) < 1e-10
    for k in (0, 1, 3, 4, 5):
        assert canonical_projection(res, E[k]) > 0.5


@pytest.mark.parametrize("dt", [1e-3, 0.0025, 0.05, 0.5])
def test_observability_invariant_to_dt(dt):
    a = build_observability_matrix(dt)
    b = build_observability_matrix(0.05)
    assert a.rank == 5
    # same subspace: projectors agree
    Pa = a.nullspace_basis.T @ a.nullspace_basis
    Pb = b.nullspace_basis.T @ b.nullspace_basis
    assert np.allclose(Pa, Pb, atol=1e-9)


def test_observability_result_structure():
    res = build_observability_matrix(0.05)
    assert res.matrix.shape == (9, 9)
    N = res.nullspace_basis
    assert res.rank + N.shape[0] == 9
    assert np.allclose(N @ N.T, np.eye(4), atol=1e-12)
    assert np.allclose(res.matrix @ N.T, 0.0, atol=1e-10)


def test_observability_rejects_bad_dt():
    with pytest.raises(ValueError):
        build_observability_matrix(0.0)


# ---------------------------------------------------------------- NEES


def test_nees_zero_error():
    assert nees_term(np.zeros(9), np.eye(9)) == 0.0


def test_nees_singular_covariance_excluded():
    assert nees_term(np.ones(9), np.zeros((9, 9))) is None
    errors = np.ones((2, 3, 9))
    covs = np.broadcast_to(np.eye(9), (2, 3, 9, 9)).copy()
    covs[1, 2] = 0.0
    res = nees_sequence(errors, covs)
    assert res.excluded == 1
    assert np.array_equal(res.counts, [2, 2, 1])
    assert np.allclose(res.mean, 9.0)


def test_nees_matching_covariance_is_chi2():
    rng = np.random.default_rng(0)
    P = random_spd(rng, 9)
    L = np.linalg.cholesky(P)
    xs = (L @ rng.standard_normal((9, 10_000))).T
    vals = [nees_term(x, P) for x in xs]
    assert abs(np.mean(vals) - 9.0) < 0.3


def test_nees_half_covariance_doubles():
    rng = np.random.default_rng(1)
    P = random_spd(rng, 9)
    L = np.linalg.cholesky(P)
    xs = (L @ rng.standard_normal((9, 10_000))).T
    vals = [nees_term(x, 0.5 * P) for x in xs]
    assert abs(np.mean(vals) - 18.0) < 0.6


def test_nees_linear_gaussian_kalman_calibration():
    """Exact Kalman filter on a 3-state random walk: mean NEES near 3."""
    rng = np.random.default_rng(2)
    F = np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.1], [0.0, 0.0, 1.0]])
    Q = 1e-3 * np.eye(3)
    H = np.array([[1.0, 0.0, 0.0]])
    R = np.array([[1e-2]])
    xh, P = np.zeros(3), np.eye(3)
    x = np.linalg.cholesky(P) @ rng.standard_normal(3)
    vals = []
    for _ in range(10_000):
        x = F @ x + np.linalg.cholesky(Q) @ rng.standard_normal(3)
        xh, P = F @ xh, F @ P @ F.T + Q
        y = H @ x + math.sqrt(R[0, 0]) * rng.standard_normal(1)
        K = P @ H.T @ np.linalg.inv(H @ P @ H.T + R)
        xh = xh + K @ (y - H @ xh)
        P = (np.eye(3) - K @ H) @ P
        vals.append(nees_term(x - xh, P))
    assert 2.7 <= np.mean(vals) <= 3.3


def test_nees_from_terms_matches_sequence(rng):
    errors = rng.normal(size=(4, 5, 9))
    covs = np.broadcast_to(2.0 * np.eye(9), (4, 5, 9, 9))
    res = nees_sequence(errors, covs)
    terms = (errors**2).sum(axis=2) / 2.0
    assert np.allclose(res.mean, terms.mean(axis=0), atol=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=0, max_size=50))
def test_pairwise_sum_matches_fsum(vals):
    assert math.isclose(pairwise_sum(vals), math.fsum(vals), rel_tol=1e-9, abs_tol=1e-6)


def test_nees_from_terms_all_nan_column():
    res = nees_from_terms(np.array([[1.0, np.nan], [3.0, np.nan]]))
    assert res.mean[0] == 2.0 and np.isnan(res.mean[1])
    assert res.excluded == 2


# ---------------------------------------------------------------- errors per geometry


def test_estimation_error_right(rng):
    X, Xb = random_se23(rng), random_se23(rng)
    assert np.allclose(estimation_error(X, Belief(Xb, E)), (X @ Xb.inverse()).log(), atol=0)


def test_estimation_error_product(rng):
    X = random_se23(rng)
    xb = ProductState(random_rotation(rng), rng.normal(size=3), rng.normal(size=3))
    e = estimation_error(X, Belief(xb, E, PRODUCT))
    assert np.allclose(exp_so3(e[:3]) @ xb.rot, X.rot, atol=1e-12)
    assert np.allclose(e[3:6], X.vel - xb.vel, atol=0)
    assert np.allclose(e[6:9], X.pos - xb.pos, atol=0)


def test_estimation_error_left_is_negated_right(rng):
    X, Xb = random_se23(rng, 0.5), random_se23(rng, 0.5)
    left = estimation_error(X, Belief(Xb.inverse(), E, LEFT))
    right = estimation_error(X, Belief(Xb, E))
    assert np.allclose(left, -right, atol=1e-10)


# ---------------------------------------------------------------- observables


def test_observables_identity():
    o = extract_observables(Se23State.identity())
    assert np.array_equal(o.u, [0.0, 0.0, 1.0])
    assert o.roll == 0.0 and o.pitch == 0.0


def test_observables_pitch_example():
    R = exp_so3(np.array([0.0, math.pi / 6, 0.0]))
    o = extract_observables(Se23State(R, np.zeros(3), np.zeros(3)))
    u = R.T @ [0, 0, 1]
    assert np.allclose(o.u, u, atol=1e-15)
    assert math.isclose(o.pitch, math.asin(u[0]), abs_tol=1e-15)
    assert math.isclose(abs(o.pitch), math.pi / 6, abs_tol=1e-12)


@pytest.mark.parametrize("yaw", [0.3, -2.0, math.pi - 1e-3])
def test_observables_yaw_invariant(yaw):
    o = extract_observables(Se23State(exp_so3(np.array([0.0, 0.0, yaw])), np.zeros(3), np.zeros(3)))
    assert np.allclose(o.u, [0.0, 0.0, 1.0], atol=1e-15)


def test_observables_u_is_third_column_of_rt(rng):
    for _ in range(50):
        X = random_se23(rng)
        o = extract_observables(Belief(X, E))
        assert np.allclose(o.u, X.rot.T[:, 2], atol=1e-15)
        assert abs(np.linalg.norm(o.u) - 1.0) < 1e-12
        assert -math.pi / 2 <= o.pitch <= math.pi / 2
        assert np.allclose(o.v_base, X.rot.T @ X.vel, atol=0)


def test_observables_left_belief_matches_world(rng):
    X = random_se23(rng)
    a = extract_observables(Belief(X, E))
    b = extract_observables(Belief(X.inverse(), E, LEFT))
    assert np.allclose(a.v_base, b.v_base, atol=1e-12)
    assert np.allclose(a.u, b.u, atol=1e-12)


# ---------------------------------------------------------------- accuracy metrics


def test_error_metrics_identical_is_zero(rng):
    a = rng.normal(size=(20, 3))
    assert error_metrics(a, a, "MAE") == 0.0
    assert error_metrics(a, a, "RMSE") == 0.0


def test_error_metrics_constant_offset():
    a = np.zeros((10, 3))
    b = a.copy()
    b[:, 1] = 0.1
    assert math.isclose(error_metrics(b, a, "MAE"), 0.1, rel_tol=1e-15)
    assert math.isclose(error_metrics(b, a, "RMSE"), 0.1, rel_tol=1e-15)


def test_gravity_angle_one_degree():
    u = np.array([0.0, 0.0, 1.0])
    v = exp_so3(np.array([math.radians(1.0), 0.0, 0.0])) @ u
    assert math.isclose(error_metrics([v], [u], "MAE", "gravityAngle"), math.radians(1.0), abs_tol=1e-9)


def test_gravity_angle_clamps_dot_product():
    u = np.array([0.0, 0.0, 1.0])
    assert gravity_angle(u * (1 + 1e-16), u) == 0.0
    assert math.isclose(gravity_angle(-u, u), math.pi)


def test_error_metrics_errors():
    with pytest.raises(ValueError):
        error_metrics([], [])
    with pytest.raises(ValueError):
        error_metrics(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        error_metrics(np.zeros((2, 3)), np.zeros((2, 3)), kind="MAX")


@given(arrays(float, (8, 3), elements=st.floats(-10, 10)), arrays(float, (8, 3), elements=st.floats(-10, 10)))
def test_rmse_at_least_mae(a, b):
    assert error_metrics(a, b, "RMSE") >= error_metrics(a, b, "MAE") - 1e-12
