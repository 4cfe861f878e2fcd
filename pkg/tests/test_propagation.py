import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import random_rotation, random_se23, random_spd
from legged_iekf.diagnostics import product_error
from legged_iekf.liegroup import ProductState, Se23State, exp_so3, hat
from legged_iekf.propagation import (
    GRAVITY,
    integrate_mean,
    invariant_error_transition,
    predict_product,
    predict_robocentric,
    predict_se23,
    product_error_transition,
)
from legged_iekf.state_models import LEFT, PRODUCT, Belief, ImuNoise, ImuSample

NOISE = ImuNoise(np.diag([0.0, 0.0, 3e-2]), 5e-3 * np.eye(3))
A_I = np.array([1.0, 0.0, 9.81])
W_I = np.array([0.0, 0.0, math.pi / 30])


def random_input(rng, t=0.0):
    return ImuSample(t, rng.normal(size=3), rng.normal(size=3) + [0, 0, 9.81])


def test_hover_keeps_velocity():
    v = np.array([0.3, -0.2, 0.1])
    p = np.array([1.0, 2.0, 3.0])
    b = predict_se23(Belief(Se23State(np.eye(3), v, p), np.eye(9)), ImuSample(0, np.zeros(3), [0, 0, 9.81]),
                     NOISE, 0.05)
    assert np.allclose(b.state.vel, v, atol=1e-15)
    assert np.allclose(b.state.pos, p + 0.05 * v, atol=1e-15)
    assert np.array_equal(b.state.rot, np.eye(3))


def test_free_fall():
    dt = 0.05
    b = predict_se23(Belief(Se23State.identity(), np.eye(9)), ImuSample(0, np.zeros(3), np.zeros(3)), NOISE, dt)
    assert np.allclose(b.state.vel, GRAVITY * dt, atol=1e-15)
    assert np.allclose(b.state.pos, GRAVITY * dt * dt / 2, atol=1e-15)


@pytest.mark.parametrize("dt", [0.0, -0.01])
def test_nonpositive_dt_rejected(dt):
    u = ImuSample(0, np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        predict_se23(Belief(Se23State.identity(), np.eye(9)), u, NOISE, dt)
    with pytest.raises(ValueError):
        predict_product(Belief(ProductState.identity(), np.eye(9), PRODUCT), u, NOISE, dt)
    with pytest.raises(ValueError):
        predict_robocentric(Belief(Se23State.identity(), np.eye(9), LEFT), u, NOISE, dt)


def test_wrong_error_side_rejected():
    u = ImuSample(0, np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        predict_se23(Belief(Se23State.identity(), np.eye(9), LEFT), u, NOISE, 0.1)


def _continuous_position(T):
    """Continuous-time truth for constant body rates: R(t) = Exp(w t)."""
    def f(t, s):
        return np.concatenate([exp_so3(W_I * t) @ A_I + GRAVITY, s[:3]])

    sol = solve_ivp(f, (0.0, T), np.zeros(6), rtol=1e-12, atol=1e-12)
    return sol.y[3:, -1]


def test_fine_step_prediction_converges_to_continuous_truth():
    R, v, p = np.eye(3), np.zeros(3), np.zeros(3)
    for _ in range(150_000):
        R, v, p = integrate_mean(R, v, p, W_I, A_I, 1e-4)
    assert np.linalg.norm(p - _continuous_position(15.0)) < 1e-3


@pytest.mark.xfail(strict=True, reason="piecewise-constant inputs at 20 Hz drift ~0.27 m from the 1e-4 s integration")
def test_coarse_prediction_matches_fine_integrator():
    R, v, p = np.eye(3), np.zeros(3), np.zeros(3)
    for _ in range(300):
        R, v, p = integrate_mean(R, v, p, W_I, A_I, 0.05)
    Rf, vf, pf = np.eye(3), np.zeros(3), np.zeros(3)
    for _ in range(150_000):
        Rf, vf, pf = integrate_mean(Rf, vf, pf, W_I, A_I, 1e-4)
    assert np.linalg.norm(p - pf) < 1e-3


# ---------------------------------------------------------------- invariant transition


def test_transition_small_dt_limit(rng):
    u = random_input(rng)
    M = invariant_error_transition(u, 1e-12, random_se23(rng))
    assert np.allclose(M.A, np.eye(9), atol=1e-10)
    assert np.allclose(M.B, 0.0, atol=1e-10)


def test_transition_gravity_blocks():
    dt = 0.05
    A = invariant_error_transition(ImuSample(0, W_I, A_I), dt).A
    gx = hat(GRAVITY)
    assert np.array_equal(A[3:6, 0:3], dt * gx)
    assert np.array_equal(A[6:9, 0:3], 0.5 * dt * dt * gx)
    assert np.array_equal(A[6:9, 3:6], dt * np.eye(3))
    assert np.array_equal(np.diag(A), np.ones(9))


def test_transition_is_autonomous(rng):
    u = random_input(rng)
    a = invariant_error_transition(u, 0.05, random_se23(rng)).A
    b = invariant_error_transition(u, 0.05, random_se23(rng)).A
    assert np.array_equal(a, b)


def test_product_transition_depends_on_mean(rng):
    u = random_input(rng)
    x1 = ProductState(random_rotation(rng), np.zeros(3), np.zeros(3))
    x2 = ProductState(random_rotation(rng), np.zeros(3), np.zeros(3))
    assert not np.array_equal(product_error_transition(x1, u, 0.05).A, product_error_transition(x2, u, 0.05).A)


def _true_step(X, u, dt, w=None):
    """Truth step driven by the sensor input minus noise."""
    wg, wa = (np.zeros(3), np.zeros(3)) if w is None else (w[:3], w[3:])
    return Se23State(*integrate_mean(X.rot, X.vel, X.pos, u.gyro - wg, u.accel - wa, dt))


def test_error_propagation_first_order(rng):
    dt = 0.05
    for _ in range(20):
        Xb = random_se23(rng)
        u = random_input(rng)
        xi = 1e-3 * rng.normal(size=9) / 3
        X = Se23State.exp(xi) @ Xb
        Xb1 = predict_se23(Belief(Xb, np.eye(9)), u, NOISE, dt).state
        X1 = _true_step(X, u, dt)
        A = invariant_error_transition(u, dt, Xb1).A
        assert np.allclose((X1 @ Xb1.inverse()).log(), A @ xi, atol=1e-5)


def test_noise_free_error_recursion_matches_linear_map_exactly_in_position_velocity(rng):
    """With zero rotation error the recursion is linear: xi' = A xi exactly."""
    dt = 0.05
    Xb = random_se23(rng)
    u = random_input(rng)
    xi = np.concatenate([np.zeros(3), rng.normal(size=6)])
    X = Se23State.exp(xi) @ Xb
    Xb1 = predict_se23(Belief(Xb, np.eye(9)), u, NOISE, dt).state
    A = invariant_error_transition(u, dt, Xb1).A
    assert np.allclose((_true_step(X, u, dt) @ Xb1.inverse()).log(), A @ xi, atol=1e-12)


def test_linearization_error_is_second_order(rng):
    dt = 0.05
    Xb = random_se23(rng)
    u = random_input(rng)
    direction = rng.normal(size=15)
    direction /= np.linalg.norm(direction)
    Xb1 = predict_se23(Belief(Xb, np.eye(9)), u, NOISE, dt).state
    M = invariant_error_transition(u, dt, Xb1)
    scales = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    errs = []
    for s in scales:
        xi, w = s * direction[:9], s * direction[9:]
        X1 = _true_step(Se23State.exp(xi) @ Xb, u, dt, w)
        errs.append(np.linalg.norm((X1 @ Xb1.inverse()).log() - (M.A @ xi + M.B @ w)))
    slope = np.polyfit(np.log(scales), np.log(errs), 1)[0]
    assert 1.8 < slope < 2.2


def test_covariance_propagation_formula(rng):
    P = random_spd(rng, 9, 0.1)
    X = random_se23(rng)
    u = random_input(rng)
    b = predict_se23(Belief(X, P), u, NOISE, 0.05)
    M = invariant_error_transition(u, 0.05, b.state)
    expected = M.A @ P @ M.A.T + M.B @ NOISE.Q @ M.B.T
    assert np.allclose(b.cov, 0.5 * (expected + expected.T), atol=1e-14)


# ---------------------------------------------------------------- product group


def test_product_transition_zero_accel_structure():
    x = ProductState(exp_so3(np.array([0.2, -0.1, 0.3])), np.ones(3), np.ones(3))
    A = product_error_transition(x, ImuSample(0, np.zeros(3), np.zeros(3)), 0.05).A
    expected = np.eye(9)
    expected[6:9, 3:6] = 0.05 * np.eye(3)
    assert np.array_equal(A, expected)


def test_product_transition_accel_coupling_block():
    dt = 0.05
    A = product_error_transition(ProductState.identity(), ImuSample(0, W_I, A_I), dt).A
    assert np.allclose(A[3:6, 0:3], -hat(A_I) * dt, atol=0)


def test_product_error_propagation_first_order(rng):
    dt = 0.05
    for _ in range(20):
        X = random_se23(rng)
        xb = ProductState(X.rot, X.vel, X.pos)
        u = random_input(rng)
        dx = 1e-4 * rng.normal(size=9)
        xt = ProductState(exp_so3(dx[:3]) @ xb.rot, xb.vel + dx[3:6], xb.pos + dx[6:9])
        xb1 = predict_product(Belief(xb, np.eye(9), PRODUCT), u, NOISE, dt).state
        xt1 = ProductState(*integrate_mean(xt.rot, xt.vel, xt.pos, u.gyro, u.accel, dt))
        A = product_error_transition(xb, u, dt).A
        assert np.allclose(product_error(xt1, xb1), A @ dx, atol=1e-7)


def test_product_mean_matches_invariant_mean(rng):
    X = random_se23(rng)
    u = random_input(rng)
    a = predict_se23(Belief(X, np.eye(9)), u, NOISE, 0.05).state
    b = predict_product(Belief(ProductState(X.rot, X.vel, X.pos), np.eye(9), PRODUCT), u, NOISE, 0.05).state
    assert np.array_equal(a.rot, b.rot) and np.array_equal(a.vel, b.vel) and np.array_equal(a.pos, b.pos)


@pytest.mark.parametrize("which", ["se23", "product", "robocentric"])
def test_covariance_stays_psd_over_long_chains(which):
    rng = np.random.default_rng(3)
    P = 1e-2 * np.eye(9)
    if which == "se23":
        b, step = Belief(Se23State.identity(), P), predict_se23
    elif which == "product":
        b, step = Belief(ProductState.identity(), P, PRODUCT), predict_product
    else:
        b, step = Belief(Se23State.identity(), P, LEFT), predict_robocentric
    for i in range(10_000):
        b = step(b, ImuSample(0, 0.1 * rng.normal(size=3), rng.normal(size=3) + [0, 0, 9.81]), NOISE, 1e-3)
    assert np.array_equal(b.cov, b.cov.T)
    assert np.linalg.eigvalsh(b.cov).min() >= -1e-12


# ---------------------------------------------------------------- robocentric


def test_robocentric_duality(rng):
    for _ in range(100):
        X = random_se23(rng)
        u = random_input(rng)
        dt = rng.uniform(1e-3, 0.1)
        world = predict_se23(Belief(X, np.eye(9)), u, NOISE, dt).state
        robo = predict_robocentric(Belief(X.inverse(), np.eye(9), LEFT), u, NOISE, dt).state
        inv = world.inverse()
        assert np.allclose(robo.rot, inv.rot, atol=1e-12)
        assert np.allclose(robo.vel, inv.vel, atol=1e-12)
        assert np.allclose(robo.pos, inv.pos, atol=1e-12)


def test_robocentric_hover_from_identity():
    v = np.array([0.5, 0.0, 0.0])
    chi = Se23State(np.eye(3), -v, np.zeros(3))  # inverse of (I, v, 0)
    out = predict_robocentric(Belief(chi, np.eye(9), LEFT), ImuSample(0, np.zeros(3), [0, 0, 9.81]), NOISE, 0.1).state
    assert np.allclose(out.vel, -v, atol=1e-15)
    assert np.allclose(out.pos, -0.1 * v, atol=1e-15)


def test_robocentric_small_dt_limit(rng):
    chi = random_se23(rng)
    out = predict_robocentric(Belief(chi, np.eye(9), LEFT), random_input(rng), NOISE, 1e-12).state
    assert out.allclose(chi, atol=1e-10)


def test_robocentric_covariance_equals_world_covariance(rng):
    X = random_se23(rng)
    P = random_spd(rng, 9, 0.1)
    u = random_input(rng)
    a = predict_se23(Belief(X, P), u, NOISE, 0.05).cov
    b = predict_robocentric(Belief(X.inverse(), P, LEFT), u, NOISE, 0.05).cov
    assert np.allclose(a, b, atol=1e-12)
