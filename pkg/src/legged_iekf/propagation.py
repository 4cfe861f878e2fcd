"""IMU prediction for the world-centric SE_2(3), product SO(3) x R^6 and robocentric filters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .liegroup import ProductState, Se23State, exp_so3, hat, right_jacobian_so3
from .state_models import LEFT, PRODUCT, RIGHT, Belief, ImuNoise, ImuSample, clean_covariance

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class PropagationMatrices:
    A: np.ndarray
    B: np.ndarray


def _check_dt(dt: float) -> None:
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")


def integrate_mean(R, v, p, gyro, accel, dt, g=GRAVITY):
    """One noise-free step of the discrete IMU dynamics (piecewise-constant inputs)."""
    acc_w = R @ accel + g
    R1 = R @ exp_so3(gyro * dt)
    v1 = v + acc_w * dt
    p1 = p + v * dt + 0.5 * dt * dt * acc_w
    return R1, v1, p1


def noise_jacobian_body(gyro: np.ndarray, dt: float) -> np.ndarray:
    """9x6 map G from (w_g, w_a) to the body-frame perturbation of the predicted state."""
    Gt = exp_so3(gyro * dt).T
    G = np.zeros((9, 6))
    G[0:3, 0:3] = -right_jacobian_so3(gyro * dt) * dt
    G[3:6, 3:6] = -Gt * dt
    G[6:9, 3:6] = -Gt * (0.5 * dt * dt)
    return G


def invariant_error_transition(
    u: ImuSample, dt: float, predicted_mean: Se23State | None = None, g: np.ndarray = GRAVITY
) -> PropagationMatrices:
    """A = Ad_W M (independent of the mean) and B = Ad_{X_pred} G.

    ``predicted_mean`` is the post-prediction nominal; B is zero-filled when omitted.
    """
    _check_dt(dt)
    A = np.eye(9)
    gx = hat(g)
    A[3:6, 0:3] = dt * gx
    A[6:9, 0:3] = 0.5 * dt * dt * gx
    A[6:9, 3:6] = dt * np.eye(3)
    if predicted_mean is None:
        B = np.zeros((9, 6))
    else:
        B = predicted_mean.adjoint() @ noise_jacobian_body(u.gyro, dt)
    return PropagationMatrices(A, B)


def _propagate_cov(P, A, B, Q):
    return clean_covariance(A @ P @ A.T + B @ Q @ B.T)


def predict_se23(
    belief: Belief, u: ImuSample, noise: ImuNoise, dt: float, g: np.ndarray = GRAVITY
) -> Belief:
    """Right-invariant IEKF prediction."""
    _check_dt(dt)
    if belief.error_side != RIGHT:
        raise ValueError("predict_se23 expects a right-invariant belief")
    X = belief.state
    X1 = Se23State(*integrate_mean(X.rot, X.vel, X.pos, u.gyro, u.accel, dt, g))
    M = invariant_error_transition(u, dt, X1, g)
    return Belief(X1, _propagate_cov(belief.cov, M.A, M.B, noise.Q), RIGHT)


def product_error_transition(
    mean: ProductState, u: ImuSample, dt: float
) -> PropagationMatrices:
    """Error-state transition of the SO(3) x R^6 filter; depends on the mean."""
    _check_dt(dt)
    Ra = hat(mean.rot @ u.accel)
    A = np.eye(9)
    A[3:6, 0:3] = -Ra * dt
    A[6:9, 0:3] = -Ra * (0.5 * dt * dt)
    A[6:9, 3:6] = dt * np.eye(3)
    R1 = mean.rot @ exp_so3(u.gyro * dt)
    B = np.zeros((9, 6))
    B[0:3, 0:3] = R1 @ (-right_jacobian_so3(u.gyro * dt) * dt)
    B[3:6, 3:6] = -mean.rot * dt
    B[6:9, 3:6] = -mean.rot * (0.5 * dt * dt)
    return PropagationMatrices(A, B)


def predict_product(
    belief: Belief, u: ImuSample, noise: ImuNoise, dt: float, g: np.ndarray = GRAVITY
) -> Belief:
    """SO(3)-EKF prediction with the same mean integration as the invariant filter."""
    _check_dt(dt)
    if belief.error_side != PRODUCT:
        raise ValueError("predict_product expects a product-group belief")
    x = belief.state
    M = product_error_transition(x, u, dt)
    x1 = ProductState(*integrate_mean(x.rot, x.vel, x.pos, u.gyro, u.accel, dt, g))
    return Belief(x1, _propagate_cov(belief.cov, M.A, M.B, noise.Q), PRODUCT)


def integrate_robocentric(C, v, r, gyro, accel, dt, g=GRAVITY):
    """Noise-free step of the inverse state chi = X^{-1} = (C, v_chi, r_chi)."""
    Gt = exp_so3(gyro * dt).T
    Cg = C @ g
    C1 = Gt @ C
    v1 = Gt @ (v - accel * dt - dt * Cg)
    r1 = Gt @ (r + dt * v - 0.5 * dt * dt * (accel + Cg))
    return C1, v1, r1


def predict_robocentric(
    belief: Belief, u: ImuSample, noise: ImuNoise, dt: float, g: np.ndarray = GRAVITY
) -> Belief:
    """Left-invariant prediction of the robocentric state.

    The left error of chi is the negated right error of X, so the transition
    is the same Ad_W M and the noise enters through Ad_{chi_pred^{-1}} G.
    """
    _check_dt(dt)
    if belief.error_side != LEFT:
        raise ValueError("predict_robocentric expects a left-invariant belief")
    chi = belief.state
    chi1 = Se23State(*integrate_robocentric(chi.rot, chi.vel, chi.pos, u.gyro, u.accel, dt, g))
    M = invariant_error_transition(u, dt, chi1.inverse(), g)
    return Belief(chi1, _propagate_cov(belief.cov, M.A, M.B, noise.Q), LEFT)
