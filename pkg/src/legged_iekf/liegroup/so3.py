"""Rotation group SO(3): hat/vee, Exp/Log and the left/right Jacobians."""

from __future__ import annotations

import math

import numpy as np

SMALL_ANGLE = 1e-5
# Below this angle Log switches to the axis-extraction branch near pi.
NEAR_PI = 1e-6
ORTHO_TOL = 1e-9


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hat`; reads the antisymmetric part of ``m``."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _coeffs(theta: float) -> tuple[float, float]:
    """(sin t / t, (1 - cos t) / t^2) with a Taylor branch at small angles."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    half = math.sin(0.5 * theta)
    return math.sin(theta) / theta, 2.0 * half * half / (theta * theta)


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula for the exponential map of SO(3)."""
    theta = math.sqrt(float(w @ w))
    a, b = _coeffs(theta)
    V = hat(w)
    return np.eye(3) + a * V + b * (V @ V)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R``; the returned angle lies in [0, pi]."""
    s_vec = vee(R - R.T)
    s = 0.5 * math.sqrt(float(s_vec @ s_vec))
    c = 0.5 * (float(np.trace(R)) - 1.0)
    c = min(1.0, max(-1.0, c))
    theta = math.atan2(s, c)
    if math.pi - theta < NEAR_PI:
        # R + R^T = 2 cos(t) I + 2 (1 - cos(t)) n n^T; read n off the dominant column.
        B = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
        k = int(np.argmax(np.diag(B)))
        n = B[:, k] / math.sqrt(max(B[k, k], 0.0))
        if n @ s_vec < 0.0:
            n = -n
        return theta * n / math.sqrt(float(n @ n))
    if theta < SMALL_ANGLE:
        scale = 0.5 + theta * theta / 12.0
    else:
        scale = 0.5 * theta / s
    return scale * s_vec


def left_jacobian_so3(w: np.ndarray) -> np.ndarray:
    theta = math.sqrt(float(w @ w))
    V = hat(w)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        b = 0.5 - t2 / 24.0
        c = 1.0 / 6.0 - t2 / 120.0
    else:
        half = math.sin(0.5 * theta)
        b = 2.0 * half * half / (theta * theta)
        c = (theta - math.sin(theta)) / theta**3
    return np.eye(3) + b * V + c * (V @ V)


def inv_left_jacobian_so3(w: np.ndarray) -> np.ndarray:
    theta = math.sqrt(float(w @ w))
    V = hat(w)
    if theta < SMALL_ANGLE:
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        half = 0.5 * theta
        c = 1.0 / (theta * theta) - math.cos(half) / (2.0 * theta * math.sin(half))
    return np.eye(3) - 0.5 * V + c * (V @ V)


def right_jacobian_so3(w: np.ndarray) -> np.ndarray:
    return left_jacobian_so3(-np.asarray(w))


def inv_right_jacobian_so3(w: np.ndarray) -> np.ndarray:
    return inv_left_jacobian_so3(-np.asarray(w))


def project_to_so3(R: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def reorthonormalize(R: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    """Project ``R`` back to SO(3) only when it has drifted beyond ``tol``."""
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        return project_to_so3(R)
    return R
