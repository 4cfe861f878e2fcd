"""Planar groups: SE_2(2) and SO(2) x R^4 with tangent order (theta, v, p)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .se23 import PoseBase, _frozen

SMALL_ANGLE = 1e-5
# Generator of so(2): hat(theta) = theta * J2.
J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def angle_of(R: np.ndarray) -> float:
    return math.atan2(R[1, 0], R[0, 0])


def _v_coeffs(theta: float) -> tuple[float, float]:
    """(sin t / t, (1 - cos t) / t)."""
    if abs(theta) < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 * theta - theta * t2 / 24.0
    half = math.sin(0.5 * theta)
    return math.sin(theta) / theta, 2.0 * half * half / theta


def v_matrix(theta: float) -> np.ndarray:
    """Left Jacobian of SO(2) acting on the translational parts."""
    a, b = _v_coeffs(theta)
    return np.array([[a, -b], [b, a]])


def inv_v_matrix(theta: float) -> np.ndarray:
    a, b = _v_coeffs(theta)
    return np.array([[a, b], [-b, a]]) / (a * a + b * b)


def _a_matrix(theta: float) -> np.ndarray:
    """d(V(theta) u)/d theta, up to the u factor: V'(theta) written as a 2x2 map."""
    if abs(theta) < 1e-2:
        t2 = theta * theta
        p = theta / 6.0 - theta * t2 / 120.0 + theta * t2 * t2 / 5040.0
        q = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        half = math.sin(0.5 * theta)
        p = (theta - math.sin(theta)) / (theta * theta)
        q = 2.0 * half * half / (theta * theta)
    return np.array([[p, q], [-q, p]])


def hat_se22(xi: np.ndarray) -> np.ndarray:
    M = np.zeros((4, 4))
    M[:2, :2] = xi[0] * J2
    M[:2, 2] = xi[1:3]
    M[:2, 3] = xi[3:5]
    return M


def vee_se22(M: np.ndarray) -> np.ndarray:
    return np.array([M[1, 0], M[0, 2], M[1, 2], M[0, 3], M[1, 3]])


@dataclass(frozen=True, eq=False)
class Se22State(PoseBase):
    """Element of SE_2(2) embedded as a 4x4 matrix."""

    dim = 2
    hat = staticmethod(hat_se22)
    vee = staticmethod(vee_se22)

    @classmethod
    def exp(cls, xi: np.ndarray) -> "Se22State":
        th = float(xi[0])
        V = v_matrix(th)
        return cls(rot2(th), V @ xi[1:3], V @ xi[3:5])

    @classmethod
    def log_of(cls, X: "Se22State") -> np.ndarray:
        th = angle_of(X.rot)
        Vi = inv_v_matrix(th)
        return np.concatenate([[th], Vi @ X.vel, Vi @ X.pos])

    def adjoint(self) -> np.ndarray:
        A = np.zeros((5, 5))
        A[0, 0] = 1.0
        A[1:3, 1:3] = self.rot
        A[3:5, 3:5] = self.rot
        A[1:3, 0] = -J2 @ self.vel
        A[3:5, 0] = -J2 @ self.pos
        return A

    @staticmethod
    def left_jacobian(xi: np.ndarray) -> np.ndarray:
        th = float(xi[0])
        V = v_matrix(th)
        A = _a_matrix(th)
        out = np.zeros((5, 5))
        out[0, 0] = 1.0
        out[1:3, 1:3] = V
        out[3:5, 3:5] = V
        out[1:3, 0] = A @ xi[1:3]
        out[3:5, 0] = A @ xi[3:5]
        return out

    @staticmethod
    def right_jacobian(xi: np.ndarray) -> np.ndarray:
        return Se22State.left_jacobian(-np.asarray(xi))


@dataclass(frozen=True, eq=False)
class Product2State:
    """Element of SO(2) x R^4."""

    rot: np.ndarray
    vel: np.ndarray
    pos: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot", _frozen(self.rot, (2, 2)))
        object.__setattr__(self, "vel", _frozen(self.vel, (2,)))
        object.__setattr__(self, "pos", _frozen(self.pos, (2,)))

    @classmethod
    def identity(cls) -> "Product2State":
        return cls(np.eye(2), np.zeros(2), np.zeros(2))

    def inverse(self) -> "Product2State":
        return Product2State(self.rot.T, -self.vel, -self.pos)

    def __matmul__(self, other):
        if not isinstance(other, Product2State):
            return NotImplemented
        return Product2State(self.rot @ other.rot, self.vel + other.vel, self.pos + other.pos)

    @classmethod
    def exp(cls, xi: np.ndarray) -> "Product2State":
        return cls(rot2(float(xi[0])), xi[1:3], xi[3:5])

    @classmethod
    def log_of(cls, x: "Product2State") -> np.ndarray:
        return np.concatenate([[angle_of(x.rot)], x.vel, x.pos])

    def log(self) -> np.ndarray:
        return Product2State.log_of(self)

    @staticmethod
    def right_jacobian(xi: np.ndarray) -> np.ndarray:
        return np.eye(5)

    @staticmethod
    def left_jacobian(xi: np.ndarray) -> np.ndarray:
        return np.eye(5)

    def allclose(self, other, atol: float = 1e-12) -> bool:
        return PoseBase.allclose(self, other, atol)


def exp_se22(xi: np.ndarray) -> Se22State:
    return Se22State.exp(xi)


def log_se22(X: Se22State) -> np.ndarray:
    return Se22State.log_of(X)
