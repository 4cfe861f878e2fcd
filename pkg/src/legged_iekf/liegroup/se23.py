"""SE_2(3) (double direct isometries) and the product group SO(3) x R^6.

Both groups carry the same data (R, v, p) and share the tangent ordering
(xi_R, xi_v, xi_p); they differ only in the group law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .so3 import (
    exp_so3,
    hat,
    inv_left_jacobian_so3,
    left_jacobian_so3,
    log_so3,
    reorthonormalize,
    right_jacobian_so3,
    vee,
)

# The Q-block coefficients lose ~eps / theta^2 to cancellation; switch early.
Q_SMALL_ANGLE = 1e-2


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PoseBase:
    """Shared storage and matrix-group law for SE_2(n) elements (R, v, p)."""

    rot: np.ndarray
    vel: np.ndarray
    pos: np.ndarray

    dim = 3

    def __post_init__(self):
        n = self.dim
        object.__setattr__(self, "rot", _frozen(self.rot, (n, n)))
        object.__setattr__(self, "vel", _frozen(self.vel, (n,)))
        object.__setattr__(self, "pos", _frozen(self.pos, (n,)))

    @classmethod
    def identity(cls):
        n = cls.dim
        return cls(np.eye(n), np.zeros(n), np.zeros(n))

    @classmethod
    def from_matrix(cls, M: np.ndarray):
        n = cls.dim
        return cls(M[:n, :n], M[:n, n], M[:n, n + 1])

    def matrix(self) -> np.ndarray:
        n = self.dim
        M = np.eye(n + 2)
        M[:n, :n] = self.rot
        M[:n, n] = self.vel
        M[:n, n + 1] = self.pos
        return M

    def inverse(self):
        Rt = self.rot.T
        return type(self)(Rt, -Rt @ self.vel, -Rt @ self.pos)

    def __matmul__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        R = self.rot
        return type(self)(
            self._fix(R @ other.rot), R @ other.vel + self.vel, R @ other.pos + self.pos
        )

    @staticmethod
    def _fix(R):
        return reorthonormalize(R) if R.shape == (3, 3) else R

    def act(self, d: np.ndarray) -> np.ndarray:
        """Homogeneous action X d of the matrix embedding on a vector."""
        d = np.asarray(d, dtype=float)
        n = self.dim
        if d.shape != (n + 2,):
            raise ValueError(f"expected a {n + 2}-vector, got shape {d.shape}")
        out = d.copy()
        out[:n] = self.rot @ d[:n] + self.vel * d[n] + self.pos * d[n + 1]
        return out

    def log(self) -> np.ndarray:
        return type(self).log_of(self)

    def allclose(self, other, atol: float = 1e-12) -> bool:
        return (
            np.allclose(self.rot, other.rot, atol=atol, rtol=0)
            and np.allclose(self.vel, other.vel, atol=atol, rtol=0)
            and np.allclose(self.pos, other.pos, atol=atol, rtol=0)
        )


def q_coefficients(theta: float) -> tuple[float, float, float]:
    """Coefficients (a, b, c) of the Q-block polynomial in (V, U)."""
    t2 = theta * theta
    if theta < Q_SMALL_ANGLE:
        a = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        b = -1.0 / 24.0 + t2 / 720.0 - t2 * t2 / 40320.0
        c = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
        return a, b, c
    s, co = math.sin(theta), math.cos(theta)
    a = (theta - s) / (theta * t2)
    b = (1.0 - 0.5 * t2 - co) / (t2 * t2)
    c = (2.0 * theta + theta * co - 3.0 * s) / (2.0 * t2 * t2 * theta)
    return a, b, c


def q_block(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Off-diagonal block of the SE_2(3) left Jacobian coupling rotation to u."""
    theta = math.sqrt(float(w @ w))
    a, b, c = q_coefficients(theta)
    V, U = hat(w), hat(u)
    VU, UV = V @ U, U @ V
    VUV = VU @ V
    return (
        0.5 * U
        + a * (VU + UV + VUV)
        - b * (V @ VU + UV @ V - 3.0 * VUV)
        + c * (VUV @ V + V @ VUV)
    )


def hat_se23(xi: np.ndarray) -> np.ndarray:
    M = np.zeros((5, 5))
    M[:3, :3] = hat(xi[:3])
    M[:3, 3] = xi[3:6]
    M[:3, 4] = xi[6:9]
    return M


def vee_se23(M: np.ndarray) -> np.ndarray:
    return np.concatenate([vee(M[:3, :3]), M[:3, 3], M[:3, 4]])


@dataclass(frozen=True, eq=False)
class Se23State(PoseBase):
    """Element of SE_2(3) embedded as a 5x5 matrix."""

    hat = staticmethod(hat_se23)
    vee = staticmethod(vee_se23)

    @classmethod
    def exp(cls, xi: np.ndarray) -> "Se23State":
        w = xi[:3]
        J = left_jacobian_so3(w)
        return cls(exp_so3(w), J @ xi[3:6], J @ xi[6:9])

    @classmethod
    def log_of(cls, X: "Se23State") -> np.ndarray:
        w = log_so3(X.rot)
        Ji = inv_left_jacobian_so3(w)
        return np.concatenate([w, Ji @ X.vel, Ji @ X.pos])

    def adjoint(self) -> np.ndarray:
        R = self.rot
        A = np.zeros((9, 9))
        A[0:3, 0:3] = R
        A[3:6, 3:6] = R
        A[6:9, 6:9] = R
        A[3:6, 0:3] = hat(self.vel) @ R
        A[6:9, 0:3] = hat(self.pos) @ R
        return A

    @staticmethod
    def left_jacobian(xi: np.ndarray) -> np.ndarray:
        w = xi[:3]
        J = left_jacobian_so3(w)
        out = np.zeros((9, 9))
        out[0:3, 0:3] = J
        out[3:6, 3:6] = J
        out[6:9, 6:9] = J
        out[3:6, 0:3] = q_block(w, xi[3:6])
        out[6:9, 0:3] = q_block(w, xi[6:9])
        return out

    @staticmethod
    def right_jacobian(xi: np.ndarray) -> np.ndarray:
        return Se23State.left_jacobian(-np.asarray(xi))


@dataclass(frozen=True, eq=False)
class ProductState:
    """Element of SO(3) x R^6: rotations multiply, vector parts add."""

    rot: np.ndarray
    vel: np.ndarray
    pos: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot", _frozen(self.rot, (3, 3)))
        object.__setattr__(self, "vel", _frozen(self.vel, (3,)))
        object.__setattr__(self, "pos", _frozen(self.pos, (3,)))

    @classmethod
    def identity(cls) -> "ProductState":
        return cls(np.eye(3), np.zeros(3), np.zeros(3))

    def inverse(self) -> "ProductState":
        return ProductState(self.rot.T, -self.vel, -self.pos)

    def __matmul__(self, other):
        if not isinstance(other, ProductState):
            return NotImplemented
        return ProductState(
            reorthonormalize(self.rot @ other.rot), self.vel + other.vel, self.pos + other.pos
        )

    @classmethod
    def exp(cls, xi: np.ndarray) -> "ProductState":
        return cls(exp_so3(xi[:3]), xi[3:6], xi[6:9])

    @classmethod
    def log_of(cls, x: "ProductState") -> np.ndarray:
        return np.concatenate([log_so3(x.rot), x.vel, x.pos])

    def log(self) -> np.ndarray:
        return ProductState.log_of(self)

    def adjoint(self) -> np.ndarray:
        A = np.eye(9)
        A[0:3, 0:3] = self.rot
        return A

    @staticmethod
    def right_jacobian(xi: np.ndarray) -> np.ndarray:
        J = np.eye(9)
        J[0:3, 0:3] = right_jacobian_so3(xi[:3])
        return J

    @staticmethod
    def left_jacobian(xi: np.ndarray) -> np.ndarray:
        J = np.eye(9)
        J[0:3, 0:3] = left_jacobian_so3(xi[:3])
        return J

    def allclose(self, other, atol: float = 1e-12) -> bool:
        return PoseBase.allclose(self, other, atol)


def exp_se23(xi: np.ndarray) -> Se23State:
    return Se23State.exp(xi)


def log_se23(X: Se23State) -> np.ndarray:
    return Se23State.log_of(X)


def exp_product(xi: np.ndarray) -> ProductState:
    return ProductState.exp(xi)


def log_product(x: ProductState) -> np.ndarray:
    return ProductState.log_of(x)


def adjoint(X) -> np.ndarray:
    return X.adjoint()


def left_jacobian_se23(xi: np.ndarray) -> np.ndarray:
    return Se23State.left_jacobian(xi)


def right_jacobian_se23(xi: np.ndarray) -> np.ndarray:
    return Se23State.right_jacobian(xi)
