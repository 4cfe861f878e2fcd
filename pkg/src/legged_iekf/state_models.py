"""Beliefs, sensor samples, noise models and the contact-velocity measurement pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .liegroup import ProductState, Se23State, hat, oplus_right

RIGHT = "rightInvariant"
LEFT = "leftInvariant"
PRODUCT = "productRight"
ERROR_SIDES = (RIGHT, LEFT, PRODUCT)

# Homogeneous anchor of the base-velocity observation: X^{-1} d = [R^T v; -1; 0].
VELOCITY_ANCHOR = np.array([0.0, 0.0, 0.0, -1.0, 0.0])

SIM_GRF_THRESHOLD = 30.0
REAL_GRF_THRESHOLD = 60.0
EIG_FLOOR = -1e-12


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def clean_covariance(P: np.ndarray) -> np.ndarray:
    """Symmetrize, and clamp eigenvalues only if they fall below the floor."""
    P = symmetrize(P)
    w, V = np.linalg.eigh(P)
    if w[0] < EIG_FLOOR:
        P = symmetrize((V * np.clip(w, 0.0, None)) @ V.T)
    return P


@dataclass(frozen=True, eq=False)
class Belief:
    """Concentrated Gaussian: a group mean and a covariance on its tangent error."""

    state: object
    cov: np.ndarray
    error_side: str = RIGHT

    def __post_init__(self):
        if self.error_side not in ERROR_SIDES:
            raise ValueError(f"unknown error side {self.error_side!r}")
        cov = np.array(self.cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError(f"covariance must be square, got {cov.shape}")
        object.__setattr__(self, "cov", cov)

    def with_(self, **kw) -> "Belief":
        return replace(self, **kw)


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))


@dataclass(frozen=True)
class ImuNoise:
    Qg: np.ndarray
    Qa: np.ndarray

    @property
    def Q(self) -> np.ndarray:
        Q = np.zeros((6, 6))
        Q[:3, :3] = self.Qg
        Q[3:, 3:] = self.Qa
        return Q


@dataclass(frozen=True)
class ContactVelocityMeasurement:
    t: float
    v_base: np.ndarray
    Qf: np.ndarray
    contact_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "v_base", np.asarray(self.v_base, dtype=float).reshape(3))
        object.__setattr__(self, "Qf", np.asarray(self.Qf, dtype=float).reshape(3, 3))


@dataclass(frozen=True)
class FootVelocitySample:
    t: float
    foot_id: int
    v_foot_base: np.ndarray
    in_contact: bool = True
    grf_z: float | None = None


@dataclass(frozen=True)
class ImuExtrinsics:
    R_IB: np.ndarray = field(default_factory=lambda: np.eye(3))
    r_BI: np.ndarray = field(default_factory=lambda: np.zeros(3))


def contact_from_grf(grf_z: float | None, flag: bool, threshold: float = SIM_GRF_THRESHOLD) -> bool:
    """Contact decision: thresholded normal force when available, else the logged flag."""
    if grf_z is None or not np.isfinite(grf_z):
        return bool(flag)
    return bool(grf_z > threshold)


def aggregate_contact_velocity(
    feet: Sequence[FootVelocitySample], Qf: np.ndarray, pre_negated: bool = False
) -> ContactVelocityMeasurement | None:
    """Base velocity as the negated mean of stance-foot velocities (static contact)."""
    stance = [f for f in feet if f.in_contact]
    if not stance:
        return None
    ts = {f.t for f in feet}
    if len(ts) != 1:
        raise ValueError(f"foot samples must share one timestamp, got {sorted(ts)}")
    # Sort before summing so the result does not depend on foot order.
    vs = np.array(sorted((np.asarray(f.v_foot_base, dtype=float) for f in stance), key=tuple))
    mean = vs.sum(axis=0) / len(stance)
    v = mean if pre_negated else -mean
    return ContactVelocityMeasurement(stance[0].t, v, np.asarray(Qf, dtype=float), len(stance))


def to_imu_frame(m: ContactVelocityMeasurement, ext: ImuExtrinsics) -> ContactVelocityMeasurement:
    """Express the base velocity in the IMU frame; the lever-arm term is neglected."""
    R = np.asarray(ext.R_IB, dtype=float)
    return replace(m, v_base=R @ m.v_base, Qf=symmetrize(R @ m.Qf @ R.T))


def smooth_measurements(
    ms: Iterable[ContactVelocityMeasurement | None],
) -> list[ContactVelocityMeasurement | None]:
    """Average each velocity with the previous available one (two-sample smoothing)."""
    out: list[ContactVelocityMeasurement | None] = []
    prev = None
    for m in ms:
        if m is None:
            out.append(None)
            continue
        out.append(m if prev is None else replace(m, v_base=0.5 * (m.v_base + prev.v_base)))
        prev = m
    return out


def embed_measurement(m: ContactVelocityMeasurement) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Homogeneous observation y, anchor d and the lifted 5x5 noise covariance N."""
    y = np.concatenate([m.v_base, [-1.0, 0.0]])
    N = np.zeros((5, 5))
    N[:3, :3] = m.Qf
    return y, VELOCITY_ANCHOR.copy(), N


def sample_gaussian(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(0, P) via a Cholesky factor, falling back to eigh if P is singular PSD."""
    P = symmetrize(np.asarray(P, dtype=float))
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(P)
        if w.min() < -1e-12 * max(1.0, abs(w).max()):
            raise ValueError("covariance is not positive semidefinite") from None
        L = V * np.sqrt(np.clip(w, 0.0, None))
    return L @ rng.standard_normal(P.shape[0])


def sample_initial_belief(
    true_state: Se23State, P0: np.ndarray, seed: int | np.random.Generator
) -> tuple[np.ndarray, Belief]:
    """Sample a true right-invariant error xi0 and start the filter at (-xi0) (+) X0."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    xi0 = sample_gaussian(P0, rng)
    mean = oplus_right(-xi0, true_state)
    return xi0, Belief(mean, symmetrize(np.asarray(P0, dtype=float)), RIGHT)


def product_error_jacobian(nominal) -> np.ndarray:
    """Linear map from the right-invariant error to the product-group error at ``nominal``."""
    J = np.eye(9)
    J[3:6, 0:3] = -hat(nominal.vel)
    J[6:9, 0:3] = -hat(nominal.pos)
    return J


def product_error_init(
    xi0: np.ndarray, nominal, P0: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """delta_x0 = J xi0 and Sigma0 = J P0 J^T (symmetrized)."""
    J = product_error_jacobian(nominal)
    return J @ xi0, symmetrize(J @ P0 @ J.T)


def product_belief_from_invariant(
    xi0: np.ndarray, invariant_nominal: Se23State, true_state: Se23State, P0: np.ndarray
) -> Belief:
    """Product-group belief whose error sample matches the invariant one to first order.

    The nominal is built as (-delta_x0) (+) x0 so that the product error
    x (-) x_bar equals +delta_x0, mirroring the invariant initialization.
    """
    dx0, Sigma0 = product_error_init(xi0, invariant_nominal, P0)
    x0 = ProductState(true_state.rot, true_state.vel, true_state.pos)
    return Belief(ProductState.exp(-dx0) @ x0, Sigma0, PRODUCT)


def left_belief_from_invariant(invariant: Belief) -> Belief:
    """Robocentric belief chi = X^{-1}; the left error of chi is the right error of X negated."""
    return Belief(invariant.state.inverse(), invariant.cov.copy(), LEFT)
