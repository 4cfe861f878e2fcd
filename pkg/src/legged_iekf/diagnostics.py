"""Observability, consistency (NEES) and accuracy (MAE/RMSE) metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .liegroup import Se23State, hat, log_so3
from .propagation import GRAVITY
from .state_models import LEFT, PRODUCT, RIGHT, Belief

E3 = np.array([0.0, 0.0, 1.0])


@dataclass
class ObservabilityResult:
    matrix: np.ndarray
    rank: int
    nullspace_basis: np.ndarray  # rows are orthonormal 9-vectors


def build_observability_matrix(dt: float, g: np.ndarray = GRAVITY, rtol: float = 1e-10) -> ObservabilityResult:
    """Stack H, HA, HA^2 for the velocity measurement under the invariant transition."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    H = np.zeros((3, 9))
    H[:, 3:6] = np.eye(3)
    A = np.eye(9)
    A[3:6, 0:3] = dt * hat(g)
    A[6:9, 0:3] = 0.5 * dt * dt * hat(g)
    A[6:9, 3:6] = dt * np.eye(3)
    O = np.vstack([H, H @ A, H @ A @ A])
    _, s, Vt = np.linalg.svd(O)
    rank = int((s > rtol * s[0]).sum())
    return ObservabilityResult(O, rank, Vt[rank:])


def invariant_error(true_state: Se23State, estimate: Se23State) -> np.ndarray:
    """Right-invariant error Log(X X_bar^{-1})."""
    return (true_state @ estimate.inverse()).log()


def product_error(true_state, estimate) -> np.ndarray:
    return np.concatenate(
        [log_so3(true_state.rot @ estimate.rot.T), true_state.vel - estimate.vel, true_state.pos - estimate.pos]
    )


def left_error(true_chi: Se23State, estimate_chi: Se23State) -> np.ndarray:
    """Left-invariant error Log(chi_bar^{-1} chi)."""
    return (estimate_chi.inverse() @ true_chi).log()


def estimation_error(true_state: Se23State, belief: Belief) -> np.ndarray:
    """Geometry-appropriate tangent error between a world-frame truth and a belief."""
    s = belief.state
    if belief.error_side == RIGHT:
        return invariant_error(true_state, s)
    if belief.error_side == PRODUCT:
        return product_error(true_state, s)
    if belief.error_side == LEFT:
        return left_error(true_state.inverse(), s)
    raise ValueError(belief.error_side)


def nees_term(xi: np.ndarray, P: np.ndarray) -> float | None:
    """xi^T P^{-1} xi, or None when P is not positive definite."""
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return None
    u = np.linalg.solve(L, xi)
    return float(u @ u)


@dataclass
class NeesResult:
    mean: np.ndarray
    excluded: int = 0
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def pairwise_sum(values: Sequence[float]) -> float:
    """Tree reduction so that the summation order is fixed by the length alone."""
    vals = list(values)
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return float(vals[0])


def nees_sequence(errors: np.ndarray, covs: np.ndarray) -> NeesResult:
    """Per-step NEES averaged over realizations.

    ``errors`` has shape (K, m, n) and ``covs`` (K, m, n, n).  Samples with a
    singular covariance are dropped from that step's average and counted.
    """
    errors = np.asarray(errors, dtype=float)
    K, m = errors.shape[:2]
    terms = np.full((K, m), np.nan)
    for k in range(K):
        for i in range(m):
            v = nees_term(errors[k, i], covs[k, i])
            if v is not None:
                terms[k, i] = v
    return nees_from_terms(terms)


def nees_from_terms(terms: np.ndarray) -> NeesResult:
    """Average precomputed NEES terms (NaN marks an excluded sample) over axis 0."""
    terms = np.asarray(terms, dtype=float)
    m = terms.shape[1]
    mean = np.full(m, np.nan)
    counts = np.zeros(m, dtype=int)
    for i in range(m):
        col = terms[:, i]
        ok = col[np.isfinite(col)]
        counts[i] = ok.size
        if ok.size:
            mean[i] = pairwise_sum(ok) / ok.size
    return NeesResult(mean, int((~np.isfinite(terms)).sum()), counts)


@dataclass(frozen=True)
class Observables:
    v_base: np.ndarray
    u: np.ndarray
    roll: float
    pitch: float


def observables_from_rv(R: np.ndarray, v: np.ndarray) -> Observables:
    u = R.T @ E3
    u = u / np.linalg.norm(u)
    roll = math.atan2(u[1], u[2])
    pitch = math.asin(min(1.0, max(-1.0, float(u[0]))))
    return Observables(R.T @ v, u, roll, pitch)


def extract_observables(belief_or_state) -> Observables:
    """Base-frame velocity, gravity direction R^T e3, roll and pitch of a belief mean."""
    if isinstance(belief_or_state, Belief):
        s, side = belief_or_state.state, belief_or_state.error_side
    else:
        s, side = belief_or_state, RIGHT
    if side == LEFT:
        # chi = (R^T, -R^T v, -R^T p)
        return observables_from_rv(s.rot.T, -s.rot.T @ s.vel)
    return observables_from_rv(s.rot, s.vel)


def gravity_angle(u_est: np.ndarray, u_ref: np.ndarray) -> float:
    c = float(np.dot(u_est, u_ref) / (np.linalg.norm(u_est) * np.linalg.norm(u_ref)))
    return math.acos(min(1.0, max(-1.0, c)))


def error_metrics(estimates, reference, kind: str = "MAE", metric: str = "euclidean") -> float:
    """MAE or RMSE of per-sample errors; ``gravityAngle`` uses acos of the dot product."""
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if est.size == 0 or ref.size == 0:
        raise ValueError("empty series")
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    if est.ndim == 1:
        est, ref = est[:, None], ref[:, None]
    if metric == "euclidean":
        e = np.linalg.norm(est - ref, axis=1)
    elif metric == "gravityAngle":
        e = np.array([gravity_angle(a, b) for a, b in zip(est, ref)])
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if kind == "MAE":
        return float(np.mean(e))
    if kind == "RMSE":
        return float(np.sqrt(np.mean(e * e)))
    raise ValueError(f"unknown kind {kind!r}")


def canonical_projection(result: ObservabilityResult, v: np.ndarray) -> float:
    """Norm of the component of v that lies outside the nullspace."""
    N = result.nullspace_basis
    return float(np.linalg.norm(v - N.T @ (N @ v)))


__all__ = [
    "ObservabilityResult",
    "build_observability_matrix",
    "canonical_projection",
    "error_metrics",
    "estimation_error",
    "extract_observables",
    "gravity_angle",
    "invariant_error",
    "left_error",
    "nees_from_terms",
    "nees_sequence",
    "nees_term",
    "observables_from_rv",
    "pairwise_sum",
    "product_error",
]
