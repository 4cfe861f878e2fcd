"""Measurement updates: IEKF, iterated IEKF (Gauss-Newton MAP), SO(3)-EKF variants, yaw fix.

Every iterated filter minimises

    J(xi) = 1/2 xi^T P^{-1} xi + 1/2 |z - h(xi)|^2_N

with Gauss-Newton steps xi <- K (z - h(xi) + H xi), where h(0) = 0 and
K = P H^T (H P H^T + N)^{-1}.  The invariant filters and the product-group
filters differ only in h, its Jacobian and the covariance rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .liegroup import ProductState, Se23State, exp_so3, hat, right_jacobian_so3
from .liegroup.se22 import J2, Product2State, rot2
from .state_models import (
    LEFT,
    PRODUCT,
    RIGHT,
    VELOCITY_ANCHOR,
    Belief,
    ContactVelocityMeasurement,
    clean_covariance,
)

COND_MAX = 1e12
# Relative slack so that round-off at convergence never trips the loss guard.
LOSS_SLACK = 1e-12

STOP_STEP = "step_tol"
STOP_LOSS = "loss_increase"
STOP_MAX = "max_iterations"
STOP_DIVERGED = "diverged"


class SingularInnovationError(LinAlgError):
    """Innovation covariance is not positive definite or is too ill-conditioned."""


@dataclass(frozen=True)
class UpdateConfig:
    max_iterations: int = 20
    step_tol: float = 1e-4
    loss_guard: bool = True
    yaw_correction: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.step_tol > 0:
            raise ValueError("step_tol must be positive")


@dataclass
class UpdateReport:
    iterations: int
    final_step_norm: float
    objective_trace: list[float]
    innovation: np.ndarray
    stop_reason: str
    xi_hat: np.ndarray
    iterates: list[np.ndarray] = field(default_factory=list)
    diverged: bool = False


def _gain(P: np.ndarray, H: np.ndarray, N: np.ndarray):
    """Kalman gain with a Cholesky solve and a conditioning guard on S."""
    PHt = P @ H.T
    S = H @ PHt + N
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if w[0] <= 0.0 or w[-1] > COND_MAX * w[0]:
        raise SingularInnovationError(f"innovation covariance singular (eigenvalues {w})")
    cf = cho_factor(S, check_finite=False)
    K = cho_solve(cf, PHt.T, check_finite=False).T
    return K, S, cf


class _Objective:
    """MAP cost.  The prior term uses xi = P H^T beta, so singular P is fine."""

    def __init__(self, z: np.ndarray, N: np.ndarray, h: Callable):
        self.z, self.h = z, h
        try:
            self._ncf = cho_factor(N, check_finite=False)
            self._solve = lambda r: cho_solve(self._ncf, r, check_finite=False)
        except LinAlgError:
            Ni = np.linalg.pinv(N)
            self._solve = lambda r: Ni @ r

    def data(self, xi: np.ndarray) -> float:
        r = self.z - self.h(xi)
        return 0.5 * float(r @ self._solve(r))

    def __call__(self, xi, beta=None, S=None, N=None) -> float:
        prior = 0.0 if beta is None else 0.5 * float(beta @ (S - N) @ beta)
        return prior + self.data(xi)


def gauss_newton(
    P: np.ndarray,
    z: np.ndarray,
    N: np.ndarray,
    h: Callable[[np.ndarray], np.ndarray],
    jac: Callable[[np.ndarray], np.ndarray],
    H0: np.ndarray,
    cfg: UpdateConfig,
    keep_best: bool = False,
):
    """Gauss-Newton MAP iterations from xi = 0.

    Returns (xi_hat, gains, report) where ``gains`` holds (K, H) of the first
    step and of the step that produced ``xi_hat``.
    """
    n = P.shape[0]
    obj = _Objective(z, N, h)
    xi = np.zeros(n)
    trace = [obj(xi)]
    iterates = [xi]
    first = None
    last = None
    best = (np.inf, xi, None)
    steps: list[float] = []
    stop = STOP_MAX
    diverged = False
    it = 0
    for j in range(cfg.max_iterations):
        H = H0 if j == 0 else jac(xi)
        K, S, cf = _gain(P, H, N)
        r = z if j == 0 else z - h(xi) + H @ xi
        beta = cho_solve(cf, r, check_finite=False)
        xi_new = P @ (H.T @ beta) if j > 0 else K @ z
        it = j + 1
        if first is None:
            first = (K, H)
        step = float(np.linalg.norm(xi_new - xi))
        J_new = obj(xi_new, beta, S, N)
        # A single-iteration run is the plain IEKF step and is never guarded.
        if cfg.loss_guard and cfg.max_iterations > 1 and J_new > trace[-1] * (1.0 + LOSS_SLACK):
            stop = STOP_LOSS
            trace.append(J_new)
            if last is None:
                last = first
            break
        xi, last = xi_new, (K, H)
        iterates.append(xi)
        trace.append(J_new)
        steps.append(step)
        if J_new < best[0]:
            best = (J_new, xi, (K, H))
        if step < cfg.step_tol:
            stop = STOP_STEP
            break
        if not cfg.loss_guard and len(steps) >= 4 and steps[-1] > 10.0 * steps[-4]:
            stop = STOP_DIVERGED
            diverged = True
            break
    xi_hat, gains_last = xi, last
    if keep_best and best[2] is not None and best[1] is not xi:
        xi_hat, gains_last = best[1], best[2]
        diverged = True
    report = UpdateReport(
        iterations=it,
        final_step_norm=steps[-1] if steps else 0.0,
        objective_trace=trace,
        innovation=np.array(z, dtype=float),
        stop_reason=stop,
        xi_hat=xi_hat,
        iterates=iterates,
        diverged=diverged,
    )
    return xi_hat, (first, gains_last), report


# --------------------------------------------------------------------------
# invariant filters (SE_2(3) and SE_2(2))


def anchor_jacobian(group, d: np.ndarray, sign: float) -> np.ndarray:
    """Top rows of u -> sign * hat(u) d: the constant invariant-error Jacobian."""
    n = group.dim
    m = 5 if n == 2 else 9
    cols = [sign * (group.hat(e) @ d)[:n] for e in np.eye(m)]
    return np.array(cols).T


def invariant_innovation(belief: Belief, y: np.ndarray, d: np.ndarray, Qf: np.ndarray):
    """Reduced innovation z and its lifted noise N for a right or left invariant belief.

    Right: z = [X y - d]_top, N = R Qf R^T.
    Left (robocentric chi): z = [chi^{-1} y - d]_top, N = C^T Qf C.
    """
    X = belief.state
    n = X.dim
    if belief.error_side == RIGHT:
        z = (X.act(y) - d)[:n]
        R = X.rot
    elif belief.error_side == LEFT:
        z = (X.inverse().act(y) - d)[:n]
        R = X.rot.T
    else:
        raise ValueError("invariant innovation needs an invariant belief")
    return z, R @ Qf @ R.T


def innovation_right(belief: Belief, y: np.ndarray, d: np.ndarray) -> np.ndarray:
    if belief.error_side != RIGHT:
        raise ValueError("innovation_right expects a right-invariant belief")
    X = belief.state
    return (X.act(y) - d)[: X.dim]


def _invariant_update(belief: Belief, y, d, Qf, cfg: UpdateConfig):
    X = belief.state
    G = type(X)
    n = X.dim
    sign = -1.0 if belief.error_side == RIGHT else 1.0
    d = np.asarray(d, dtype=float)
    z, N = invariant_innovation(belief, np.asarray(y, dtype=float), d, np.asarray(Qf, dtype=float))
    Ht = anchor_jacobian(G, d, sign)

    def h(xi):
        return (G.exp(sign * xi).act(d) - d)[:n]

    def jac(xi):
        return G.exp(sign * xi).rot @ Ht @ G.right_jacobian(sign * xi)

    xi_hat, ((K0, H0), _), report = gauss_newton(belief.cov, z, N, h, jac, Ht, cfg)
    P = clean_covariance((np.eye(len(xi_hat)) - K0 @ H0) @ belief.cov)
    if belief.error_side == RIGHT:
        mean = G.exp(xi_hat) @ X
    else:
        mean = X @ G.exp(xi_hat)
    return Belief(mean, P, belief.error_side), report


def _qf_from_N(N: np.ndarray, n: int) -> np.ndarray:
    N = np.asarray(N, dtype=float)
    return N[:n, :n] if N.shape[0] > n else N


def iter_iekf_update(belief: Belief, y, d, Qf, config: UpdateConfig | None = None):
    """Iterated right-invariant update; covariance uses the first-step gain.

    ``Qf`` is the measurement covariance of the top block (or the lifted N).
    """
    cfg = config or UpdateConfig()
    if belief.error_side != RIGHT:
        raise ValueError("iter_iekf_update expects a right-invariant belief")
    out, report = _invariant_update(belief, y, d, _qf_from_N(Qf, belief.state.dim), cfg)
    if cfg.yaw_correction and belief.state.dim == 3:
        out = yaw_correction(out, report.xi_hat)
    return out, report


def iekf_update(belief: Belief, y, d, Qf, config: UpdateConfig | None = None):
    """Single-step right-invariant EKF update with the constant Jacobian."""
    cfg = config or UpdateConfig()
    if belief.error_side != RIGHT:
        raise ValueError("iekf_update expects a right-invariant belief")
    X = belief.state
    G = type(X)
    d = np.asarray(d, dtype=float)
    Qf = _qf_from_N(Qf, X.dim)
    z, N = invariant_innovation(belief, np.asarray(y, dtype=float), d, np.asarray(Qf, dtype=float))
    H = anchor_jacobian(G, d, -1.0)
    K, _, _ = _gain(belief.cov, H, N)
    xi_hat = K @ z
    P = clean_covariance((np.eye(len(xi_hat)) - K @ H) @ belief.cov)
    out = Belief(G.exp(xi_hat) @ X, P, RIGHT)
    if cfg.yaw_correction and X.dim == 3:
        out = yaw_correction(out, xi_hat)
    report = UpdateReport(1, float(np.linalg.norm(xi_hat)), [], z, STOP_MAX, xi_hat,
                          [np.zeros_like(xi_hat), xi_hat])
    return out, report


def left_iter_iekf_update(belief: Belief, y, d, Qf, config: UpdateConfig | None = None):
    """Iterated left-invariant update of the robocentric state (right application)."""
    cfg = config or UpdateConfig()
    if belief.error_side != LEFT:
        raise ValueError("left_iter_iekf_update expects a left-invariant belief")
    return _invariant_update(belief, y, d, _qf_from_N(Qf, belief.state.dim), cfg)


def yaw_correction(belief: Belief, xi_hat: np.ndarray) -> Belief:
    """Undo the yaw part of an update: Exp([0, 0, -xi_z, 0_6]) X."""
    kick = np.zeros(9)
    kick[2] = -xi_hat[2]
    return belief.with_(state=Se23State.exp(kick) @ belief.state)


# --------------------------------------------------------------------------
# product-group filters


def _product_apply(x, dx):
    """dx (+) x componentwise: left rotation increment, additive vectors."""
    if isinstance(x, ProductState):
        return ProductState(exp_so3(dx[:3]) @ x.rot, x.vel + dx[3:6], x.pos + dx[6:9])
    return Product2State(rot2(dx[0]) @ x.rot, x.vel + dx[1:3], x.pos + dx[3:5])


def _product_update(belief: Belief, ym, Qf, f, fjac, cfg: UpdateConfig, iterated: bool):
    if belief.error_side != PRODUCT:
        raise ValueError("expects a product-group belief")
    Qf = np.asarray(Qf, dtype=float)
    f0 = f(np.zeros(belief.cov.shape[0]))
    z = np.asarray(ym, dtype=float) - f0
    H0 = fjac(np.zeros(belief.cov.shape[0]))
    run_cfg = cfg if iterated else UpdateConfig(1, cfg.step_tol, cfg.loss_guard)
    dx, (_, (K, H)), report = gauss_newton(
        belief.cov, z, Qf, lambda dx: f(dx) - f0, fjac, H0, run_cfg, keep_best=iterated
    )
    P = clean_covariance((np.eye(len(dx)) - K @ H) @ belief.cov)
    return Belief(_product_apply(belief.state, dx), P, PRODUCT), report


def _velocity_model(x: ProductState):
    R, v = x.rot, x.vel

    def f(dx):
        return (exp_so3(dx[:3]) @ R).T @ (v + dx[3:6])

    def fjac(dx):
        Rt = (exp_so3(dx[:3]) @ R).T
        H = np.zeros((3, 9))
        H[:, 0:3] = Rt @ hat(v + dx[3:6]) @ right_jacobian_so3(-dx[:3])
        H[:, 3:6] = Rt
        return H

    return f, fjac


def so3_ekf_update(belief: Belief, m: ContactVelocityMeasurement, config: UpdateConfig | None = None):
    """SO(3)-EKF update on the base-frame velocity R^T v."""
    f, fjac = _velocity_model(belief.state)
    return _product_update(belief, m.v_base, m.Qf, f, fjac, config or UpdateConfig(), False)


def iter_so3_ekf_update(
    belief: Belief, m: ContactVelocityMeasurement, config: UpdateConfig | None = None
):
    """Iterated SO(3)-EKF; covariance uses the gain of the returned step."""
    f, fjac = _velocity_model(belief.state)
    return _product_update(belief, m.v_base, m.Qf, f, fjac, config or UpdateConfig(), True)


def _planar_landmark_model(x: Product2State, b: np.ndarray):
    R, p = x.rot, x.pos

    def f(dx):
        return (rot2(dx[0]) @ R).T @ (b - p - dx[3:5])

    def fjac(dx):
        Rt = (rot2(dx[0]) @ R).T
        H = np.zeros((2, 5))
        H[:, 0] = -Rt @ J2 @ (b - p - dx[3:5])
        H[:, 3:5] = -Rt
        return H

    return f, fjac


def planar_product_update(
    belief: Belief, b: np.ndarray, y_top: np.ndarray, Qf, config: UpdateConfig | None = None,
    iterated: bool = False,
):
    """SO(2) x R^4 (Iter)EKF update for a known-landmark measurement R^T (b - p)."""
    f, fjac = _planar_landmark_model(belief.state, np.asarray(b, dtype=float))
    return _product_update(belief, y_top, Qf, f, fjac, config or UpdateConfig(), iterated)


def velocity_measurement_parts(m: ContactVelocityMeasurement):
    """(y, d) for the base-velocity observation used by the invariant filters."""
    return np.concatenate([m.v_base, [-1.0, 0.0]]), VELOCITY_ANCHOR
