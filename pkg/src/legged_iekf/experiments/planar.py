"""Planar SE_2(2) landmark demo: two consecutive updates and their observed sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..liegroup.se22 import J2, Product2State, Se22State
from ..state_models import PRODUCT, RIGHT, Belief, symmetrize
from ..update import UpdateConfig, iekf_update, iter_iekf_update, planar_product_update

PLANAR_ITER_IEKF = "iter_iekf"
PLANAR_IEKF = "iekf"
SO2_EKF = "so2_ekf"
ITER_SO2_EKF = "iter_so2_ekf"
PLANAR_FILTERS = (PLANAR_ITER_IEKF, PLANAR_IEKF, SO2_EKF, ITER_SO2_EKF)

# Tiny noise used by the filters for "almost noise-free" measurements.  Much
# smaller values make S ill-conditioned once the first update collapses P.
NEAR_NOISE_FREE = 1e-10


def landmark_anchor(b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return np.array([b[0], b[1], 0.0, 1.0])


def velocity_anchor_2d() -> np.ndarray:
    return np.array([0.0, 0.0, 1.0, 0.0])


@dataclass
class PlanarScenario:
    landmarks: list[np.ndarray]
    true_state: Se22State
    prior: Belief
    measurement_noise: float = NEAR_NOISE_FREE
    name: str = "planar"
    config: UpdateConfig = field(default_factory=UpdateConfig)

    def __post_init__(self):
        if len(self.landmarks) < 1:
            raise ValueError("a planar scenario needs at least one landmark")
        self.landmarks = [np.asarray(b, dtype=float).reshape(2) for b in self.landmarks]
        if self.prior.error_side != RIGHT or self.prior.cov.shape != (5, 5):
            raise ValueError("prior must be a right-invariant belief over SE_2(2)")
        if not self.measurement_noise > 0:
            raise ValueError("measurement_noise must be positive")

    def measurements(self) -> list[np.ndarray]:
        """Noise-free y_k = X^{-1} d_k."""
        return [self.true_state.inverse().act(landmark_anchor(b)) for b in self.landmarks]


def make_scenario(
    true_state: Se22State,
    error: np.ndarray,
    P: np.ndarray,
    landmarks,
    measurement_noise: float = NEAR_NOISE_FREE,
    name: str = "planar",
    config: UpdateConfig | None = None,
) -> PlanarScenario:
    """Prior mean X_bar = Exp(-e) X so that the true error (X X_bar^{-1})^vee equals e."""
    mean = Se22State.exp(-np.asarray(error, dtype=float)) @ true_state
    prior = Belief(mean, np.asarray(P, dtype=float), RIGHT)
    return PlanarScenario(list(landmarks), true_state, prior, measurement_noise, name, config or UpdateConfig())


def fig3_scenario() -> PlanarScenario:
    """Large rotation and position error, no velocity uncertainty, two landmarks."""
    X = Se22State(np.eye(2), np.zeros(2), np.array([1.0, 0.5]))
    e = np.array([0.6, 0.0, 0.0, 0.5, -0.4])
    P = np.diag([e[0] ** 2, 0.0, 0.0, e[3] ** 2, e[4] ** 2])
    return make_scenario(X, e, P, [np.array([3.0, 0.0]), np.array([0.0, 3.0])], name="fig3")


def rotation_dominant_scenario() -> PlanarScenario:
    """P_R: the error lies along rotation and only rotation is uncertain.

    The other variances are zero rather than merely small: at the level of the
    measurement noise they would let the first iterate absorb part of the
    transverse residual into position and leave the rotation coset.
    """
    X = Se22State(np.eye(2), np.zeros(2), np.array([1.0, 0.5]))
    e = np.array([0.6, 0.0, 0.0, 0.0, 0.0])
    P = np.diag([0.6**2, 0.0, 0.0, 0.0, 0.0])
    return make_scenario(X, e, P, [np.array([3.0, 0.0])], name="P_R")


def position_dominant_scenario() -> PlanarScenario:
    """P_p: rotation and velocity are certain, the error lies along position."""
    X = Se22State(np.eye(2), np.zeros(2), np.array([1.0, 0.5]))
    e = np.array([0.0, 0.0, 0.0, 0.5, -0.4])
    P = np.diag([0.0, 0.0, 0.0, 0.5**2, 0.4**2])
    return make_scenario(X, e, P, [np.array([3.0, 0.0])], name="P_p")


def product_prior(prior: Belief) -> Belief:
    """SO(2) x R^4 belief with the same mean and the first-order mapped covariance."""
    X = prior.state
    J = np.eye(5)
    J[1:3, 0] = J2 @ X.vel
    J[3:5, 0] = J2 @ X.pos
    return Belief(Product2State(X.rot, X.vel, X.pos), symmetrize(J @ prior.cov @ J.T), PRODUCT)


def _as_se22(x) -> Se22State:
    return x if isinstance(x, Se22State) else Se22State(x.rot, x.vel, x.pos)


def membership_residual(x, d: np.ndarray, y: np.ndarray) -> float:
    """|X^{-1} d - y| for a state in either parametrization."""
    return float(np.linalg.norm(_as_se22(x).inverse().act(d) - y))


def state_distance(x, X_true: Se22State) -> float:
    return float(np.linalg.norm((X_true @ _as_se22(x).inverse()).log()))


@dataclass
class PlanarUpdateStep:
    landmark: np.ndarray
    residual: float
    iterations: int
    stop_reason: str
    path: list[Se22State]  # iterate states, starting at the prior mean


@dataclass
class PlanarFilterResult:
    name: str
    steps: list[PlanarUpdateStep]
    final_state: Se22State
    final_cov: np.ndarray
    distance_to_truth: float

    @property
    def residuals(self) -> list[float]:
        """Residual of the final state against every measurement."""
        return [s.residual for s in self.steps]


def _invariant_step(belief, d, y, noise, cfg, iterated):
    Qf = noise * np.eye(2)
    if iterated:
        out, rep = iter_iekf_update(belief, y, d, Qf, cfg)
    else:
        out, rep = iekf_update(belief, y, d, Qf, cfg)
    path = [Se22State.exp(xi) @ belief.state for xi in rep.iterates]
    return out, rep, path


def _product_step(belief, b, y, noise, cfg, iterated):
    out, rep = planar_product_update(belief, b, y[:2], noise * np.eye(2), cfg, iterated)
    x = belief.state
    path = [
        Se22State(Se22State.exp(np.array([dx[0], 0, 0, 0, 0])).rot @ x.rot, x.vel + dx[1:3], x.pos + dx[3:5])
        for dx in rep.iterates
    ]
    return out, rep, path


def run_planar_filter(scenario: PlanarScenario, name: str) -> PlanarFilterResult:
    if name not in PLANAR_FILTERS:
        raise ValueError(f"unknown planar filter {name!r}; choose from {', '.join(PLANAR_FILTERS)}")
    invariant = name in (PLANAR_ITER_IEKF, PLANAR_IEKF)
    iterated = name in (PLANAR_ITER_IEKF, ITER_SO2_EKF)
    belief = scenario.prior if invariant else product_prior(scenario.prior)
    ys = scenario.measurements()
    raw = []
    for b, y in zip(scenario.landmarks, ys):
        d = landmark_anchor(b)
        if invariant:
            belief, rep, path = _invariant_step(belief, d, y, scenario.measurement_noise, scenario.config, iterated)
        else:
            belief, rep, path = _product_step(belief, b, y, scenario.measurement_noise, scenario.config, iterated)
        raw.append((b, d, y, rep, path))
    final = _as_se22(belief.state)
    steps = [
        PlanarUpdateStep(b, membership_residual(final, d, y), rep.iterations, rep.stop_reason, path)
        for b, d, y, rep, path in raw
    ]
    return PlanarFilterResult(name, steps, final, belief.cov, state_distance(final, scenario.true_state))


def run_planar_demo(scenario: PlanarScenario, filters=PLANAR_FILTERS) -> dict[str, PlanarFilterResult]:
    """Apply the consecutive landmark updates with each filter."""
    return {n: run_planar_filter(scenario, n) for n in filters}


def observed_set_samples(scenario: PlanarScenario, k: int, n: int = 181) -> np.ndarray:
    """Points of the observed circle for landmark k: positions p with |R^T (b - p)| = |y_top|."""
    b = scenario.landmarks[k]
    r = float(np.linalg.norm(scenario.measurements()[k][:2]))
    t = np.linspace(0.0, 2.0 * math.pi, n)
    return np.column_stack([b[0] + r * np.cos(t), b[1] + r * np.sin(t)])


# --------------------------------------------------------------------------
# base-velocity case with an unobservable rotation-position block


@dataclass
class VelocityCaseResult:
    index: int
    iterations: int
    stop_reason: str
    base_velocity_error: float
    xi_hat: np.ndarray


def velocity_case(P_diag, i: int = 2, config: UpdateConfig | None = None,
                  noise: float = NEAR_NOISE_FREE) -> VelocityCaseResult:
    """IterIEKF update with d = [0, 0, 1, 0] from X_bar_i = {i pi/3, i+1, i+1, 0, i}.

    The true state is {pi/3, 1, 1, 4, 2}; the result reports how well the
    updated base-frame velocity R^T v matches the truth.
    """
    cfg = config or UpdateConfig()
    Xt = Se22State(Se22State.exp(np.array([math.pi / 3, 0, 0, 0, 0])).rot, np.array([1.0, 1.0]),
                   np.array([4.0, 2.0]))
    Xb = Se22State(Se22State.exp(np.array([i * math.pi / 3, 0, 0, 0, 0])).rot, np.array([i + 1.0, i + 1.0]),
                   np.array([0.0, float(i)]))
    d = velocity_anchor_2d()
    y = Xt.inverse().act(d)
    out, rep = iter_iekf_update(Belief(Xb, np.diag(np.asarray(P_diag, dtype=float))), y, d, noise * np.eye(2), cfg)
    X = out.state
    err = float(np.linalg.norm(X.rot.T @ X.vel - Xt.rot.T @ Xt.vel))
    return VelocityCaseResult(i, rep.iterations, rep.stop_reason, err, rep.xi_hat)


__all__ = [
    "PLANAR_FILTERS",
    "PlanarFilterResult",
    "PlanarScenario",
    "VelocityCaseResult",
    "fig3_scenario",
    "landmark_anchor",
    "make_scenario",
    "membership_residual",
    "observed_set_samples",
    "position_dominant_scenario",
    "product_prior",
    "rotation_dominant_scenario",
    "run_planar_demo",
    "run_planar_filter",
    "velocity_case",
]
