"""Uniform runners over the five filters so the experiment drivers can treat them alike."""

from __future__ import annotations

import numpy as np

from ..diagnostics import estimation_error, nees_term
from ..liegroup import Se23State
from ..propagation import GRAVITY, predict_product, predict_robocentric, predict_se23
from ..state_models import (
    Belief,
    ContactVelocityMeasurement,
    ImuNoise,
    ImuSample,
    left_belief_from_invariant,
    product_belief_from_invariant,
)
from ..update import (
    UpdateConfig,
    iekf_update,
    iter_iekf_update,
    iter_so3_ekf_update,
    left_iter_iekf_update,
    so3_ekf_update,
    velocity_measurement_parts,
    yaw_correction,
)

ITER_IEKF = "iter_iekf"
IEKF = "iekf"
SO3_EKF = "so3_ekf"
ITER_SO3_EKF = "iter_so3_ekf"
LEFT_ITER_IEKF = "left_iter_iekf"
FILTER_NAMES = (ITER_IEKF, IEKF, SO3_EKF, ITER_SO3_EKF, LEFT_ITER_IEKF)
ITERATED = (ITER_IEKF, ITER_SO3_EKF, LEFT_ITER_IEKF)


class FilterRunner:
    """A belief plus the predict/update pair of one filter family."""

    name = ""

    def __init__(self, noise: ImuNoise, config: UpdateConfig | None = None, g: np.ndarray = GRAVITY):
        self.noise = noise
        self.config = config or UpdateConfig()
        self.g = np.asarray(g, dtype=float)
        self.belief: Belief | None = None
        self.last_iterations = 0

    def initialize(self, invariant: Belief, xi0: np.ndarray, true_state: Se23State, P0: np.ndarray):
        """Start from the right-invariant belief (-xi0) (+) X0 shared by all filters."""
        self.belief = invariant

    def predict(self, u: ImuSample, dt: float) -> None:
        raise NotImplementedError

    def update(self, m: ContactVelocityMeasurement):
        raise NotImplementedError

    def world_state(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.belief.state
        return s.rot, s.vel, s.pos

    def error(self, true_state: Se23State) -> np.ndarray:
        return estimation_error(true_state, self.belief)

    def nees(self, true_state: Se23State) -> float | None:
        return nees_term(self.error(true_state), self.belief.cov)


class IterIekfRunner(FilterRunner):
    name = ITER_IEKF

    def predict(self, u, dt):
        self.belief = predict_se23(self.belief, u, self.noise, dt, self.g)

    def update(self, m):
        y, d = velocity_measurement_parts(m)
        self.belief, rep = iter_iekf_update(self.belief, y, d, m.Qf, self.config)
        self.last_iterations = rep.iterations
        return rep


class IekfRunner(IterIekfRunner):
    name = IEKF

    def update(self, m):
        y, d = velocity_measurement_parts(m)
        self.belief, rep = iekf_update(self.belief, y, d, m.Qf, self.config)
        self.last_iterations = 1
        return rep


class So3EkfRunner(FilterRunner):
    name = SO3_EKF

    def initialize(self, invariant, xi0, true_state, P0):
        self.belief = product_belief_from_invariant(xi0, invariant.state, true_state, P0)

    def predict(self, u, dt):
        self.belief = predict_product(self.belief, u, self.noise, dt, self.g)

    def update(self, m):
        self.belief, rep = so3_ekf_update(self.belief, m, self.config)
        self.last_iterations = 1
        return rep


class IterSo3EkfRunner(So3EkfRunner):
    name = ITER_SO3_EKF

    def update(self, m):
        self.belief, rep = iter_so3_ekf_update(self.belief, m, self.config)
        self.last_iterations = rep.iterations
        return rep


class LeftIterIekfRunner(FilterRunner):
    name = LEFT_ITER_IEKF

    def initialize(self, invariant, xi0, true_state, P0):
        self.belief = left_belief_from_invariant(invariant)

    def predict(self, u, dt):
        self.belief = predict_robocentric(self.belief, u, self.noise, dt, self.g)

    def update(self, m):
        y, d = velocity_measurement_parts(m)
        self.belief, rep = left_iter_iekf_update(self.belief, y, d, m.Qf, self.config)
        if self.config.yaw_correction:
            # The yaw fix acts on the world-frame state X = chi^{-1}.
            X = Belief(self.belief.state.inverse(), self.belief.cov)
            kick = -rep.xi_hat
            self.belief = self.belief.with_(state=yaw_correction(X, kick).state.inverse())
        self.last_iterations = rep.iterations
        return rep

    def world_state(self):
        X = self.belief.state.inverse()
        return X.rot, X.vel, X.pos


RUNNERS = {
    r.name: r for r in (IterIekfRunner, IekfRunner, So3EkfRunner, IterSo3EkfRunner, LeftIterIekfRunner)
}


def make_runner(name: str, noise: ImuNoise, config: UpdateConfig | None = None, g=GRAVITY) -> FilterRunner:
    try:
        cls = RUNNERS[name]
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; choose from {', '.join(FILTER_NAMES)}") from None
    return cls(noise, config, g)


def parse_filters(spec) -> list[str]:
    """Accept a comma-separated string or an iterable of names; keep canonical order."""
    names = [s.strip() for s in spec.split(",")] if isinstance(spec, str) else list(spec)
    names = [n for n in names if n]
    for n in names:
        if n not in RUNNERS:
            raise ValueError(f"unknown filter {n!r}; choose from {', '.join(FILTER_NAMES)}")
    return [n for n in FILTER_NAMES if n in names]


__all__ = [
    "FILTER_NAMES",
    "FilterRunner",
    "ITERATED",
    "RUNNERS",
    "make_runner",
    "parse_filters",
]
