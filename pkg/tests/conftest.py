import math

import numpy as np
import pytest

from legged_iekf.liegroup import Se23State, exp_so3
from legged_iekf.state_models import VELOCITY_ANCHOR, Belief, sample_gaussian


def random_tangent(rng, n=9, max_angle=3.0, scale=2.0):
    """Tangent vector with a rotation part of norm below ``max_angle``."""
    k = 1 if n == 5 else 3
    w = rng.normal(size=k)
    w *= rng.uniform(0.0, max_angle) / max(np.linalg.norm(w), 1e-300)
    return np.concatenate([w, scale * rng.normal(size=n - k)])


def random_rotation(rng, max_angle=math.pi - 0.1):
    return exp_so3(random_tangent(rng, 3 + 6, max_angle)[:3])


def random_se23(rng, scale=2.0):
    return Se23State(random_rotation(rng), scale * rng.normal(size=3), scale * rng.normal(size=3))


def random_spd(rng, n, scale=1.0, floor=1e-3):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T / n + floor * np.eye(n))


def series_exp(M, terms=30):
    """Truncated matrix power series sum M^i / i!."""
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for i in range(1, terms):
        term = term @ M / i
        out = out + term
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def moderate_prior(rng, rot_std_max=0.5):
    """Random dense covariance whose rotation marginals have std at most ``rot_std_max``."""
    A = rng.normal(size=(9, 9))
    P = 0.05 * A @ A.T + 1e-3 * np.eye(9)
    s = min(1.0, rot_std_max / math.sqrt(P[:3, :3].diagonal().max()))
    S = np.diag([s] * 3 + [1.0] * 6)
    return S @ P @ S


def noise_free_case(rng):
    """Belief whose true error is drawn from its own covariance, plus the exact observation."""
    P = moderate_prior(rng)
    Xt = Se23State.exp(rng.normal(size=9))
    xi = sample_gaussian(P, rng)
    belief = Belief(Se23State.exp(-xi) @ Xt, P)
    return belief, Xt, Xt.inverse().act(VELOCITY_ANCHOR)
