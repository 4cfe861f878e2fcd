"""Constant-input synthetic Monte Carlo: truth, noisy sensors and per-step filter metrics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..diagnostics import gravity_angle, nees_from_terms, pairwise_sum
from ..liegroup import Se23State
from ..propagation import GRAVITY, integrate_mean
from ..state_models import (
    Belief,
    ContactVelocityMeasurement,
    ImuNoise,
    ImuSample,
    sample_gaussian,
)
from ..update import UpdateConfig
from .filters import FILTER_NAMES, ITERATED, make_runner, parse_filters

E3 = np.array([0.0, 0.0, 1.0])


def _default_P0() -> np.ndarray:
    return np.diag([(math.pi / 12) ** 2] * 3 + [0.1**2] * 3 + [0.1**2] * 3)


@dataclass
class SyntheticConfig:
    P0: np.ndarray = field(default_factory=_default_P0)
    Qa: np.ndarray = field(default_factory=lambda: 5e-3 * np.eye(3))
    Qg: np.ndarray = field(default_factory=lambda: np.diag([0.0, 0.0, 3e-2]))
    Qf: np.ndarray = field(default_factory=lambda: np.diag([1e-4, 1e-5, 1e-3]))
    aI: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 9.81]))
    wI: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, math.pi / 30]))
    m: int = 300
    dt: float = 0.05
    K: int = 100
    seed: int = 0
    max_iterations: int = 20
    step_tol: float = 1e-4
    loss_guard: bool = True
    yaw_correction: bool = False
    g: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    X0: Se23State = field(default_factory=Se23State.identity)

    def __post_init__(self):
        for name, shape in (("P0", (9, 9)), ("Qa", (3, 3)), ("Qg", (3, 3)), ("Qf", (3, 3)),
                            ("aI", (3,)), ("wI", (3,)), ("g", (3,))):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)
        if self.m < 1 or self.K < 1 or not self.dt > 0:
            raise ValueError("m and K must be >= 1 and dt > 0")

    @property
    def noise(self) -> ImuNoise:
        return ImuNoise(self.Qg, self.Qa)

    @property
    def update_config(self) -> UpdateConfig:
        return UpdateConfig(self.max_iterations, self.step_tol, self.loss_guard, self.yaw_correction)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("X0")
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


@dataclass
class SyntheticRun:
    """One realization's streams: truth after each step, filter inputs and measurements."""

    truth: list[Se23State]
    imu: list[ImuSample]
    measurements: list[ContactVelocityMeasurement]
    xi0: np.ndarray


def generate_truth_and_inputs(cfg: SyntheticConfig, rng: np.random.Generator, xi0: np.ndarray | None = None):
    """Noise-free constant-input truth; the filters see noisy IMU and velocity samples.

    ``truth[i]`` is the state at t = (i + 1) dt, after the i-th prediction.
    """
    if xi0 is None:
        xi0 = sample_gaussian(cfg.P0, rng)
    wg = rng.multivariate_normal(np.zeros(3), cfg.Qg, size=cfg.m, method="eigh")
    wa = rng.multivariate_normal(np.zeros(3), cfg.Qa, size=cfg.m, method="eigh")
    wf = rng.multivariate_normal(np.zeros(3), cfg.Qf, size=cfg.m, method="eigh")
    R, v, p = cfg.X0.rot, cfg.X0.vel, cfg.X0.pos
    truth, imu, meas = [], [], []
    for i in range(cfg.m):
        imu.append(ImuSample(i * cfg.dt, cfg.wI + wg[i], cfg.aI + wa[i]))
        R, v, p = integrate_mean(R, v, p, cfg.wI, cfg.aI, cfg.dt, cfg.g)
        X = Se23State(R, v, p)
        truth.append(X)
        meas.append(ContactVelocityMeasurement((i + 1) * cfg.dt, R.T @ v + wf[i], cfg.Qf))
    return SyntheticRun(truth, imu, meas, xi0)


@dataclass
class RealizationResult:
    vel_err: dict[str, np.ndarray]
    grav_err: dict[str, np.ndarray]
    nees: dict[str, np.ndarray]
    iterations: dict[str, np.ndarray]


def run_realization(cfg: SyntheticConfig, filters: list[str], k: int) -> RealizationResult:
    rng = np.random.default_rng(cfg.seed + k)
    xi0 = sample_gaussian(cfg.P0, rng)
    run = generate_truth_and_inputs(cfg, rng, xi0)
    X0 = cfg.X0
    invariant = Belief(Se23State.exp(-xi0) @ X0, cfg.P0.copy())
    out = RealizationResult({}, {}, {}, {})
    ucfg = cfg.update_config
    for name in filters:
        f = make_runner(name, cfg.noise, ucfg, cfg.g)
        f.initialize(invariant, xi0, X0, cfg.P0)
        ve = np.empty(cfg.m)
        ge = np.empty(cfg.m)
        ne = np.empty(cfg.m)
        it = np.zeros(cfg.m, dtype=int)
        for i in range(cfg.m):
            f.predict(run.imu[i], cfg.dt)
            f.update(run.measurements[i])
            T = run.truth[i]
            R, v, _ = f.world_state()
            ve[i] = np.linalg.norm(R.T @ v - T.rot.T @ T.vel)
            ge[i] = gravity_angle(R.T @ E3, T.rot.T @ E3)
            n = f.nees(T)
            ne[i] = np.nan if n is None else n
            it[i] = f.last_iterations
        out.vel_err[name], out.grav_err[name] = ve, ge
        out.nees[name], out.iterations[name] = ne, it
    return out


@dataclass
class MonteCarloResult:
    filters: list[str]
    t: np.ndarray
    mean_vel_err: dict[str, np.ndarray]
    mean_grav_err: dict[str, np.ndarray]
    mean_nees: dict[str, np.ndarray]
    nees_excluded: dict[str, int]
    iteration_histogram: dict[str, dict[int, int]]
    mae_first_window: dict[str, dict[str, float]]
    per_realization_mae: dict[str, dict[str, np.ndarray]]
    window_s: float = 5.0

    def iteration_mode(self, name: str) -> int:
        h = self.iteration_histogram[name]
        return max(sorted(h), key=lambda k: h[k])


def _mean_over(arrs: list[np.ndarray]) -> np.ndarray:
    stack = np.vstack(arrs)
    return np.array([pairwise_sum(stack[:, i]) / stack.shape[0] for i in range(stack.shape[1])])


def run_synthetic_monte_carlo(
    cfg: SyntheticConfig, filters=FILTER_NAMES, n_jobs: int = 1, window_s: float = 5.0
) -> MonteCarloResult:
    """Run K realizations; every filter of a realization consumes the same streams."""
    names = parse_filters(filters)
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(run_realization, [cfg] * cfg.K, [names] * cfg.K, range(cfg.K)))
    else:
        results = [run_realization(cfg, names, k) for k in range(cfg.K)]
    nwin = min(cfg.m, int(round(window_s / cfg.dt)))
    t = (np.arange(cfg.m) + 1) * cfg.dt
    mv, mg, mn, exc, hist, mae, per = {}, {}, {}, {}, {}, {}, {}
    for n in names:
        mv[n] = _mean_over([r.vel_err[n] for r in results])
        mg[n] = _mean_over([r.grav_err[n] for r in results])
        nr = nees_from_terms(np.vstack([r.nees[n] for r in results]))
        mn[n], exc[n] = nr.mean, nr.excluded
        if n in ITERATED:
            its = np.concatenate([r.iterations[n] for r in results])
            vals, counts = np.unique(its, return_counts=True)
            hist[n] = {int(a): int(b) for a, b in zip(vals, counts)}
        mae[n] = {"vel": float(np.mean(mv[n][:nwin])), "grav": float(np.mean(mg[n][:nwin]))}
        per[n] = {
            "vel": np.array([np.mean(r.vel_err[n][:nwin]) for r in results]),
            "grav": np.array([np.mean(r.grav_err[n][:nwin]) for r in results]),
        }
    return MonteCarloResult(names, t, mv, mg, mn, exc, hist, mae, per, window_s)


# --------------------------------------------------------------------------
# convergence-time report


@dataclass
class ConvergenceReport:
    filters: list[str]
    steps_to_threshold: dict[str, np.ndarray]  # per run; -1 when never reached
    vel_threshold: float
    grav_threshold: float

    def not_slower(self, a: str, b: str) -> np.ndarray:
        """Per-run flag: filter ``a`` reached both thresholds no later than ``b``."""
        sa, sb = self.steps_to_threshold[a], self.steps_to_threshold[b]
        big = np.iinfo(np.int64).max
        sa = np.where(sa < 0, big, sa)
        sb = np.where(sb < 0, big, sb)
        return sa <= sb


def large_error_config(**overrides) -> SyntheticConfig:
    P0 = np.diag([(math.pi / 4) ** 2] * 3 + [1.0] * 3 + [0.1**2] * 3)
    base = dict(P0=P0, K=20, m=300)
    base.update(overrides)
    return SyntheticConfig(**base)


def _first_settled(err: np.ndarray, thr: float) -> int:
    """First step after which the error stays below ``thr`` for the rest of the run."""
    above = np.nonzero(err >= thr)[0]
    if above.size == 0:
        return 0
    i = int(above[-1]) + 1
    return i if i < err.size else -1


def convergence_time_report(
    cfg: SyntheticConfig | None = None,
    filters=("iter_iekf", "iekf"),
    vel_threshold: float = 0.05,
    grav_threshold: float = 0.015,
) -> ConvergenceReport:
    """Steps each filter needs before both observable errors settle under the thresholds."""
    cfg = cfg or large_error_config()
    names = parse_filters(filters)
    steps = {n: np.empty(cfg.K, dtype=np.int64) for n in names}
    for k in range(cfg.K):
        r = run_realization(cfg, names, k)
        for n in names:
            sv = _first_settled(r.vel_err[n], vel_threshold)
            sg = _first_settled(r.grav_err[n], grav_threshold)
            steps[n][k] = -1 if min(sv, sg) < 0 else max(sv, sg)
    return ConvergenceReport(names, steps, vel_threshold, grav_threshold)
