"""Replay filters over logged IMU, foot-velocity and reference streams."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import savgol_filter
from scipy.spatial.transform import Rotation, Slerp

from ..diagnostics import gravity_angle
from ..liegroup import Se23State
from ..logio import ReferenceTrajectory
from ..propagation import GRAVITY, integrate_mean
from ..state_models import (
    REAL_GRF_THRESHOLD,
    Belief,
    ContactVelocityMeasurement,
    FootVelocitySample,
    ImuExtrinsics,
    ImuNoise,
    ImuSample,
    aggregate_contact_velocity,
    contact_from_grf,
    sample_gaussian,
    smooth_measurements,
    to_imu_frame,
)
from ..update import UpdateConfig
from .filters import make_runner, parse_filters
from .synthetic import SyntheticConfig, generate_truth_and_inputs

E3 = np.array([0.0, 0.0, 1.0])
MAX_GAP_FACTOR = 10.0


class DataQualityError(ValueError):
    """Streams violate timing assumptions (gaps, ordering, reference coverage)."""


# --------------------------------------------------------------------------
# reference processing


def derive_reference_velocity(pos: np.ndarray, dt: float, window: int = 25, order: int = 5) -> np.ndarray:
    """Savitzky-Golay first derivative of a uniformly sampled position series."""
    pos = np.asarray(pos, dtype=float)
    if window % 2 != 1 or window < 1:
        raise ValueError("window must be a positive odd integer")
    if order >= window:
        raise ValueError("order must be smaller than window")
    if pos.shape[0] < window:
        raise ValueError(f"series of length {pos.shape[0]} is shorter than the window {window}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    return savgol_filter(pos, window, order, deriv=1, delta=dt, axis=0, mode="interp")


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    return Rotation.from_quat(np.asarray(q, dtype=float), scalar_first=True).as_matrix()


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    q = Rotation.from_matrix(R).as_quat(scalar_first=True)
    return q if q[0] >= 0 else -q


def _uniform_dt(t: np.ndarray, what: str) -> float:
    dts = np.diff(t)
    if dts.size == 0 or np.any(dts <= 0):
        raise DataQualityError(f"{what} timestamps must be strictly increasing")
    dt = float(np.median(dts))
    if np.max(np.abs(dts - dt)) > 1e-6 * max(1.0, dt) + 1e-9:
        raise DataQualityError(f"{what} must be uniformly sampled")
    return dt


@dataclass
class InterpolatedReference:
    """Reference pose interpolated at given times: slerp for R, linear for p and v."""

    t: np.ndarray
    rot: np.ndarray  # (n, 3, 3)
    vel: np.ndarray  # (n, 3) world frame
    pos: np.ndarray

    def state(self, i: int) -> Se23State:
        return Se23State(self.rot[i], self.vel[i], self.pos[i])


def interpolate_reference(ref: ReferenceTrajectory, t: np.ndarray, window: int = 25, order: int = 5):
    t = np.asarray(t, dtype=float)
    if ref.t.size < 2 or t[0] < ref.t[0] - 1e-9 or t[-1] > ref.t[-1] + 1e-9:
        raise DataQualityError(
            f"reference covers [{ref.t[0] if ref.t.size else math.nan}, "
            f"{ref.t[-1] if ref.t.size else math.nan}] but the estimate needs [{t[0]}, {t[-1]}]"
        )
    dt = _uniform_dt(ref.t, "reference")
    vel_ref = derive_reference_velocity(ref.pos, dt, window, order)
    tq = np.clip(t, ref.t[0], ref.t[-1])
    rots = Slerp(ref.t, Rotation.from_quat(ref.quat, scalar_first=True))(tq).as_matrix()
    pos = np.column_stack([np.interp(tq, ref.t, ref.pos[:, k]) for k in range(3)])
    vel = np.column_stack([np.interp(tq, ref.t, vel_ref[:, k]) for k in range(3)])
    return InterpolatedReference(t, rots, vel, pos)


# --------------------------------------------------------------------------
# configuration and log container


def _default_replay_P0() -> np.ndarray:
    return np.diag([(math.pi / 12) ** 2] * 3 + [0.1**2] * 3 + [0.1**2] * 3)


@dataclass
class ReplayConfig:
    Qf: np.ndarray = field(default_factory=lambda: np.diag([1e-4, 1e-5, 1e-3]))
    Qg: np.ndarray = field(default_factory=lambda: np.diag([0.0, 0.0, 3e-2]))
    Qa: np.ndarray = field(default_factory=lambda: 5e-3 * np.eye(3))
    P0: np.ndarray = field(default_factory=_default_replay_P0)
    seed: int = 0
    max_iterations: int = 4
    step_tol: float = 1e-4
    loss_guard: bool = True
    yaw_correction: bool = False
    grf_threshold: float = REAL_GRF_THRESHOLD
    pre_negated: bool = False
    smoothing: bool = False
    R_IB: np.ndarray = field(default_factory=lambda: np.eye(3))
    r_BI: np.ndarray = field(default_factory=lambda: np.zeros(3))
    window_s: float = 5.0
    savgol_window: int = 25
    savgol_order: int = 5
    g: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        for name, shape in (("Qf", (3, 3)), ("Qg", (3, 3)), ("Qa", (3, 3)), ("P0", (9, 9)),
                            ("R_IB", (3, 3)), ("r_BI", (3,)), ("g", (3,))):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)
        if not self.window_s > 0:
            raise ValueError("window_s must be positive")

    @property
    def noise(self) -> ImuNoise:
        return ImuNoise(self.Qg, self.Qa)

    @property
    def update_config(self) -> UpdateConfig:
        return UpdateConfig(self.max_iterations, self.step_tol, self.loss_guard, self.yaw_correction)

    @property
    def extrinsics(self) -> ImuExtrinsics:
        return ImuExtrinsics(self.R_IB, self.r_BI)

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


@dataclass
class ReplayLog:
    imu: list[ImuSample]
    feet: list[FootVelocitySample]
    reference: ReferenceTrajectory


def build_measurements(feet: list[FootVelocitySample], cfg: ReplayConfig) -> list[ContactVelocityMeasurement]:
    """Group foot samples by timestamp and turn each stance set into one base-velocity measurement."""
    groups: dict[float, list[FootVelocitySample]] = {}
    for f in feet:
        groups.setdefault(float(f.t), []).append(f)
    out: list[ContactVelocityMeasurement | None] = []
    for t in sorted(groups):
        fs = [
            FootVelocitySample(f.t, f.foot_id, f.v_foot_base, contact_from_grf(f.grf_z, f.in_contact, cfg.grf_threshold),
                               f.grf_z)
            for f in groups[t]
        ]
        m = aggregate_contact_velocity(fs, cfg.Qf, pre_negated=cfg.pre_negated)
        out.append(None if m is None else to_imu_frame(m, cfg.extrinsics))
    if cfg.smoothing:
        out = smooth_measurements(out)
    return [m for m in out if m is not None]


# --------------------------------------------------------------------------
# replay loop


@dataclass
class RunResult:
    filter: str
    t: np.ndarray
    rot: np.ndarray  # (n, 3, 3) world-frame estimates
    vel: np.ndarray
    pos: np.ndarray
    iterations: np.ndarray  # 0 on predict-only steps
    nees: np.ndarray  # NaN where the covariance is singular
    vel_err: np.ndarray  # |R^T v - R_ref^T v_ref|
    grav_err: np.ndarray  # angle between R^T e3 and R_ref^T e3
    updated: np.ndarray  # bool per step
    n_updates: int = 0

    def window_mask(self, window_s: float) -> np.ndarray:
        """Samples in [t_first_update, t_first_update + window_s]; from t0 without updates."""
        idx = np.nonzero(self.updated)[0]
        t0 = self.t[idx[0]] if idx.size else self.t[0]
        return (self.t >= t0) & (self.t <= t0 + window_s + 1e-9)

    def metrics(self, window_s: float) -> list[tuple[str, str, float, float]]:
        mask = self.window_mask(window_s)
        ve, ge = self.vel_err[mask], self.grav_err[mask]
        return [
            (self.filter, "vel_MAE", float(np.mean(ve)), window_s),
            (self.filter, "vel_RMSE", float(np.sqrt(np.mean(ve * ve))), window_s),
            (self.filter, "grav_MAE", float(np.mean(ge)), window_s),
            (self.filter, "grav_RMSE", float(np.sqrt(np.mean(ge * ge))), window_s),
        ]


def check_imu_stream(imu: list[ImuSample]) -> float:
    """Nominal IMU period; raises on disordered samples or gaps larger than 10 periods."""
    if len(imu) < 2:
        raise DataQualityError("IMU stream needs at least two samples")
    t = np.array([u.t for u in imu])
    dts = np.diff(t)
    if np.any(dts <= 0):
        i = int(np.nonzero(dts <= 0)[0][0])
        raise DataQualityError(f"IMU timestamps not increasing at sample {i + 1} (t = {t[i + 1]})")
    dt = float(np.median(dts))
    if np.any(dts > MAX_GAP_FACTOR * dt):
        i = int(np.nonzero(dts > MAX_GAP_FACTOR * dt)[0][0])
        raise DataQualityError(f"IMU gap of {dts[i]} s after t = {t[i]} exceeds {MAX_GAP_FACTOR:g} x dt")
    return dt


def _match(meas_t: np.ndarray, t: float, half: float) -> int:
    """Index of the measurement nearest to t within half a step, or -1."""
    if meas_t.size == 0:
        return -1
    j = int(np.searchsorted(meas_t, t))
    best, bd = -1, half
    for k in (j - 1, j):
        if 0 <= k < meas_t.size and abs(meas_t[k] - t) <= bd:
            best, bd = k, abs(meas_t[k] - t)
    return best


def initial_error(cfg: ReplayConfig) -> np.ndarray:
    """xi0 drawn from N(0, P0) with the first draw of the seeded stream."""
    return sample_gaussian(cfg.P0, np.random.default_rng(cfg.seed))


def run_replay(log: ReplayLog, filters, cfg: ReplayConfig, xi0: np.ndarray | None = None) -> dict[str, RunResult]:
    """Predict with sample i-1 over [t_{i-1}, t_i]; update when a measurement lies within dt/2 of t_i."""
    names = parse_filters(filters)
    check_imu_stream(log.imu)
    t = np.array([u.t for u in log.imu])
    ref = interpolate_reference(log.reference, t, cfg.savgol_window, cfg.savgol_order)
    meas = build_measurements(log.feet, cfg)
    meas_t = np.array([m.t for m in meas])
    if meas_t.size > 1 and np.any(np.diff(meas_t) <= 0):
        raise DataQualityError("measurement timestamps must be strictly increasing")
    X0 = ref.state(0)
    if xi0 is None:
        xi0 = initial_error(cfg)
    invariant = Belief(Se23State.exp(-xi0) @ X0, cfg.P0.copy())
    n = t.size
    out = {}
    for name in names:
        f = make_runner(name, cfg.noise, cfg.update_config, cfg.g)
        f.initialize(invariant, xi0, X0, cfg.P0)
        rot = np.empty((n, 3, 3))
        vel = np.empty((n, 3))
        pos = np.empty((n, 3))
        iters = np.zeros(n, dtype=int)
        nees = np.full(n, np.nan)
        updated = np.zeros(n, dtype=bool)
        for i in range(n):
            if i > 0:
                dt = t[i] - t[i - 1]
                f.predict(log.imu[i - 1], dt)
                j = _match(meas_t, t[i], 0.5 * dt)
                if j >= 0:
                    f.update(meas[j])
                    iters[i] = f.last_iterations
                    updated[i] = True
            R, v, p = f.world_state()
            rot[i], vel[i], pos[i] = R, v, p
            e = f.nees(ref.state(i))
            if e is not None:
                nees[i] = e
        vb = np.einsum("nji,nj->ni", rot, vel)
        vb_ref = np.einsum("nji,nj->ni", ref.rot, ref.vel)
        ve = np.linalg.norm(vb - vb_ref, axis=1)
        ge = np.array([gravity_angle(rot[i].T @ E3, ref.rot[i].T @ E3) for i in range(n)])
        out[name] = RunResult(name, t, rot, vel, pos, iters, nees, ve, ge, updated, int(updated.sum()))
    return out


def replay_metrics(results: dict[str, RunResult], window_s: float) -> list[tuple[str, str, float, float]]:
    rows = []
    for r in results.values():
        rows.extend(r.metrics(window_s))
    return rows


# --------------------------------------------------------------------------
# synthetic log generation


def synthetic_log(cfg: SyntheticConfig, k: int = 0) -> tuple[ReplayLog, np.ndarray]:
    """Log of one synthetic realization; returns it with the realization's xi0.

    IMU rows are written at t_i = i dt for i = 0..m (the last row only closes
    the final interval).  Foot velocities are the negated noisy base velocity
    of a single stance foot at t_i, i >= 1.
    """
    rng = np.random.default_rng(cfg.seed + k)
    xi0 = sample_gaussian(cfg.P0, rng)
    run = generate_truth_and_inputs(cfg, rng, xi0)
    imu = list(run.imu) + [ImuSample(cfg.m * cfg.dt, cfg.wI.copy(), cfg.aI.copy())]
    feet = [FootVelocitySample(m.t, 0, -m.v_base, True, None) for m in run.measurements]
    states = [cfg.X0] + run.truth
    ref = ReferenceTrajectory(
        np.arange(cfg.m + 1) * cfg.dt,
        np.array([matrix_to_quat(X.rot) for X in states]),
        np.array([X.pos for X in states]),
    )
    return ReplayLog(imu, feet, ref), xi0


def scenario3_log(
    cfg: SyntheticConfig, k: int = 0, meas_var: float = 1e-4, window: int = 25, order: int = 5
) -> ReplayLog:
    """Scenario-3 style log: measurements are the reference base velocity plus white noise.

    The reference velocity is the Savitzky-Golay derivative of the logged
    reference positions, so the measurement carries the same smoothing the
    evaluation uses.
    """
    rng = np.random.default_rng(cfg.seed + k)
    n = cfg.m + 1
    wg = rng.multivariate_normal(np.zeros(3), cfg.Qg, size=n, method="eigh")
    wa = rng.multivariate_normal(np.zeros(3), cfg.Qa, size=n, method="eigh")
    R, v, p = cfg.X0.rot, cfg.X0.vel, cfg.X0.pos
    rots, poss = [R], [p]
    for _ in range(cfg.m):
        R, v, p = integrate_mean(R, v, p, cfg.wI, cfg.aI, cfg.dt, cfg.g)
        rots.append(R)
        poss.append(p)
    t = np.arange(n) * cfg.dt
    quat = np.array([matrix_to_quat(Ri) for Ri in rots])
    ref = ReferenceTrajectory(t, quat, np.array(poss))
    imu = [ImuSample(t[i], cfg.wI + wg[i], cfg.aI + wa[i]) for i in range(n)]
    vel_w = derive_reference_velocity(ref.pos, cfg.dt, window, order)
    Rq = Rotation.from_quat(quat, scalar_first=True).as_matrix()
    noise = rng.multivariate_normal(np.zeros(3), meas_var * np.eye(3), size=n, method="eigh")
    feet = [FootVelocitySample(t[i], 0, -(Rq[i].T @ vel_w[i] + noise[i]), True, None) for i in range(1, n)]
    return ReplayLog(imu, feet, ref)


__all__ = [
    "DataQualityError",
    "InterpolatedReference",
    "ReplayConfig",
    "ReplayLog",
    "RunResult",
    "build_measurements",
    "check_imu_stream",
    "derive_reference_velocity",
    "initial_error",
    "interpolate_reference",
    "matrix_to_quat",
    "quat_to_matrix",
    "replay_metrics",
    "run_replay",
    "scenario3_log",
    "synthetic_log",
]
