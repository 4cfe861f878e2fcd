"""CSV schemas for logs, estimates and metrics.  Floats use 17 significant digits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .state_models import FootVelocitySample, ImuSample

IMU_HEADER = ["t", "gx", "gy", "gz", "ax", "ay", "az"]
FEET_HEADER = ["t", "foot_id", "vx", "vy", "vz", "contact", "grf_z"]
REF_HEADER = ["t", "qw", "qx", "qy", "qz", "px", "py", "pz"]
ESTIMATE_HEADER = ["t", "filter", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz", "iters", "nees_term"]
METRICS_HEADER = ["filter", "metric", "value", "window_s"]


class SchemaError(ValueError):
    """A CSV file does not follow its schema; the message names the row and column."""


def fmt(x) -> str:
    """Round-trippable, locale-independent float text; NaN and None become empty."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    return format(x, ".17g")


@dataclass
class ReferenceTrajectory:
    t: np.ndarray  # (n,)
    quat: np.ndarray  # (n, 4) as (qw, qx, qy, qz), world from body
    pos: np.ndarray  # (n, 3)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.quat = np.asarray(self.quat, dtype=float).reshape(-1, 4)
        self.pos = np.asarray(self.pos, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.quat) == len(self.pos)):
            raise ValueError("reference columns have different lengths")


def _write(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read(path: Path, header: Sequence[str]) -> list[list[str]]:
    path = Path(path)
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != list(header):
        got = rows[0] if rows else []
        raise SchemaError(f"{path.name}: row 1: header must be {','.join(header)}, got {','.join(got)}")
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise SchemaError(f"{path.name}: row {i}: expected {len(header)} columns, got {len(r)}")
    return rows[1:]


def _float(path: Path, row: int, col: str, text: str, optional: bool = False) -> float | None:
    if text == "" and optional:
        return None
    try:
        v = float(text)
    except ValueError:
        raise SchemaError(f"{Path(path).name}: row {row}, column {col}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise SchemaError(f"{Path(path).name}: row {row}, column {col}: value must be finite")
    return v


def _floats(path, i, header, r, cols):
    return [_float(path, i, header[c], r[c]) for c in cols]


def write_imu_csv(path, imu: Sequence[ImuSample]) -> None:
    _write(Path(path), IMU_HEADER, ([fmt(u.t), *map(fmt, u.gyro), *map(fmt, u.accel)] for u in imu))


def read_imu_csv(path) -> list[ImuSample]:
    out = []
    for i, r in enumerate(_read(path, IMU_HEADER), start=2):
        v = _floats(path, i, IMU_HEADER, r, range(7))
        out.append(ImuSample(v[0], np.array(v[1:4]), np.array(v[4:7])))
    return out


def write_feet_csv(path, feet: Sequence[FootVelocitySample]) -> None:
    rows = (
        [fmt(f.t), str(int(f.foot_id)), *map(fmt, f.v_foot_base), "1" if f.in_contact else "0", fmt(f.grf_z)]
        for f in feet
    )
    _write(Path(path), FEET_HEADER, rows)


def read_feet_csv(path) -> list[FootVelocitySample]:
    out = []
    for i, r in enumerate(_read(path, FEET_HEADER), start=2):
        t, vx, vy, vz = _floats(path, i, FEET_HEADER, r, (0, 2, 3, 4))
        try:
            foot = int(r[1])
        except ValueError:
            raise SchemaError(f"{Path(path).name}: row {i}, column foot_id: not an integer: {r[1]!r}") from None
        if r[5] not in ("0", "1"):
            raise SchemaError(f"{Path(path).name}: row {i}, column contact: must be 0 or 1, got {r[5]!r}")
        grf = _float(path, i, "grf_z", r[6], optional=True)
        out.append(FootVelocitySample(t, foot, np.array([vx, vy, vz]), r[5] == "1", grf))
    return out


def write_ref_csv(path, ref: ReferenceTrajectory) -> None:
    rows = ([fmt(t), *map(fmt, q), *map(fmt, p)] for t, q, p in zip(ref.t, ref.quat, ref.pos))
    _write(Path(path), REF_HEADER, rows)


def read_ref_csv(path) -> ReferenceTrajectory:
    rows = _read(path, REF_HEADER)
    vals = np.array([_floats(path, i, REF_HEADER, r, range(8)) for i, r in enumerate(rows, start=2)]).reshape(-1, 8)
    for i, q in enumerate(vals[:, 1:5], start=2):
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise SchemaError(f"{Path(path).name}: row {i}, columns qw..qz: quaternion is not unit norm")
    return ReferenceTrajectory(vals[:, 0], vals[:, 1:5], vals[:, 5:8])


def write_estimates_csv(path, rows: Iterable[Sequence]) -> None:
    """Rows of (t, filter, q(4), v(3), p(3), iters, nees_term)."""
    def line(r):
        t, name, q, v, p, iters, nees = r
        return [fmt(t), name, *map(fmt, q), *map(fmt, v), *map(fmt, p), str(int(iters)), fmt(nees)]

    _write(Path(path), ESTIMATE_HEADER, (line(r) for r in rows))


def read_estimates_csv(path) -> list[list[str]]:
    return _read(path, ESTIMATE_HEADER)


def write_metrics_csv(path, rows: Iterable[Sequence]) -> None:
    """Rows of (filter, metric, value, window_s)."""
    _write(Path(path), METRICS_HEADER, ([f, m, fmt(v), fmt(w)] for f, m, v, w in rows))


def read_metrics_csv(path) -> list[tuple[str, str, float, float | None]]:
    out = []
    for i, r in enumerate(_read(path, METRICS_HEADER), start=2):
        out.append((r[0], r[1], _float(path, i, "value", r[2]), _float(path, i, "window_s", r[3], optional=True)))
    return out


def write_table_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Generic numeric table; strings pass through, numbers use ``fmt``."""
    _write(Path(path), header, ([c if isinstance(c, str) else fmt(c) for c in r] for r in rows))


__all__ = [
    "ESTIMATE_HEADER",
    "FEET_HEADER",
    "IMU_HEADER",
    "METRICS_HEADER",
    "REF_HEADER",
    "ReferenceTrajectory",
    "SchemaError",
    "fmt",
    "read_estimates_csv",
    "read_feet_csv",
    "read_imu_csv",
    "read_metrics_csv",
    "read_ref_csv",
    "write_estimates_csv",
    "write_feet_csv",
    "write_imu_csv",
    "write_metrics_csv",
    "write_ref_csv",
    "write_table_csv",
]
