"""Command-line entry point: montecarlo, planar, replay and synth-log subcommands.

Exit codes: 0 ok, 2 config or schema error, 3 I/O error, 4 data-quality error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import platform
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .experiments.filters import FILTER_NAMES, parse_filters
from .experiments.planar import PLANAR_FILTERS, make_scenario, observed_set_samples, run_planar_demo
from .experiments.replay import (
    DataQualityError,
    ReplayConfig,
    ReplayLog,
    matrix_to_quat,
    replay_metrics,
    run_replay,
    scenario3_log,
    synthetic_log,
)
from .experiments.synthetic import SyntheticConfig, run_synthetic_monte_carlo
from .liegroup.se22 import Se22State, rot2
from .logio import (
    SchemaError,
    read_feet_csv,
    read_imu_csv,
    read_ref_csv,
    write_estimates_csv,
    write_feet_csv,
    write_imu_csv,
    write_metrics_csv,
    write_ref_csv,
    write_table_csv,
)
from .update import UpdateConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4

OUT_DIR_ENV = "LEGGED_IEKF_OUT"
DEFAULT_OUT_DIR = "out"


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# schemas


def _matrix(n: int) -> dict:
    row = {"type": "array", "items": {"type": "number"}, "minItems": n, "maxItems": n}
    return {"type": "array", "items": row, "minItems": n, "maxItems": n}


def _vector(n: int) -> dict:
    return {"type": "array", "items": {"type": "number"}, "minItems": n, "maxItems": n}


_UPDATE_PROPS = {
    "max_iterations": {"type": "integer", "minimum": 1},
    "step_tol": {"type": "number", "exclusiveMinimum": 0},
    "loss_guard": {"type": "boolean"},
    "yaw_correction": {"type": "boolean"},
}

_SYNTH_PROPS = {
    "P0": _matrix(9),
    "Qa": _matrix(3),
    "Qg": _matrix(3),
    "Qf": _matrix(3),
    "aI": _vector(3),
    "wI": _vector(3),
    "m": {"type": "integer", "minimum": 1},
    "dt": {"type": "number", "exclusiveMinimum": 0},
    "K": {"type": "integer", "minimum": 1},
    "seed": {"type": "integer", "minimum": 0},
    "g": _vector(3),
    **_UPDATE_PROPS,
}

SCHEMAS = {
    "montecarlo": {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "montecarlo config",
        "type": "object",
        "properties": {
            **_SYNTH_PROPS,
            "filters": {"type": "array", "items": {"enum": list(FILTER_NAMES)}, "minItems": 1},
            "n_jobs": {"type": "integer", "minimum": 1},
            "window_s": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["P0", "Qa", "Qg", "Qf", "aI", "wI", "m", "dt", "K"],
        "additionalProperties": False,
    },
    "planar": {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "planar demo config",
        "type": "object",
        "properties": {
            "name": {"type": "string"},
            "landmarks": {"type": "array", "items": _vector(2), "minItems": 1},
            "true_state": {
                "type": "object",
                "properties": {"theta": {"type": "number"}, "v": _vector(2), "p": _vector(2)},
                "required": ["theta", "v", "p"],
                "additionalProperties": False,
            },
            "error": _vector(5),
            "P_diag": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 5, "maxItems": 5},
            "measurement_noise": {"type": "number", "exclusiveMinimum": 0},
            "filters": {"type": "array", "items": {"enum": list(PLANAR_FILTERS)}, "minItems": 1},
            "circle_samples": {"type": "integer", "minimum": 3},
            **_UPDATE_PROPS,
        },
        "required": ["landmarks", "true_state", "error", "P_diag"],
        "additionalProperties": False,
    },
    "replay": {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "replay config",
        "type": "object",
        "properties": {
            "Qf": _matrix(3),
            "Qg": _matrix(3),
            "Qa": _matrix(3),
            "P0": _matrix(9),
            "seed": {"type": "integer", "minimum": 0},
            "grf_threshold": {"type": "number"},
            "pre_negated": {"type": "boolean"},
            "smoothing": {"type": "boolean"},
            "R_IB": _matrix(3),
            "r_BI": _vector(3),
            "window_s": {"type": "number", "exclusiveMinimum": 0},
            "savgol_window": {"type": "integer", "minimum": 1},
            "savgol_order": {"type": "integer", "minimum": 0},
            "g": _vector(3),
            "filters": {"type": "array", "items": {"enum": list(FILTER_NAMES)}, "minItems": 1},
            **_UPDATE_PROPS,
        },
        "required": ["Qf", "Qg", "Qa", "P0"],
        "additionalProperties": False,
    },
    "synth-log": {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "synthetic log config",
        "type": "object",
        "properties": {
            **_SYNTH_PROPS,
            "scenario": {"enum": ["synthetic", "scenario3"]},
            "realization": {"type": "integer", "minimum": 0},
            "meas_var": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["P0", "Qa", "Qg", "Qf", "aI", "wI", "m", "dt"],
        "additionalProperties": False,
    },
}


def _field_message(err: jsonschema.ValidationError) -> str:
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        where = "/".join(str(p) for p in err.absolute_path)
        prefix = f"{where}/" if where else ""
        return f"missing required field {', '.join(prefix + m for m in missing)}"
    if err.validator == "additionalProperties":
        return f"unknown field: {err.message}"
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"field {where}: {err.message}"


def validate_config(kind: str, cfg) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMAS[kind])
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(e.absolute_path), e.validator))
    if errors:
        raise ConfigError("; ".join(_field_message(e) for e in errors))


def load_config(kind: str, path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validate_config(kind, cfg)
    return cfg


def shipped_configs() -> list[str]:
    return sorted(p.name for p in resources.files("legged_iekf").joinpath("configs").iterdir()
                  if p.name.endswith(".json"))


def shipped_config_path(name: str):
    return resources.files("legged_iekf").joinpath("configs", name)


# --------------------------------------------------------------------------
# manifest


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(text.encode("ascii")).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, command: str, argv, cfg: dict, seed, filters, started: str, extra=None) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": seed,
        "filters": list(filters),
        "started_utc": started,
        "finished_utc": _now(),
        "versions": {
            "legged_iekf": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="ascii")


def _prepare_out(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(cfg: dict, args, filters_key: bool = True) -> dict:
    cfg = dict(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "max_iters", None) is not None:
        cfg["max_iterations"] = args.max_iters
    if filters_key and getattr(args, "filters", None):
        cfg["filters"] = parse_filters(args.filters)
    return cfg


# --------------------------------------------------------------------------
# subcommands


def _synthetic_config(cfg: dict, drop=()) -> SyntheticConfig:
    kw = {k: v for k, v in cfg.items() if k not in drop}
    return SyntheticConfig(**kw)


def cmd_montecarlo(args) -> int:
    started = _now()
    cfg = _apply_overrides(load_config("montecarlo", args.config), args)
    filters = parse_filters(cfg.get("filters", FILTER_NAMES))
    n_jobs = int(args.jobs or cfg.get("n_jobs", 1))
    window = float(cfg.get("window_s", 5.0))
    sc = _synthetic_config(cfg, drop=("filters", "n_jobs", "window_s"))
    res = run_synthetic_monte_carlo(sc, filters, n_jobs=n_jobs, window_s=window)
    out = _prepare_out(args.out)
    rows = []
    for n in res.filters:
        for i in range(sc.m):
            rows.append([str(i + 1), res.t[i], n, res.mean_vel_err[n][i], res.mean_grav_err[n][i], res.mean_nees[n][i]])
    write_table_csv(out / "per_step.csv", ["step", "t", "filter", "vel_err", "grav_err", "nees"], rows)
    hist = [[n, str(k), str(c)] for n, h in res.iteration_histogram.items() for k, c in sorted(h.items())]
    write_table_csv(out / "iterations.csv", ["filter", "iterations", "count"], hist)
    metrics = []
    for n in res.filters:
        metrics.append((n, "vel_MAE", res.mae_first_window[n]["vel"], window))
        metrics.append((n, "grav_MAE", res.mae_first_window[n]["grav"], window))
        metrics.append((n, "nees_excluded", float(res.nees_excluded[n]), None))
    write_metrics_csv(out / "metrics.csv", metrics)
    write_manifest(out, "montecarlo", sys.argv if args.argv is None else args.argv, cfg, sc.seed, filters, started)
    for n in res.filters:
        tail = res.mean_nees[n][min(20, sc.m - 1):]
        print(f"{n:>15}: vel MAE {res.mae_first_window[n]['vel']:.5f}  grav MAE {res.mae_first_window[n]['grav']:.5f}"
              f"  NEES(step>=20) [{np.nanmin(tail):.2f}, {np.nanmax(tail):.2f}]")
    return EXIT_OK


def planar_scenario_from_config(cfg: dict):
    ts = cfg["true_state"]
    X = Se22State(rot2(float(ts["theta"])), np.asarray(ts["v"], float), np.asarray(ts["p"], float))
    ucfg = UpdateConfig(
        cfg.get("max_iterations", 20), cfg.get("step_tol", 1e-4), cfg.get("loss_guard", True), False
    )
    return make_scenario(
        X,
        np.asarray(cfg["error"], float),
        np.diag(np.asarray(cfg["P_diag"], float)),
        [np.asarray(b, float) for b in cfg["landmarks"]],
        float(cfg.get("measurement_noise", 1e-10)),
        cfg.get("name", "planar"),
        ucfg,
    )


def cmd_planar(args) -> int:
    started = _now()
    cfg = load_config("planar", args.config)
    if args.max_iters is not None:
        cfg["max_iterations"] = args.max_iters
    if args.filters:
        names = [s.strip() for s in args.filters.split(",") if s.strip()]
        bad = [n for n in names if n not in PLANAR_FILTERS]
        if bad:
            raise ConfigError(f"unknown planar filter(s) {', '.join(bad)}; choose from {', '.join(PLANAR_FILTERS)}")
        cfg["filters"] = names
    filters = [n for n in PLANAR_FILTERS if n in cfg.get("filters", PLANAR_FILTERS)]
    sc = planar_scenario_from_config(cfg)
    res = run_planar_demo(sc, filters)
    out = _prepare_out(args.out)
    summary, paths = [], []
    for n, r in res.items():
        for k, s in enumerate(r.steps):
            summary.append([n, str(k + 1), s.landmark[0], s.landmark[1], s.residual, str(s.iterations), s.stop_reason,
                            r.distance_to_truth])
            for j, X in enumerate(s.path):
                th = float(np.arctan2(X.rot[1, 0], X.rot[0, 0]))
                paths.append([n, str(k + 1), str(j), th, *X.vel, *X.pos])
    write_table_csv(out / "planar_summary.csv",
                    ["filter", "update", "bx", "by", "residual", "iterations", "stop_reason", "distance_to_truth"],
                    summary)
    write_table_csv(out / "planar_paths.csv", ["filter", "update", "iterate", "theta", "vx", "vy", "px", "py"], paths)
    circles = []
    for k in range(len(sc.landmarks)):
        for x, y in observed_set_samples(sc, k, int(cfg.get("circle_samples", 181))):
            circles.append([str(k + 1), x, y])
    write_table_csv(out / "observed_sets.csv", ["landmark", "px", "py"], circles)
    write_manifest(out, "planar", sys.argv if args.argv is None else args.argv, cfg, None, filters, started)
    for n, r in res.items():
        print(f"{n:>13}: residuals {', '.join(f'{x:.3e}' for x in r.residuals)}  "
              f"iterations {[s.iterations for s in r.steps]}  distance {r.distance_to_truth:.3e}")
    return EXIT_OK


def replay_config_from_dict(cfg: dict) -> ReplayConfig:
    return ReplayConfig(**{k: v for k, v in cfg.items() if k != "filters"})


def estimate_rows(results):
    for name, r in results.items():
        for i in range(r.t.size):
            yield (r.t[i], name, matrix_to_quat(r.rot[i]), r.vel[i], r.pos[i], r.iterations[i], r.nees[i])


def cmd_replay(args) -> int:
    started = _now()
    cfg = _apply_overrides(load_config("replay", args.config), args)
    filters = parse_filters(cfg.get("filters", FILTER_NAMES))
    rc = replay_config_from_dict(cfg)
    log = ReplayLog(read_imu_csv(args.imu), read_feet_csv(args.feet), read_ref_csv(args.ref))
    if not log.feet:
        print("warning: feet log is empty; running prediction only", file=sys.stderr)
    results = run_replay(log, filters, rc)
    out = _prepare_out(args.out)
    write_estimates_csv(out / "estimates.csv", estimate_rows(results))
    rows = replay_metrics(results, rc.window_s)
    rows += [(n, "updates", float(r.n_updates), None) for n, r in results.items()]
    write_metrics_csv(out / "metrics.csv", rows)
    inputs = {k: {"path": str(p), "sha256": file_hash(p)} for k, p in
              (("imu", args.imu), ("feet", args.feet), ("ref", args.ref))}
    write_manifest(out, "replay", sys.argv if args.argv is None else args.argv, cfg, rc.seed, filters, started,
                   {"inputs": inputs})
    for f, m, v, w in rows:
        print(f"{f:>15} {m:>10} {v:.6g}")
    return EXIT_OK


def cmd_synth_log(args) -> int:
    started = _now()
    cfg = _apply_overrides(load_config("synth-log", args.config), args, filters_key=False)
    k = int(cfg.get("realization", 0))
    scenario = cfg.get("scenario", "synthetic")
    sc = _synthetic_config(cfg, drop=("scenario", "realization", "meas_var"))
    if scenario == "scenario3":
        log = scenario3_log(sc, k, float(cfg.get("meas_var", 1e-4)))
    else:
        log, _ = synthetic_log(sc, k)
    out = _prepare_out(args.out)
    write_imu_csv(out / "imu.csv", log.imu)
    write_feet_csv(out / "feet.csv", log.feet)
    write_ref_csv(out / "ref.csv", log.reference)
    write_manifest(out, "synth-log", sys.argv if args.argv is None else args.argv, cfg, sc.seed + k, [], started)
    print(f"wrote {len(log.imu)} IMU rows, {len(log.feet)} foot rows, {log.reference.t.size} reference rows to {out}")
    return EXIT_OK


def cmd_show_config(args) -> int:
    if not args.name:
        print("\n".join(shipped_configs()))
        return EXIT_OK
    name = args.name if args.name.endswith(".json") else args.name + ".json"
    if name not in shipped_configs():
        raise ConfigError(f"no shipped config {args.name!r}; available: {', '.join(shipped_configs())}")
    print(shipped_config_path(name).read_text(encoding="utf-8"), end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="legged-iekf", description="Invariant and iterated filters for legged robots.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    default_out = os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR)

    def common(sp, kind):
        sp.add_argument("--out", default=default_out, help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
        sp.add_argument("--print-schema", action="store_true", help="print the config JSON schema and exit")
        sp.set_defaults(kind=kind)

    mc = sub.add_parser("montecarlo", help="synthetic constant-input Monte Carlo")
    mc.add_argument("config", nargs="?")
    mc.add_argument("--seed", type=int)
    mc.add_argument("--filters", help="comma-separated subset of " + ",".join(FILTER_NAMES))
    mc.add_argument("--max-iters", type=int, dest="max_iters")
    mc.add_argument("--jobs", type=int, help="worker processes")
    common(mc, "montecarlo")
    mc.set_defaults(func=cmd_montecarlo)

    pl = sub.add_parser("planar", help="planar SE_2(2) landmark demo")
    pl.add_argument("config", nargs="?")
    pl.add_argument("--filters", help="comma-separated subset of " + ",".join(PLANAR_FILTERS))
    pl.add_argument("--max-iters", type=int, dest="max_iters")
    common(pl, "planar")
    pl.set_defaults(func=cmd_planar)

    rp = sub.add_parser("replay", help="replay filters over CSV logs")
    rp.add_argument("--imu")
    rp.add_argument("--feet")
    rp.add_argument("--ref")
    rp.add_argument("--config")
    rp.add_argument("--seed", type=int)
    rp.add_argument("--filters", help="comma-separated subset of " + ",".join(FILTER_NAMES))
    rp.add_argument("--max-iters", type=int, dest="max_iters")
    common(rp, "replay")
    rp.set_defaults(func=cmd_replay)

    sl = sub.add_parser("synth-log", help="write a synthetic log in the replay CSV schema")
    sl.add_argument("config", nargs="?")
    sl.add_argument("--seed", type=int)
    common(sl, "synth-log")
    sl.set_defaults(func=cmd_synth_log)

    sh = sub.add_parser("show-config", help="list shipped configs or print one")
    sh.add_argument("name", nargs="?")
    sh.set_defaults(func=cmd_show_config, kind=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = None if argv is None else ["legged-iekf", *argv]
    if getattr(args, "print_schema", False):
        print(json.dumps(SCHEMAS[args.kind], indent=2))
        return EXIT_OK
    if args.command == "replay":
        missing = [f"--{k}" for k in ("imu", "feet", "ref", "config") if getattr(args, k) is None]
        if missing:
            print(f"error: replay needs {', '.join(missing)}", file=sys.stderr)
            return EXIT_CONFIG
    elif args.command != "show-config" and args.config is None:
        print(f"error: {args.command} needs a config file", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataQualityError as exc:
        print(f"data quality error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # Config values that pass the schema but fail semantic checks.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
