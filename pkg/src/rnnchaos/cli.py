"""Command-line driver: ``rnnchaos <command> [options]``.

Commands read an optional JSON config (``--config``) whose keys are checked
against a per-command schema; unknown keys are rejected. A few flags override
config values. Exit status: 0 on success, 2 for configuration or usage
errors, 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import jsonschema
import numpy as np

from . import io
from .analysis import ensemble, prediction_error_curve, rnn_lyapunov_spectrum
from .dynamics import (SimConfig, Trajectory, make_system, ode_lyapunov_spectrum,
                       rescale_to_unit_cube, simulate)
from .errors import ConfigError, FormatError, NumericalError
from .model import LayeredRnnParams, forecast, spectral_init, warmup
from .numerics import derive_seed, make_rng
from .training import (FitConfig, TrainConfig, TrainingAborted, make_dataset, one_step_errors,
                       rc_fit, train)

log = logging.getLogger("rnnchaos")

CONFIG_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


# -- config schemas ------------------------------------------------------------------

_NUMBER = {"type": "number"}
_INT = {"type": "integer"}


def _field_schema(f):
    default = f.default
    if isinstance(default, bool):
        return {"type": "boolean"}
    if isinstance(default, int):
        return {"type": "integer"}
    if isinstance(default, float):
        return _NUMBER
    if isinstance(default, str):
        return {"type": "string"}
    if f.name == "initial_state":
        return {"type": ["array", "null"], "items": _NUMBER}
    raise TypeError(f"no schema rule for field {f.name}")


def _dataclass_props(cls):
    return {f.name: _field_schema(f) for f in dataclasses.fields(cls)}


def _object(props, **extra):
    return {"type": "object", "properties": props, "additionalProperties": False, **extra}


_VERSION = {"version": {"const": CONFIG_VERSION}}
_LOSS = {"type": "string", "enum": ["seq2seq", "one_step"]}

SCHEMAS = {
    "simulate": _object({
        **_VERSION,
        "system": {"type": "string"},
        "params": {"type": "object", "additionalProperties": _NUMBER},
        "rescale": {"type": "boolean"},
        **_dataclass_props(SimConfig),
    }),
    "make-dataset": _object({
        **_VERSION, "n_sequences": _INT, "warmup_len": _INT, "target_len": _INT, "seed": _INT,
    }),
    "train": _object({**_VERSION, **_dataclass_props(TrainConfig), "loss_mode": _LOSS}),
    "fit-rc": _object({**_VERSION, **_dataclass_props(FitConfig), "offset": _INT}),
    "analyze": _object({
        **_VERSION, "steps": _INT, "transient": _INT, "warmup_len": _INT, "test_len": _INT,
        "threshold": _NUMBER, "offset": {"type": ["integer", "null"]},
        "n_exponents": {"type": ["integer", "null"]}, "seed": _INT,
    }),
    "ensemble": _object({
        **_VERSION, "mode": {"type": "string", "enum": ["train", "fit"]},
        "n_machines": _INT, "runs_per_machine": _INT, "base_seed": _INT, "n_steps": _INT,
        "transient": _INT, "warmup_len": _INT, "n_sequences": _INT, "target_len": _INT,
        "train": _object({**_dataclass_props(TrainConfig), "loss_mode": _LOSS}),
        "fit": _object(_dataclass_props(FitConfig)),
    }),
}

DEFAULTS = {
    "simulate": {"system": "lorenz", "params": {}, "rescale": True},
    "make-dataset": {"n_sequences": 2000, "warmup_len": 100, "target_len": 120, "seed": 0},
    "train": {},
    "fit-rc": {"offset": 0},
    "analyze": {"steps": 1600, "transient": 100, "warmup_len": 100, "test_len": 150,
                "threshold": 0.2, "offset": None, "n_exponents": None, "seed": 0},
    "ensemble": {"mode": "train", "n_machines": 2, "runs_per_machine": 2, "base_seed": 0,
                 "n_steps": 1600, "transient": 100, "warmup_len": 100, "n_sequences": 2000,
                 "target_len": 120, "train": {}, "fit": {}},
}


def load_config(command, path, overrides=None):
    """Defaults, then the JSON file, then non-None ``overrides``; validated."""
    raw = {}
    if path is not None:
        try:
            raw = io.load_json(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    try:
        jsonschema.validate(raw, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from exc
    cfg = {**DEFAULTS[command], **raw}
    cfg.pop("version", None)
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return cfg


def _build(cls, values):
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _pick(cls, cfg):
    names = {f.name for f in dataclasses.fields(cls)}
    return _build(cls, {k: v for k, v in cfg.items() if k in names})


# -- commands ------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = load_config("simulate", args.config,
                      {"skip": args.skip, "subsample_stride": args.stride, "seed": args.seed})
    try:
        system = make_system(cfg["system"], cfg["params"])
    except KeyError as exc:
        raise ConfigError(f"unknown system {cfg['system']!r}") from exc
    traj = simulate(system, _pick(SimConfig, cfg))
    if cfg["rescale"]:
        traj = rescale_to_unit_cube(traj)
    io.save_trajectory(args.out, traj)
    lo, hi = traj.states.min(axis=0), traj.states.max(axis=0)
    print(f"dim={traj.dim} dt={traj.dt:g} count={len(traj)} "
          f"min={np.array2string(lo, precision=4)} max={np.array2string(hi, precision=4)}")


def cmd_make_dataset(args):
    cfg = load_config("make-dataset", args.config, {"seed": args.seed})
    traj = io.load_trajectory(args.trajectory)
    ds = make_dataset(traj, cfg["n_sequences"], cfg["warmup_len"], cfg["target_len"],
                      make_rng(cfg["seed"]))
    io.save_dataset(args.out, ds)
    print(f"sequences={len(ds)} warmup={ds.warmup_len} target={ds.target_len} dt={ds.dt:g}")


def _train_sidecar(cfg, report):
    rep = report.to_dict()
    rep.pop("wall_seconds")
    return {"version": CONFIG_VERSION, "config": dataclasses.asdict(cfg), "report": rep}


def cmd_train(args):
    cfg = load_config("train", args.config,
                      {"loss_mode": args.loss, "max_epochs": args.max_epochs, "seed": args.seed})
    tcfg = _pick(TrainConfig, cfg)
    ds = io.load_dataset(args.dataset)
    try:
        p, report = train(ds, tcfg)
    except TrainingAborted as exc:
        io.save_params(args.out, exc.params)
        io.save_json(args.out + ".json", _train_sidecar(tcfg, exc.report))
        raise
    io.save_params(args.out, p)
    io.save_json(args.out + ".json", _train_sidecar(tcfg, report))
    print(f"epochs={report.stopped_epoch} best_epoch={report.best_epoch} "
          f"train_loss={report.train_loss[-1]:.6g} val_loss={report.val_loss[report.best_epoch]:.6g}")


def cmd_fit_rc(args):
    cfg = load_config("fit-rc", args.config, {"seed": args.seed})
    fcfg = _pick(FitConfig, cfg)
    traj = io.load_trajectory(args.trajectory)
    start = cfg["offset"]
    span = fcfg.warmup_len + fcfg.fit_len + 1
    if start < 0 or start + span > len(traj):
        raise ConfigError(f"fit window [{start}, {start + span}) outside trajectory of {len(traj)}")
    p = rc_fit(traj.states[start:start + span], fcfg)
    err = one_step_errors(p, traj.states[start:start + span], fcfg.warmup_len)
    rmse = float(np.sqrt(np.mean(err ** 2)))
    io.save_params(args.out, p)
    io.save_json(args.out + ".json", {"version": CONFIG_VERSION, "config": dataclasses.asdict(fcfg),
                                      "offset": start, "fit_one_step_rmse": rmse})
    print(f"d={p.d} fit_len={fcfg.fit_len} one_step_rmse={rmse:.3e}")


def _summary(rep, horizon=None):
    head = ", ".join(f"{x:.4f}" for x in rep.spectrum[:4])
    line = f"spectrum=[{head}{', ...' if len(rep.spectrum) > 4 else ''}] " \
           f"D_L={rep.dl_dimension:.4f} class={rep.attractor_class.value}"
    if horizon is not None:
        line += f" horizon={horizon}"
    return line


def cmd_analyze(args):
    os.makedirs(args.out_dir, exist_ok=True)
    out_json = os.path.join(args.out_dir, "lyapunov.json")
    if args.ode is not None:
        return _analyze_ode(args, out_json)
    if args.checkpoint is None or args.trajectory is None:
        raise ConfigError("analyze needs --checkpoint and --trajectory (or --ode)")
    cfg = load_config("analyze", args.config, {"steps": args.steps, "seed": args.seed})
    p = io.load_params(args.checkpoint)
    if isinstance(p, LayeredRnnParams):
        raise ConfigError("analyze supports single-layer machines only")
    traj = io.load_trajectory(args.trajectory)
    if traj.dim != p.k:
        raise ConfigError(f"trajectory dim {traj.dim} does not match machine input {p.k}")
    span = cfg["warmup_len"] + cfg["test_len"]
    if len(traj) < span:
        raise ConfigError(f"trajectory too short: need {span} samples")
    rng = make_rng(cfg["seed"])
    start = cfg["offset"]
    if start is None:
        start = int(rng.integers(0, len(traj) - span + 1))
    elif start < 0 or start + span > len(traj):
        raise ConfigError("offset puts the test window outside the trajectory")
    warm = traj.states[start:start + cfg["warmup_len"]]
    truth = traj.states[start + cfg["warmup_len"]:start + span]

    meta = {"warmup_offset": start, "checkpoint": os.path.basename(args.checkpoint)}
    try:
        pred, _ = forecast(p, warm, cfg["test_len"])
        curve = prediction_error_curve(truth, pred, cfg["threshold"])
        h = warmup(p, warm)
        rep = rnn_lyapunov_spectrum(p, h, cfg["steps"], cfg["transient"], dt=traj.dt,
                                    n_exponents=cfg["n_exponents"])
    except NumericalError as exc:
        from .spectrum import LyapunovReport
        rep = LyapunovReport.from_exponents([np.nan], traj.dt, cfg["steps"], diverged=True,
                                            meta={**meta, "error": str(exc)})
        io.save_json(out_json, rep.to_dict())
        raise
    rep.meta.update(meta)
    rep.meta["horizon"] = curve.horizon
    io.save_json(out_json, rep.to_dict())
    io.save_csv(os.path.join(args.out_dir, "error_curve.csv"), ["step", "rmse"],
                [(i, float(r)) for i, r in enumerate(curve.rmse)])
    print(_summary(rep, curve.horizon))
    if rep.attractor_class.value == "Divergent":
        return EXIT_NUMERIC
    return EXIT_OK


def _analyze_ode(args, out_json):
    if args.dt is None or not args.dt > 0:
        raise ConfigError("--ode needs a positive --dt")
    system = make_system(args.ode)
    seed = 0 if args.seed is None else args.seed
    n_steps = int(round(args.time / args.dt))
    x0 = simulate(system, SimConfig(dt_integrate=1e-3, n_steps=0, skip=args.relax,
                                    subsample_stride=1, seed=seed)).states[-1]
    rep = ode_lyapunov_spectrum(system, x0, args.dt, n_steps, propagator=args.propagator)
    rep.meta.update(seed=seed, time=args.time)
    io.save_json(out_json, rep.to_dict())
    print(_summary(rep))
    return EXIT_OK


def cmd_ensemble(args):
    cfg = load_config("ensemble", args.config, {"mode": args.mode})
    traj = io.load_trajectory(args.trajectory)
    base = _build(TrainConfig, cfg["train"]) if cfg["mode"] == "train" \
        else _build(FitConfig, cfg["fit"])
    report = ensemble(traj, cfg["n_machines"], cfg["runs_per_machine"], cfg["mode"], base,
                      cfg["base_seed"], n_steps=cfg["n_steps"], transient=cfg["transient"],
                      warmup_len=cfg["warmup_len"], n_sequences=cfg["n_sequences"],
                      target_len=cfg["target_len"], jobs=args.jobs)
    os.makedirs(args.out_dir, exist_ok=True)
    rdir = os.path.join(args.out_dir, "reports")
    os.makedirs(rdir, exist_ok=True)
    for i, rep in enumerate(report.reports):
        io.save_json(os.path.join(rdir, f"run_{i:04d}.json"), rep.to_dict())
    io.save_json(os.path.join(args.out_dir, "ensemble.json"), report.to_dict())
    io.save_csv(os.path.join(args.out_dir, "histogram.csv"), ["bin_left", "count"],
                report.histogram_rows())
    for m in report.machines:
        if "error" in m:
            log.warning("machine %d failed: %s", m["machine"], m["error"])
    print(f"reports={len(report.reports)} aborted={len(report.aborted)} "
          f"classes={report.class_tallies}")


# -- entry point ---------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="rnnchaos", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate an ODE system to a TRAJ1 file")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--skip", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("make-dataset", help="cut training windows from a trajectory")
    s.add_argument("--config")
    s.add_argument("--trajectory", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_make_dataset)

    s = sub.add_parser("train", help="train a machine by BPTT")
    s.add_argument("--config")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--loss", choices=["seq2seq", "one_step"])
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fit-rc", help="ridge-fit the readout of a random reservoir")
    s.add_argument("--config")
    s.add_argument("--trajectory", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_fit_rc)

    s = sub.add_parser("analyze", help="Lyapunov spectrum and forecast error of a machine")
    s.add_argument("--config")
    s.add_argument("--checkpoint")
    s.add_argument("--trajectory")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--ode", help="analyze an ODE system instead of a machine")
    s.add_argument("--dt", type=float)
    s.add_argument("--time", type=float, default=100.0)
    s.add_argument("--relax", type=int, default=10000, help="integration steps before measuring")
    s.add_argument("--propagator", choices=["rk4", "euler"], default="rk4")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("ensemble", help="dimension statistics over many machines")
    s.add_argument("--config")
    s.add_argument("--trajectory", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--mode", choices=["train", "fit"])
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_ensemble)
    return ap


def main(argv=None):
    level = os.environ.get("RNNCHAOS_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
