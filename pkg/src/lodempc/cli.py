"""Two-tank experiment runner for controller models A, B and C.

Usage::

    lodempc --model B --out results/
    lodempc --sweep --config exp.ini --out results/ --dump-algebra

The config file is INI-style. Every field of :class:`ExperimentConfig` can be
set in ``[experiment]``, plant parameters in ``[plant]`` and optimizer
settings in ``[optimizer]``::

    [experiment]
    model = C
    t_total = 200
    band_fraction = 0.1

    [plant]
    c12 = 2.5e-5
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .gp import OptimizerConfig, optimize_hyperparameters
from .lodegp import Hyperparameters, LodeGpModel, build_lodegp_model
from .linearize import LinearizedSystem, linearize
from .metrics import MetricsReport, evaluate
from .mpc import (
    BoxConstraints,
    ClosedLoopTrace,
    ConstraintMode,
    ControllerState,
    MpcConfig,
    assemble_dataset,
    run_closed_loop,
)
from .plant import TwoTankParams, two_tank_equilibrium, two_tank_system

log = logging.getLogger(__name__)

MODELS = ("A", "B", "C")
TRACE_HEADER = ("t", "x1", "x2", "u1", "u1_raw")
METRICS_HEADER = ("model", "control_error", "mean_control_input", "constraint_violation")


class ExperimentError(RuntimeError):
    """Failure in one stage of an experiment; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "A"
    plant: TwoTankParams = field(default_factory=TwoTankParams)
    u_e_start: float = 0.2  # fraction of u1_max
    u_e_ref: float = 0.3
    x_max: float = 0.6  # physical level limit of both tanks, m
    t_total: float = 200.0
    dt: float = 1.0
    horizon: float = 10.0
    n_constraint_points: int = 10
    t_ref: float = 100.0
    band_fraction: float = 0.1
    substep: float = 0.01
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    out_dir: Optional[Path] = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        for name in ("u_e_start", "u_e_ref"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.dt <= 0 or self.t_total < self.dt:
            raise ValueError("need dt > 0 and t_total >= dt")

    def physical_box(self) -> BoxConstraints:
        return BoxConstraints([0.0, 0.0, 0.0], [self.x_max, self.x_max, self.plant.u1_max])

    def mpc_config(self, z_ref) -> MpcConfig:
        common = dict(z_ref=z_ref, box=self.physical_box(), horizon=self.horizon,
                      n_constraint_points=self.n_constraint_points, dt=self.dt,
                      band_fraction=self.band_fraction)
        if self.model == "B":
            return MpcConfig(**common, t_ref=self.t_ref, use_endpoint=True, post_ref_hold=True)
        if self.model == "C":
            return MpcConfig(**common, constraint_mode=ConstraintMode.REFERENCE_BAND)
        return MpcConfig(**common)


_SECTIONS = {
    "experiment": {f.name for f in dataclasses.fields(ExperimentConfig)} - {"plant", "optimizer"},
    "plant": {f.name for f in dataclasses.fields(TwoTankParams)},
    "optimizer": {f.name for f in dataclasses.fields(OptimizerConfig)},
}


def _parse_value(key: str, raw: str, default):
    if isinstance(default, tuple):
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if key == "out_dir":
        return Path(raw)
    return raw.strip()


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an INI file into an :class:`ExperimentConfig`; ``overrides`` win."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep case: the plant has a field named ``A``
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh)
    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections {sorted(unknown)}")
    base = ExperimentConfig()
    parts = {"experiment": {}, "plant": {}, "optimizer": {}}
    defaults = {"experiment": base, "plant": base.plant, "optimizer": base.optimizer}
    for sec in parser.sections():
        for key, raw in parser[sec].items():
            if key not in _SECTIONS[sec]:
                raise ValueError(f"unknown key {key!r} in [{sec}]")
            parts[sec][key] = _parse_value(key, raw, getattr(defaults[sec], key))
    cfg = dataclasses.replace(
        base,
        plant=TwoTankParams(**parts["plant"]),
        optimizer=OptimizerConfig(**parts["optimizer"]),
        **parts["experiment"],
    )
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    lin_start: LinearizedSystem
    lin_ref: LinearizedSystem
    model: LodeGpModel
    trace: ClosedLoopTrace
    metrics: MetricsReport


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.debug("stage %s", self.name)

    def __exit__(self, etype, exc, tb):
        if exc is not None and not isinstance(exc, ExperimentError):
            raise ExperimentError(self.name, exc) from exc
        return False


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Linearize, build and train the LODE-GP, run the closed loop, score it."""
    p = cfg.plant
    with _Stage("plant"):
        plant = two_tank_system(p)
    with _Stage("linearization"):
        # the closed form only seeds Newton; the solver does the work
        u0, u1 = cfg.u_e_start * p.u1_max, cfg.u_e_ref * p.u1_max
        lin0 = linearize(plant, u0, two_tank_equilibrium(u0, p) * 1.05)
        lin1 = linearize(plant, u1, two_tank_equilibrium(u1, p) * 1.05)
    with _Stage("model"):
        model = build_lodegp_model(lin1, Hyperparameters(1.0, 1.0))
        z_ref = np.concatenate([lin1.x_e, lin1.u_e])
        mpc_cfg = cfg.mpc_config(z_ref)
    with _Stage("training"):
        data = assemble_dataset(ControllerState(model, mpc_cfg, u_prev=lin0.u_e), lin0.x_e)
        model = model.with_hyper(optimize_hyperparameters(model, data, cfg.optimizer))
    with _Stage("closed-loop"):
        controller = ControllerState(model, mpc_cfg, u_prev=lin0.u_e)
        trace = run_closed_loop(plant, controller, lin0.x_e, cfg.t_total, substep=cfg.substep)
    with _Stage("metrics"):
        metrics = evaluate(trace, lin1.x_e, cfg.physical_box(), cfg.model)
    return ExperimentResult(cfg, lin0, lin1, model, trace, metrics)


def write_trace(path, trace: ClosedLoopTrace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t, x, u, ur in zip(trace.t, trace.x, trace.u, trace.u_raw):
            w.writerow([repr(float(t)), repr(float(x[0])), repr(float(x[1])),
                        repr(float(u[0])), repr(float(ur[0]))])


def read_trace(path) -> ClosedLoopTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ClosedLoopTrace(t=data[:, 0], x=data[:, 1:3], u=data[:, 3:4], u_raw=data[:, 4:5])


def write_metrics(path, reports: Sequence[MetricsReport]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in reports:
            w.writerow([r.model, repr(r.control_error), repr(r.mean_control_input),
                        repr(r.constraint_violation)])


def write_algebra(path, model: LodeGpModel):
    Path(path).write_text(model.smith.dump() + "\n")


def format_table(reports: Sequence[MetricsReport]) -> str:
    head = f"{'':<22}" + "".join(f"{'Model (' + r.model + ')':>14}" for r in reports)
    rows = [head]
    for label, key in (("Control error", "control_error"),
                       ("Mean control input", "mean_control_input"),
                       ("Constraint error", "constraint_violation")):
        rows.append(f"{label:<22}" + "".join(f"{getattr(r, key):>14.3e}" for r in reports))
    return "\n".join(rows)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lodempc", description=__doc__.split("\n")[0])
    ap.add_argument("--config", type=Path, help="INI experiment configuration")
    ap.add_argument("--model", choices=MODELS, help="controller model (overrides config)")
    ap.add_argument("--out", type=Path, help="output directory (default: current directory)")
    ap.add_argument("--dump-algebra", action="store_true", help="write D, W, V to algebra.txt")
    ap.add_argument("--seed", type=int, help="seed recorded with the run; the pipeline draws no random numbers")
    ap.add_argument("--sweep", action="store_true", help="run models A, B and C and print a summary table")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _Stage("config"):
            cfg = load_config(args.config, model=args.model, seed=args.seed, out_dir=args.out)
            out = cfg.out_dir or Path(".")
            out.mkdir(parents=True, exist_ok=True)
        models = MODELS if args.sweep else (cfg.model,)
        reports = []
        for name in models:
            res = run_experiment(dataclasses.replace(cfg, model=name))
            with _Stage("output"):
                write_trace(out / f"trace_{name}.csv", res.trace)
                if args.dump_algebra and not reports:
                    write_algebra(out / "algebra.txt", res.model)
            reports.append(res.metrics)
        with _Stage("output"):
            write_metrics(out / "metrics.csv", reports)
    except ExperimentError as e:
        print(f"lodempc: error: {e}", file=sys.stderr)
        return 1
    print(format_table(reports))
    return 0


if __name__ == "__main__":
    sys.exit(main())
