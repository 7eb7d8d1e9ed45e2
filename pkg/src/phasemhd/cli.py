"""Case-driven command line front end.

``phasemhd run --case rising_bubble_2d --out out/rb`` runs one simulation;
``phasemhd sweep --case damping_sweep --orientation horizontal`` runs the
magnetic damping sweep.  Every invocation ends with exactly one status line
on stdout: ``DONE ...``, ``SWEEP ...`` or ``ERROR exit=<code> ...``.

Exit codes: 0 success, 2 configuration or usage error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import diagnostics, io
from .mesh import build_mesh
from .params import InvalidParameterError, derive_groups
from .stepper import ModeError, SimState, StepFailure, Stepper, initial_phi, planar_phi

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

ENV_OUT = "PHASEMHD_OUT"

SWEEP_VALUES = (0.0, 3.0, 5.0, 7.0)
ORIENTATIONS = {"horizontal": (1.0, 0.0, 0.0), "vertical": (0.0, 1.0, 0.0)}


class UsageError(Exception):
    pass


class SolverError(RuntimeError):
    pass


# -- case catalog ----------------------------------------------------------------

@dataclass(frozen=True)
class SweepCase:
    base: str
    values: tuple[float, ...] = SWEEP_VALUES
    orientations: tuple[str, ...] = ("horizontal", "vertical")

    def members(self, orientation: str, values=None) -> list[tuple[str, list[str]]]:
        """Override sets for one field orientation, labelled ``B<value>``."""
        if orientation not in ORIENTATIONS:
            raise UsageError(f"unknown orientation {orientation!r}")
        direction = ORIENTATIONS[orientation]
        out = []
        for b in (self.values if values is None else values):
            vec = ", ".join(repr(b * d) for d in direction)
            out.append((f"B{b:g}", [f"physics.B = {vec}", "physics.B_mode = in-plane"]))
        return out


class CaseCatalog:
    """Named benchmark cases shipped with the package."""

    RUN_CASES = ("relax1d", "static_bubble_2d", "rising_bubble_2d", "rising_bubble_3d")
    SWEEPS = {"damping_sweep": SweepCase(base="rising_bubble_2d")}

    @classmethod
    def names(cls) -> list[str]:
        return list(cls.RUN_CASES) + list(cls.SWEEPS)

    @classmethod
    def text(cls, name: str) -> str:
        if name not in cls.RUN_CASES:
            raise UsageError(f"unknown case {name!r}; available: {', '.join(cls.names())}")
        return resources.files("phasemhd").joinpath("cases", f"{name}.cfg").read_text()

    @classmethod
    def config(cls, name: str, overrides=()) -> io.RunConfig:
        if name in cls.SWEEPS:
            raise UsageError(f"{name} is a sweep; use the 'sweep' command")
        return io.parse_config(cls.text(name), overrides)


# -- simulation loop -----------------------------------------------------------------

@dataclass
class RunResult:
    state: SimState
    records: list
    wall_s: float
    steady: bool = False
    observed: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.state.n

    @property
    def mass_drift(self) -> float:
        return self.records[-1].mass_drift


def build_stepper(cfg: io.RunConfig):
    mesh = cfg.mesh()
    groups = derive_groups(cfg.params, scaling_law=cfg.Pe is None, Pe=cfg.Pe)
    stepper = Stepper(mesh, groups, cfg.tau, cfg.bdf_order, cfg.solvers, cfg.B_mode)
    return mesh, groups, stepper


def initial_state(cfg: io.RunConfig, mesh, groups, stepper) -> SimState:
    init = cfg.initial
    if init["kind"] == "checkpoint":
        return io.restore(init["path"], mesh)
    if init["kind"] == "plane":
        phi = planar_phi(mesh, init["axis"], init["offset"], groups.Cn, init["width"])
    elif init["kind"] == "uniform":
        phi = np.full(mesh.n_nodes, float(init["value"]))
    else:
        phi = initial_phi(mesh, cfg.bubble_center, cfg.bubble_radius, groups.Cn)
    return stepper.initial_state(phi)


def run_simulation(cfg: io.RunConfig, out_dir=None, quiet: bool = True,
                   observer=None, stream=None) -> RunResult:
    """Advance ``cfg`` to its end time, writing the standard output layout.

    ``observer(state, mesh, groups)`` is called on every state (including
    the initial one) and its return values are collected in
    :attr:`RunResult.observed`.
    """
    t0 = time.perf_counter()
    stream = sys.stdout if stream is None else stream
    mesh, groups, stepper = build_stepper(cfg)
    state = initial_state(cfg, mesh, groups, stepper)
    out_dir = cfg.out_dir if out_dir is None else out_dir
    fields_dir = os.path.join(out_dir, "fields")
    os.makedirs(fields_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run_config.echo"), "w") as fh:
        fh.write(io.format_config(cfg))
    ts_path = os.path.join(out_dir, "timeseries.csv")

    def dump_fields(s):
        if cfg.write_fields:
            io.write_fields(s, mesh, os.path.join(fields_dir, "step_%08d.vtk" % s.n))

    records = [diagnostics.record(state, groups, mesh)]
    observed = [observer(state, mesh, groups)] if observer else []
    dump_fields(state)
    steady = False
    n_end = cfg.n_steps
    while state.n < n_end:
        try:
            new = stepper.advance(state)
        except StepFailure as exc:
            raise SolverError(f"step {state.n + 1}: {exc}") from exc
        if not (np.all(np.isfinite(new.phi)) and np.all(np.isfinite(new.u))):
            raise SolverError(f"step {new.n}: non-finite field values")
        records.append(diagnostics.record(new, groups, mesh))
        if observer:
            observed.append(observer(new, mesh, groups))
        change = float(np.max(np.abs(new.phi - state.phi)))
        state = new
        if state.n % cfg.cadence == 0:
            dump_fields(state)
            io.write_timeseries(records, ts_path)
            if not quiet:
                r = records[-1]
                print(f"step={state.n} t={state.t:.6g} mass_drift={r.mass_drift:.3e} "
                      f"rise_velocity={r.rise_velocity:.6g} dphi={change:.3e}", file=stream)
        if cfg.checkpoint_every and state.n % cfg.checkpoint_every == 0:
            io.checkpoint(state, os.path.join(out_dir, "checkpoint.bin"), mesh)
        if cfg.steady_tol and change < cfg.steady_tol:
            steady = True
            break
    if state.n % cfg.cadence != 0:
        dump_fields(state)
    io.write_timeseries(records, ts_path)
    io.checkpoint(state, os.path.join(out_dir, "checkpoint.bin"), mesh)
    return RunResult(state, records, time.perf_counter() - t0, steady, observed)


# -- commands -------------------------------------------------------------------------

def _read_config(args) -> io.RunConfig:
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        return io.parse_config(text, args.override or ())
    return CaseCatalog.config(args.case, args.override or ())


def _default_out(name: str) -> str:
    return os.path.join(os.environ.get(ENV_OUT, "out"), name)


def cmd_run(args) -> int:
    cfg = _read_config(args)
    out = args.out or _default_out(cfg.case)
    result = run_simulation(cfg, out, quiet=args.quiet)
    print(f"DONE steps={result.steps} mass_drift={result.mass_drift:.6e} "
          f"wall_s={result.wall_s:.3f}")
    return EXIT_OK


def _alignment_observer(direction):
    def observe(state, mesh, groups):
        return diagnostics.field_alignment(state, groups, mesh, direction)
    return observe


def _run_member(job):
    """Run one sweep member; never raises so the sweep can carry on."""
    index, label, text, overrides, out, direction = job
    row = {"member": index, "label": label, "overrides": "; ".join(overrides),
           "status": "ok", "peak_rise_velocity": math.nan,
           "final_rise_velocity": math.nan, "alignment_mean": math.nan,
           "alignment_final": math.nan}
    try:
        cfg = io.parse_config(text, overrides)
        result = run_simulation(cfg, out, quiet=True,
                                observer=_alignment_observer(direction))
    except (io.ConfigError, UsageError, ModeError, InvalidParameterError) as exc:
        row["status"] = f"config-error: {exc}"
        return row
    except (SolverError, io.CheckpointError, FloatingPointError) as exc:
        row["status"] = f"solver-failure: {exc}"
        return row
    rv = np.array([r.rise_velocity for r in result.records])
    row["peak_rise_velocity"] = float(np.nanmax(rv))
    row["final_rise_velocity"] = float(rv[-1])
    align = np.array(result.observed[1:])
    row["alignment_mean"] = float(align.mean()) if align.size else math.nan
    row["alignment_final"] = float(result.observed[-1])
    state, mesh = result.state, build_mesh(cfg.dim, cfg.box, cfg.cells)
    groups = derive_groups(cfg.params, scaling_law=cfg.Pe is None, Pe=cfg.Pe)
    for axis, frac in zip("xyz", diagnostics.kinetic_fractions(state, groups, mesh)):
        row[f"ke_fraction_{axis}"] = float(frac)
    return row


SUMMARY_COLUMNS = ("member", "label", "status", "peak_rise_velocity", "final_rise_velocity",
                   "alignment_mean", "alignment_final", "ke_fraction_x", "ke_fraction_y",
                   "ke_fraction_z", "overrides")


def run_sweep(base_text: str, members, out_root: str, jobs: int = 1,
              direction=(1.0, 0.0, 0.0)) -> list[dict]:
    """Run every ``(label, overrides)`` member into ``out_root/<label>``."""
    if not members:
        raise UsageError("sweep needs at least one member")
    os.makedirs(out_root, exist_ok=True)
    work = [(i, label, base_text, list(ovr), os.path.join(out_root, label), direction)
            for i, (label, ovr) in enumerate(members)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_member, work))
    else:
        rows = [_run_member(job) for job in work]
    rows.sort(key=lambda r: r["member"])
    with open(os.path.join(out_root, "sweep_summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, restval="",
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (("%.17g" % v) if isinstance(v, float) else v)
                             for k, v in row.items()})
    return rows


def _parse_member(spec: str) -> list[str]:
    items = [s.strip() for s in spec.split(";") if s.strip()]
    for item in items:
        if "=" not in item:
            raise UsageError(f"member override {item!r} is not of the form key=value")
    return items


def cmd_sweep(args) -> int:
    name = args.case
    direction = ORIENTATIONS[args.orientation]
    if name in CaseCatalog.SWEEPS:
        sweep = CaseCatalog.SWEEPS[name]
        values = None
        if args.values:
            try:
                values = [float(v) for v in args.values.split(",")]
            except ValueError as exc:
                raise UsageError(f"malformed --values {args.values!r}") from exc
        members = sweep.members(args.orientation, values)
        if args.member:
            raise UsageError("--member cannot be combined with a catalog sweep")
        base_text = CaseCatalog.text(sweep.base)
    else:
        base_text = CaseCatalog.text(name)
        members = [(f"m{i:02d}", _parse_member(m)) for i, m in enumerate(args.member or [])]
    shared = list(args.override or [])
    members = [(label, shared + ovr) for label, ovr in members]
    if not members:
        raise UsageError("empty override list: give at least one --member")
    # validate every member up front so usage problems are not reported as failures
    for _, ovr in members:
        io.parse_config(base_text, ovr)
    out = args.out or _default_out(f"{name}_{args.orientation}")
    t0 = time.perf_counter()
    rows = run_sweep(base_text, members, out, args.jobs, direction)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"SWEEP members={len(rows)} failed={failed} "
          f"summary={os.path.join(out, 'sweep_summary.csv')} "
          f"wall_s={time.perf_counter() - t0:.3f}")
    return EXIT_SOLVER if failed else EXIT_OK


# -- entry point ------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phasemhd", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="run one case or config file")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--case", help=f"catalog case: {', '.join(CaseCatalog.RUN_CASES)}")
    src.add_argument("--config", help="path to a key = value config file")
    run.add_argument("--override", action="append", metavar="KEY=VALUE",
                     help="replace one config key (repeatable)")
    run.add_argument("--out", help=f"output directory (default ${ENV_OUT}/<case>)")
    run.add_argument("--quiet", action="store_true", help="suppress progress lines")

    sw = sub.add_parser("sweep", help="run a family of override sets")
    sw.add_argument("--case", required=True,
                    help="damping_sweep or a run case used as the sweep base")
    sw.add_argument("--member", action="append", metavar="K=V;K=V",
                    help="one member's overrides (repeatable)")
    sw.add_argument("--override", action="append", metavar="KEY=VALUE",
                    help="override applied to every member")
    sw.add_argument("--orientation", choices=sorted(ORIENTATIONS), default="horizontal")
    sw.add_argument("--values", help="comma separated field strengths for damping_sweep")
    sw.add_argument("--jobs", type=int, default=1, help="members run concurrently")
    sw.add_argument("--out", help="output root")
    sw.add_argument("--quiet", action="store_true")
    return parser


def _error_line(code: int, message: str) -> str:
    return f"ERROR exit={code} reason={' '.join(str(message).split())}"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing command (run or sweep); cases: "
                             f"{', '.join(CaseCatalog.names())}")
        if args.command == "sweep" and args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        return cmd_run(args) if args.command == "run" else cmd_sweep(args)
    except UsageError as exc:
        msg = str(exc)
        if "unknown case" not in msg and "available" not in msg:
            msg += f" (cases: {', '.join(CaseCatalog.names())})"
        print(_error_line(EXIT_CONFIG, msg))
        return EXIT_CONFIG
    except (io.ConfigError, ModeError, InvalidParameterError, io.CheckpointError) as exc:
        print(_error_line(EXIT_CONFIG, exc))
        return EXIT_CONFIG
    except SolverError as exc:
        print(_error_line(EXIT_SOLVER, exc))
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
