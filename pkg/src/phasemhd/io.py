"""Run configuration, field and time-series output, checkpoint/restart.

Configuration grammar
---------------------
One ``key = value`` pair per line. ``#`` starts a comment, blank lines are
ignored and keys use dotted namespaces.  Vectors are comma separated
(``mesh.box_max = 1, 2``).  Required keys are ``mesh.dim``, ``mesh.box_min``,
``mesh.box_max``, ``mesh.cells``, ``time.tau`` and ``time.end``; every other
key has the default listed in :data:`DEFAULTS`.
"""

from __future__ import annotations

import io as _io
import math
import os
import zipfile
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .diagnostics import TimeSeriesRecord
from .linsolve import METHODS, PRECONDITIONERS, SolveSpec
from .mesh import MeshError, StructuredMesh, build_mesh
from .params import InvalidParameterError, PhysicalParams
from .stepper import DEFAULT_SOLVERS, MAGNETIC_MODES, SimState

CHECKPOINT_VERSION = 1
VTK_HEADER = "# vtk DataFile Version 3.0"
TIMESERIES_HEADER = ",".join(TimeSeriesRecord.columns())

INITIAL_KINDS = ("bubble", "plane", "uniform", "checkpoint")

PHYSICS_KEYS = tuple(f.name for f in dc_fields(PhysicalParams) if f.name != "B_vec")

# key -> (kind, default); None marks a required key
DEFAULTS: dict[str, tuple[str, object]] = {
    "case": ("str", "custom"),
    "mesh.dim": ("int", None),
    "mesh.box_min": ("vec", None),
    "mesh.box_max": ("vec", None),
    "mesh.cells": ("ivec", None),
    "physics.B": ("vec", (0.0, 0.0, 0.0)),
    "physics.B_mode": ("str", "auto"),
    "physics.Pe": ("float", None),
    "time.tau": ("float", None),
    "time.end": ("float", None),
    "time.bdf_order": ("int", 2),
    "time.steady_tol": ("float", 0.0),
    "output.cadence": ("int", 100),
    "output.dir": ("str", "out"),
    "output.fields": ("bool", True),
    "output.checkpoint_every": ("int", 0),
    "bubble.center": ("vec", (0.5, 0.5)),
    "bubble.radius": ("float", 0.25),
    "initial.kind": ("str", "bubble"),
    "initial.axis": ("int", 0),
    "initial.offset": ("float", 0.0),
    "initial.width": ("float", 1.0),
    "initial.value": ("float", 1.0),
    "initial.path": ("str", ""),
}
for _name in PHYSICS_KEYS:
    _default = PhysicalParams.__dataclass_fields__[_name].default
    DEFAULTS[f"physics.{_name}"] = ("float", _default)
for _step, _spec in DEFAULT_SOLVERS.items():
    DEFAULTS[f"solver.{_step}.method"] = ("str", _spec.method)
    DEFAULTS[f"solver.{_step}.tol"] = ("float", _spec.rtol)
    DEFAULTS[f"solver.{_step}.atol"] = ("float", _spec.atol)
    DEFAULTS[f"solver.{_step}.maxiter"] = ("int", _spec.maxiter)
    DEFAULTS[f"solver.{_step}.precond"] = ("str", _spec.preconditioner)

# keys that may legitimately be left unset
_OPTIONAL_NONE = {"physics.Pe", "physics.u_ref", "physics.rho_ref", "physics.eta_ref",
                  "physics.sigma_ref", "physics.B_ref"}


class ConfigError(ValueError):
    """A configuration problem tied to a key (and a line when known)."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = ": ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.key = key
        self.line = line


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    case: str
    dim: int
    box: tuple[tuple[float, ...], tuple[float, ...]]
    cells: tuple[int, ...]
    params: PhysicalParams
    B_mode: str
    tau: float
    end_time: float
    bdf_order: int = 2
    cadence: int = 100
    out_dir: str = "out"
    solvers: dict = field(default_factory=dict)
    bubble_center: tuple[float, ...] = (0.5, 0.5)
    bubble_radius: float = 0.25
    Pe: float | None = None
    steady_tol: float = 0.0
    write_fields: bool = True
    checkpoint_every: int = 0
    initial: dict = field(default_factory=dict)
    entries: dict = field(default_factory=dict, compare=False)

    @property
    def n_steps(self) -> int:
        return int(round(self.end_time / self.tau))

    def mesh(self) -> StructuredMesh:
        return build_mesh(self.dim, self.box, self.cells)


# -- parsing ----------------------------------------------------------------

def _split_vec(text):
    text = text.strip().strip("()[]")
    return [t for t in (s.strip() for s in text.replace(";", ",").split(",")) if t]


def _convert(kind, raw, key, line):
    try:
        if kind == "str":
            return raw.strip()
        if kind == "int":
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if kind == "float":
            if raw.strip().lower() in ("none", ""):
                return None
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind == "vec":
            return tuple(float(t) for t in _split_vec(raw))
        if kind == "ivec":
            out = []
            for t in _split_vec(raw):
                v = float(t)
                if v != int(v):
                    raise ValueError
                out.append(int(v))
            return tuple(out)
    except ValueError:
        raise ConfigError(f"malformed {kind} value {raw.strip()!r}", key, line) from None
    raise AssertionError(kind)


def _read_entries(text, source):
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value' in {source}", None, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", None, lineno)
        if key in entries:
            raise ConfigError(f"duplicate key (first set on line {entries[key][1]})",
                              key, lineno)
        entries[key] = (value, lineno)
    return entries


def parse_config(text: str, overrides=()) -> RunConfig:
    """Parse and validate a run configuration.

    ``overrides`` is a sequence of ``"key=value"`` strings applied after the
    text; an override may replace any key, including one set in ``text``.
    """
    entries = _read_entries(text, "config")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        entries[key] = (value, None)

    values = {}
    lines = {}
    for key, (raw, lineno) in entries.items():
        if key not in DEFAULTS:
            raise ConfigError("unknown key", key, lineno)
        kind = DEFAULTS[key][0]
        values[key] = _convert(kind, raw, key, lineno)
        lines[key] = lineno
    for key, (kind, default) in DEFAULTS.items():
        if key not in values:
            if default is None and key not in _OPTIONAL_NONE:
                raise ConfigError("missing required key", key)
            values[key] = default

    def fail(msg, key):
        raise ConfigError(msg, key, lines.get(key))

    dim = values["mesh.dim"]
    if dim not in (2, 3):
        fail(f"dim must be 2 or 3, got {dim}", "mesh.dim")
    box = []
    for key in ("mesh.box_min", "mesh.box_max"):
        v = values[key]
        if len(v) == 1:
            v = v * dim
        if len(v) != dim:
            fail(f"expected {dim} components, got {len(v)}", key)
        box.append(tuple(v))
    cells = values["mesh.cells"]
    if len(cells) == 1:
        cells = cells * dim
    if len(cells) != dim:
        fail(f"expected {dim} components, got {len(cells)}", "mesh.cells")
    try:
        build_mesh(dim, tuple(box), cells)
    except MeshError as exc:
        key = "mesh.cells" if "cells" in str(exc) else "mesh.box_max"
        fail(str(exc), key)

    B = values["physics.B"]
    if len(B) == 1 and B[0] == 0.0:
        B = (0.0, 0.0, 0.0)
    if len(B) == 2:
        B = B + (0.0,)
    if len(B) != 3:
        fail("field must have 1 (zero), 2 or 3 components", "physics.B")
    kwargs = {name: values[f"physics.{name}"] for name in PHYSICS_KEYS}
    try:
        params = PhysicalParams(B_vec=B, **kwargs)
    except InvalidParameterError as exc:
        msg = str(exc)
        key = next((f"physics.{n}" for n in sorted(PHYSICS_KEYS, key=len, reverse=True)
                    if msg.startswith(n)), "physics")
        if "u_ref" in msg:
            key = "physics.u_ref"
        fail(msg, key)

    mode = values["physics.B_mode"]
    if mode not in MAGNETIC_MODES:
        fail(f"unknown mode {mode!r}; choose from {MAGNETIC_MODES}", "physics.B_mode")
    if mode == "full-3d" and dim != 3:
        fail("full-3d needs mesh.dim = 3", "physics.B_mode")
    if mode in ("in-plane", "out-of-plane") and dim != 2:
        fail(f"{mode} needs mesh.dim = 2", "physics.B_mode")
    if values["physics.Pe"] is not None and not values["physics.Pe"] > 0:
        fail("must be positive", "physics.Pe")

    tau, end = values["time.tau"], values["time.end"]
    if not (tau is not None and tau > 0 and math.isfinite(tau)):
        fail("must be positive", "time.tau")
    if not (end is not None and end > 0 and math.isfinite(end)):
        fail("must be positive", "time.end")
    if values["time.bdf_order"] not in (1, 2):
        fail("must be 1 or 2", "time.bdf_order")
    if not values["time.steady_tol"] >= 0:
        fail("must be non-negative", "time.steady_tol")
    if values["output.cadence"] < 1:
        fail("must be at least 1", "output.cadence")
    if values["output.checkpoint_every"] < 0:
        fail("must be non-negative", "output.checkpoint_every")

    solvers = {}
    for step in DEFAULT_SOLVERS:
        base = DEFAULT_SOLVERS[step]
        method = values[f"solver.{step}.method"]
        precond = values[f"solver.{step}.precond"]
        if method not in METHODS:
            fail(f"unknown method {method!r}", f"solver.{step}.method")
        if precond not in PRECONDITIONERS:
            fail(f"unknown preconditioner {precond!r}", f"solver.{step}.precond")
        try:
            solvers[step] = SolveSpec(
                method=method, rtol=values[f"solver.{step}.tol"],
                atol=values[f"solver.{step}.atol"],
                maxiter=values[f"solver.{step}.maxiter"], preconditioner=precond,
                zero_mean=base.zero_mean, restart=base.restart)
        except ValueError as exc:
            fail(str(exc), f"solver.{step}.tol")

    center = values["bubble.center"]
    if len(center) != dim:
        fail(f"expected {dim} components, got {len(center)}", "bubble.center")
    if not values["bubble.radius"] > 0:
        fail("must be positive", "bubble.radius")
    kind = values["initial.kind"]
    if kind not in INITIAL_KINDS:
        fail(f"unknown kind {kind!r}; choose from {INITIAL_KINDS}", "initial.kind")
    if not 0 <= values["initial.axis"] < dim:
        fail("axis out of range", "initial.axis")
    if not values["initial.width"] > 0:
        fail("must be positive", "initial.width")
    if kind == "checkpoint" and not values["initial.path"]:
        fail("checkpoint start needs initial.path", "initial.path")

    return RunConfig(
        case=values["case"], dim=dim, box=tuple(box), cells=tuple(cells),
        params=params, B_mode=mode, tau=tau, end_time=end,
        bdf_order=values["time.bdf_order"], cadence=values["output.cadence"],
        out_dir=values["output.dir"], solvers=solvers,
        bubble_center=tuple(center), bubble_radius=values["bubble.radius"],
        Pe=values["physics.Pe"], steady_tol=values["time.steady_tol"],
        write_fields=values["output.fields"],
        checkpoint_every=values["output.checkpoint_every"],
        initial={"kind": kind, "axis": values["initial.axis"],
                 "offset": values["initial.offset"], "width": values["initial.width"],
                 "value": values["initial.value"], "path": values["initial.path"]},
        entries={k: values[k] for k in DEFAULTS},
    )


def format_config(cfg: RunConfig) -> str:
    """Canonical ``key = value`` listing of every resolved key."""
    out = []
    for key in DEFAULTS:
        v = cfg.entries.get(key)
        if v is None:
            text = "none"
        elif isinstance(v, tuple):
            text = ", ".join(repr(x) for x in v)
        else:
            text = repr(v) if isinstance(v, float) else str(v)
        out.append(f"{key} = {text}")
    return "\n".join(out) + "\n"


# -- field output ------------------------------------------------------------

def _fmt(x) -> str:
    return "%.9g" % x


def write_fields(state: SimState, mesh: StructuredMesh, path) -> None:
    """Legacy VTK ASCII structured grid; 2D meshes become a z-extent-0 grid."""
    n = mesh.n_nodes
    coords = np.zeros((n, 3))
    coords[:, :mesh.dim] = mesh.coordinates
    u = np.zeros((n, 3))
    u[:, :mesh.dim] = state.u
    dims = list(mesh.nodes_per_axis) + [1] * (3 - mesh.dim)
    lines = [
        VTK_HEADER,
        f"phasemhd step {state.n} time {_fmt(state.t)}",
        "ASCII",
        "DATASET STRUCTURED_GRID",
        "DIMENSIONS %d %d %d" % tuple(dims),
        f"POINTS {n} double",
    ]
    lines += [" ".join(_fmt(c) for c in row) for row in coords]
    lines.append(f"POINT_DATA {n}")
    for name in ("phi", "mu", "p", "V"):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in getattr(state, name)]
    for name, data in (("u", u), ("J", state.J)):
        lines.append(f"VECTORS {name} double")
        lines += [" ".join(_fmt(c) for c in row) for row in data]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_fields(path) -> dict:
    """Read a file written by :func:`write_fields` into a dict of arrays."""
    with open(path, encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    if not tokens or tokens[0] != VTK_HEADER:
        raise ValueError(f"{path}: not a legacy VTK file")
    out = {"title": tokens[1]}
    i = 4
    dims = tuple(int(v) for v in tokens[i].split()[1:])
    out["dimensions"] = dims
    n = int(np.prod(dims))
    i += 2
    out["points"] = np.array([row.split() for row in tokens[i:i + n]], dtype=float)
    i += n + 1
    while i < len(tokens) and tokens[i]:
        head = tokens[i].split()
        if head[0] == "SCALARS":
            out[head[1]] = np.array(tokens[i + 2:i + 2 + n], dtype=float)
            i += 2 + n
        elif head[0] == "VECTORS":
            out[head[1]] = np.array([r.split() for r in tokens[i + 1:i + 1 + n]], dtype=float)
            i += 1 + n
        else:
            raise ValueError(f"{path}: unexpected section {head[0]!r}")
    return out


# -- time series ---------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def format_timeseries_row(rec: TimeSeriesRecord) -> str:
    return ",".join(_cell(v) for v in rec.values())


def write_timeseries(records, path) -> None:
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(TIMESERIES_HEADER + "\n")
        for rec in records:
            fh.write(format_timeseries_row(rec) + "\n")


def read_timeseries(path) -> list[TimeSeriesRecord]:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != TIMESERIES_HEADER:
            raise ValueError(f"{path}: unexpected header")
        kinds = [int if f.type in ("int", int) else float for f in dc_fields(TimeSeriesRecord)]
        out = []
        for row in fh:
            cells = row.strip().split(",")
            out.append(TimeSeriesRecord(*(k(c) for k, c in zip(kinds, cells))))
    return out


# -- checkpoint ----------------------------------------------------------------

def checkpoint(state: SimState, path, mesh: StructuredMesh | None = None) -> None:
    """Store ``state`` (all history levels) as an uncompressed npz archive."""
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "n": np.array(state.n), "t": np.array(state.t, dtype=np.float64),
        "order": np.array(state.order), "mass0": np.array(state.mass0, dtype=np.float64),
        "iterations": np.array([state.iterations[k] for k in ("ch", "mom", "p", "v")]),
        "dim": np.array(state.u.shape[1]), "n_nodes": np.array(state.phi.size),
    }
    if mesh is not None:
        arrays["cells"] = np.array(mesh.cells_per_axis)
        arrays["box"] = np.array([mesh.box_min, mesh.box_max])
    for name in SimState.FIELDS:
        value = getattr(state, name)
        if value is not None:
            arrays[name] = np.asarray(value)
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def restore(path, mesh: StructuredMesh | None = None) -> SimState:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
        data = dict(np.load(_io.BytesIO(raw), allow_pickle=False))
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "version" not in data or int(data["version"]) != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version")
    if mesh is not None:
        if int(data["dim"]) != mesh.dim:
            raise CheckpointError(f"{path}: checkpoint is {int(data['dim'])}D, mesh is {mesh.dim}D")
        if int(data["n_nodes"]) != mesh.n_nodes or (
                "cells" in data and tuple(data["cells"]) != tuple(mesh.cells_per_axis)):
            raise CheckpointError(f"{path}: checkpoint resolution does not match the mesh")
    its = data["iterations"]
    kwargs = {name: data.get(name) for name in SimState.FIELDS}
    return SimState(
        n=int(data["n"]), t=float(data["t"]), order=int(data["order"]),
        mass0=float(data["mass0"]),
        iterations={k: int(v) for k, v in zip(("ch", "mom", "p", "v"), its)},
        **kwargs,
    )
