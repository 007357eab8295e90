"""Command-line front end.

Exit codes: 0 success, 1 invalid structure or controller, 2 usage or I/O
error, 3 settle did not converge, 4 the simulation diverged.

Every command that writes files also writes a run manifest (``<output>.manifest.yaml``)
after everything else, listing the effective configuration and every file
written. ``validate`` prints its manifest to standard output.
"""

from __future__ import annotations

import argparse
import csv
import sys
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import lab
from .control import ControllerProgram, check_program, load_program
from .dynamics import (
    DEFAULT_DT,
    DivergenceError,
    Halfspace,
    Obstacle,
    SimConfig,
    SimulationError,
    Sphere,
    WorldState,
    initial_state,
    read_cable,
    settle,
)
from .gallery import BUILTINS, ArmInfo
from .model import StructureDef
from .topology_io import ParseFailure, fmt, load_structure, serialize_structure

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_UNSETTLED, EXIT_DIVERGED = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # running from a source tree
        return "unknown"


# --------------------------------------------------------------------------
# helpers


def _info_for(structure: StructureDef) -> Optional[ArmInfo]:
    for name, (_, info) in BUILTINS.items():
        if structure.name == name:
            return info
    return None


def _load(path: str) -> StructureDef:
    try:
        return load_structure(path)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read {path}: {exc.strerror or exc}") from None
    except ParseFailure as exc:
        raise CliError(EXIT_INVALID, f"{path}:\n" + "\n".join(f"{path}:{e}" for e in exc.errors)) from None


def parse_obstacle(text: str, stiffness: float = 1e5, damping: float = 50.0) -> Obstacle:
    """``sphere:cx,cy,cz,r`` or ``halfspace:nx,ny,nz,offset``."""
    kind, sep, rest = text.partition(":")
    try:
        values = [float(v) for v in rest.split(",")] if sep else []
    except ValueError:
        values = []
    try:
        if kind == "sphere" and len(values) == 4:
            return Obstacle(Sphere(tuple(values[:3]), values[3]), stiffness, damping)
        if kind == "halfspace" and len(values) == 4:
            return Obstacle(Halfspace(tuple(values[:3]), values[3]), stiffness, damping)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"bad obstacle {text!r}: {exc}") from None
    raise CliError(EXIT_USAGE, f"bad obstacle {text!r}; use sphere:cx,cy,cz,r or halfspace:nx,ny,nz,offset")


def _markers(structure: StructureDef, info: Optional[ArmInfo], text: Optional[str]) -> tuple:
    if text:
        try:
            markers = tuple(lab.parse_marker(m.strip()) for m in text.split(",") if m.strip())
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc)) from None
    elif info is not None:
        markers = (info.end_effector,)
    else:
        raise CliError(EXIT_USAGE, "--markers is required for structures that are not built-in models")
    for b, n in markers:
        try:
            body = structure.body(b)
        except KeyError:
            body = None
        if body is None or not body.has_node(n):
            raise CliError(EXIT_USAGE, f"unresolved marker {b}.{n}")
    return markers


def _config(args, obstacles=()) -> SimConfig:
    try:
        return SimConfig(dt=args.dt, obstacles=tuple(obstacles))
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None


def _settle(structure: StructureDef, config: SimConfig, tol: float, max_time: float) -> WorldState:
    w, ok = settle(structure, initial_state(structure), config, tol=tol, max_time=max_time)
    if not ok:
        raise CliError(EXIT_UNSETTLED, f"settle did not converge to {tol:g} m/s within {max_time:g} s")
    return w.at_rest()


def _program(args, structure: StructureDef, info: Optional[ArmInfo], settled: WorldState) -> ControllerProgram:
    if args.controller and args.preset:
        raise CliError(EXIT_USAGE, "give either --controller or --preset, not both")
    if args.controller:
        try:
            program = load_program(args.controller)
        except OSError as exc:
            raise CliError(EXIT_USAGE, f"cannot read {args.controller}: {exc.strerror or exc}") from None
        except ParseFailure as exc:
            raise CliError(EXIT_INVALID, "\n".join(f"{args.controller}:{e}" for e in exc.errors)) from None
    elif args.preset:
        if info is None:
            raise CliError(EXIT_USAGE, "presets exist only for the built-in models")
        try:
            program = lab.preset_program(structure, info, args.preset, settled.commanded_lengths)
        except KeyError as exc:
            raise CliError(EXIT_USAGE, str(exc.args[0])) from None
    else:
        program = lab.hold_program(structure, settled.commanded_lengths)
    try:
        check_program(program, structure)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, f"controller does not fit the structure: {exc}") from None
    return program


def write_csv(path: Path, traj: lab.TrajectoryRecord) -> None:
    header = ["t"] + [f"{lab.marker_name(m)}_{ax}" for m in traj.markers for ax in "xyz"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        flat = traj.positions.reshape(len(traj.times), -1)
        for t, row in zip(traj.times, flat):
            w.writerow([fmt(t)] + [fmt(v) for v in row])


def _clean(obj):
    """Plain python values for the YAML writer (floats at 9 significant digits)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj))
    return obj


def write_document(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(_clean(doc), fh, sort_keys=False, default_flow_style=None, width=100)


class Outputs:
    """Tracks written files so the manifest can list them."""

    def __init__(self, command: str, argv: Sequence[str]):
        self.command = command
        self.argv = list(argv)
        self.inputs: list[str] = []
        self.files: list[str] = []
        self.config: dict = {}

    def add(self, path: Path) -> Path:
        self.files.append(str(path))
        return path

    def manifest(self) -> dict:
        return {
            "manifest": {
                "command": self.command,
                "argv": self.argv,
                "artifact_version": _version(),
                "inputs": self.inputs,
                "config": self.config,
                "outputs": self.files,
            }
        }

    def write_manifest(self, path: Path) -> None:
        doc = self.manifest()
        doc["manifest"]["manifest_file"] = str(path)
        write_document(path, doc)


def _mkdir_for(path: Path) -> None:
    if not path.parent.exists():
        raise CliError(EXIT_USAGE, f"directory {path.parent} does not exist")


# --------------------------------------------------------------------------
# commands


def cmd_builtin(args, out: Outputs) -> int:
    build, _ = BUILTINS[args.name]
    path = Path(args.out)
    _mkdir_for(path)
    try:
        path.write_text(serialize_structure(build()), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot write {path}: {exc.strerror or exc}") from None
    out.add(path)
    out.config = {"name": args.name}
    out.write_manifest(Path(str(path) + ".manifest.yaml"))
    return EXIT_OK


def cmd_validate(args, out: Outputs) -> int:
    out.inputs.append(args.path)
    s = _load(args.path)
    print(f"OK {s.name}: {len(s.bodies)} bodies, {len(s.cables)} cables")
    sys.stdout.write(yaml.safe_dump(out.manifest(), sort_keys=False))
    return EXIT_OK


def state_document(structure: StructureDef, w: WorldState, converged: bool) -> dict:
    active = {c.id: i for i, c in enumerate(structure.active_cables)}
    bodies = {}
    for i, b in enumerate(structure.bodies):
        bodies[b.name] = {
            "position": w.positions[i], "orientation": w.orientations[i],
            "velocity": w.velocities[i], "angular_velocity": w.angular_velocities[i],
        }
    cables = {}
    for c in structure.cables:
        r = read_cable(c, structure, w)
        entry = {"length": r.length, "tension": r.tension}
        if c.id in active:
            entry["commanded_length"] = w.commanded_lengths[active[c.id]]
            entry["commanded_rate"] = w.commanded_rates[active[c.id]]
        cables[c.id] = entry
    return {"state": {"structure": structure.name, "time": w.time, "converged": converged},
            "bodies": bodies, "cables": cables}


def cmd_settle(args, out: Outputs) -> int:
    out.inputs.append(args.path)
    s = _load(args.path)
    config = _config(args)
    out.config = {"dt": config.dt, "tol": args.tol, "max_time": args.max_time}
    path = Path(args.out) if args.out else None
    if path:
        _mkdir_for(path)
    w, ok = settle(s, initial_state(s), config, tol=args.tol, max_time=args.max_time)
    print(f"{'converged' if ok else 'not converged'} at t={w.time:.6g} s")
    if path:
        write_document(out.add(path), state_document(s, w, ok))
        out.write_manifest(Path(str(path) + ".manifest.yaml"))
    return EXIT_OK if ok else EXIT_UNSETTLED


def _sweep_summary(traj: lab.TrajectoryRecord) -> dict:
    doc = {}
    for j, m in enumerate(traj.markers):
        p = traj.positions[:, j, :]
        doc[lab.marker_name(m)] = {
            "max_displacement_m": float(np.linalg.norm(p - p[0], axis=1).max()),
            "range_m": np.ptp(p, axis=0),
        }
    return doc


def cmd_simulate(args, out: Outputs) -> int:
    out.inputs.append(args.path)
    if args.controller:
        out.inputs.append(args.controller)
    s = _load(args.path)
    info = _info_for(s)
    obstacles = [parse_obstacle(o) for o in args.obstacle]
    markers = _markers(s, info, args.markers)
    path = Path(args.out)
    _mkdir_for(path)
    config = _config(args, obstacles)
    out.config = {"dt": config.dt, "duration": args.duration, "sample": args.sample,
                  "settle_max_time": args.max_time, "obstacles": args.obstacle, "preset": args.preset}
    settled = _settle(s, _config(args), 1e-4, args.max_time)
    program = _program(args, s, info, settled)
    try:
        traj = lab.track(s, settled, program, markers, args.duration, args.sample, config)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    write_csv(out.add(path), traj)
    report = Path(args.report) if args.report else Path(str(path) + ".report.yaml")
    write_document(out.add(report), {"simulate": {
        "structure": s.name, "samples": len(traj), "sample_period_s": traj.sample_period,
        "contact": bool(traj.contact is not None and traj.contact.any()),
        "sweep": _sweep_summary(traj),
    }})
    out.write_manifest(Path(str(path) + ".manifest.yaml"))
    return EXIT_OK


def _rom_doc(r: lab.RangeOfMotionReport) -> dict:
    return {"unit": r.unit, "min": r.minimum, "max": r.maximum, "sweep": r.sweep,
            "transient_discarded": r.transient_fraction}


def _default_plane(preset: Optional[str]) -> str:
    if preset == "shoulder-yaw":
        return "xy"
    if preset == "elbow-yaw":
        return "xz"
    return "yz"


def _pivot_for(info: Optional[ArmInfo], preset: Optional[str]):
    if info is None or preset is None:
        return None
    if preset.startswith("shoulder") and info.shoulder_markers:
        return info.shoulder_markers[0]
    return info.elbow_markers[0]


def cmd_experiment(args, out: Outputs) -> int:
    out.inputs.append(args.path)
    if args.controller:
        out.inputs.append(args.controller)
    s = _load(args.path)
    info = _info_for(s)
    prefix = Path(args.out)
    _mkdir_for(prefix)
    markers = _markers(s, info, args.markers)
    motions = []
    if info is not None:
        motions = [m for m in lab.motions_for(info).values() if args.preset and m.preset == args.preset]
    config = _config(args)
    out.config = {"kind": args.kind, "dt": config.dt, "duration": args.duration, "sample": args.sample,
                  "settle_max_time": args.max_time, "preset": args.preset,
                  "preset_period_s": lab.PRESET_PERIOD, "preset_amplitude_fraction": lab.PRESET_AMPLITUDE}
    report: dict = {}

    if args.kind == "repeatability":
        seeds = [int(v) for v in args.seeds.split(",")] if args.seeds else list(range(args.runs))
        if len(seeds) < 2:
            raise CliError(EXIT_USAGE, "repeatability needs at least two runs")
        out.config.update({"seeds": seeds, "noise": args.noise})
        if not motions:
            raise CliError(EXIT_USAGE, "repeatability needs --preset on a built-in model")
        settled = _settle(s, config, 1e-4, args.max_time)
        program = _program(args, s, info, settled)
        try:
            reports = lab.repeatability(s, program, motions, seeds=seeds, magnitude=args.noise, config=config,
                                        duration=args.duration, sample_period=args.sample,
                                        settle_time=args.max_time)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc)) from None
        report["repeatability"] = {
            r.motion: {"unit": r.unit, "seeds": list(r.seeds), "noise": r.magnitude,
                       "runs": [None if v is None else float(v) for v in r.runs],
                       "mean": r.mean, "std_dev": r.std_dev, "sample_std_dev": r.sample_std_dev,
                       "failures": {str(k): v for k, v in r.failures.items()},
                       "unsettled_seeds": list(r.unsettled), "flagged": r.flagged}
            for r in reports
        }
    else:
        settled = _settle(s, config, 1e-4, args.max_time)
        program = _program(args, s, info, settled)
        track_markers = tuple(dict.fromkeys(list(markers) + [m for dof in motions for m in dof.markers]))
        if args.kind == "workspace":
            traj = lab.track(s, settled, program, track_markers, args.duration, args.sample, config)
            write_csv(out.add(Path(f"{prefix}.trajectory.csv")), traj)
            plane = args.plane or _default_plane(args.preset)
            pivot = _pivot_for(info, args.preset)
            if pivot is not None and pivot not in traj.markers:
                pivot = None
            ws = lab.workspace_summary(traj, markers[0], plane, pivot)
            report["workspace"] = {
                "marker": lab.marker_name(markers[0]), "plane": ws.plane,
                "pivot": lab.marker_name(pivot) if pivot else "centroid",
                "area_m2": ws.area, "angular_extent_deg": ws.angular_extent, "samples": ws.samples,
                "range_of_motion": {m.name: _rom_doc(m.measure(traj)) for m in motions},
            }
        else:  # compliance
            if not args.obstacle:
                raise CliError(EXIT_USAGE, "compliance needs --obstacle")
            obstacle = parse_obstacle(args.obstacle[0])
            out.config["obstacles"] = args.obstacle[:1]
            r = lab.compliance_experiment(s, settled, program, obstacle, track_markers,
                                          args.duration, args.sample, config)
            write_csv(out.add(Path(f"{prefix}.free.csv")), r.free_trajectory)
            write_csv(out.add(Path(f"{prefix}.obstructed.csv")), r.obstructed_trajectory)
            report["compliance"] = {
                "max_deviation_m": r.max_deviation,
                "contact_interval_s": list(r.contact_interval) if r.contact_interval else None,
                "recovery_error_m": r.recovery_error,
                "recovery_window_fraction": r.recovery_fraction,
                "recovered": r.recovered, "note": r.note,
            }
    write_document(out.add(Path(f"{prefix}.report.yaml")), report)
    out.write_manifest(Path(f"{prefix}.manifest.yaml"))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tensarm", description="Tensegrity arm simulator and experiment harness.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("builtin", help="write a built-in structure file")
    b.add_argument("name", choices=sorted(BUILTINS))
    b.add_argument("-o", "--out", required=True)
    b.set_defaults(func=cmd_builtin)

    v = sub.add_parser("validate", help="check a structure file")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate)

    def sim_flags(q, duration=True):
        q.add_argument("--dt", type=float, default=DEFAULT_DT)
        q.add_argument("--max-time", type=float, default=60.0, help="settle time limit (s)")
        if duration:
            q.add_argument("--duration", type=float, default=lab.DEFAULT_DURATION)
            q.add_argument("--sample", type=float, default=lab.DEFAULT_SAMPLE_PERIOD)
            q.add_argument("--markers", help="comma separated body.node list")
            q.add_argument("--controller")
            q.add_argument("--preset")
            q.add_argument("--obstacle", action="append", default=[])

    st = sub.add_parser("settle", help="relax a structure to equilibrium")
    st.add_argument("path")
    st.add_argument("--tol", type=float, default=1e-4)
    st.add_argument("--out")
    sim_flags(st, duration=False)
    st.set_defaults(func=cmd_settle)

    sm = sub.add_parser("simulate", help="settle, then run a controller and record markers")
    sm.add_argument("path")
    sm.add_argument("--out", required=True, help="trajectory CSV")
    sm.add_argument("--report")
    sim_flags(sm)
    sm.set_defaults(func=cmd_simulate)

    ex = sub.add_parser("experiment", help="workspace, compliance or repeatability experiment")
    ex.add_argument("kind", choices=["workspace", "compliance", "repeatability"])
    ex.add_argument("path")
    ex.add_argument("--out", required=True, help="output prefix")
    ex.add_argument("--runs", type=int, default=3)
    ex.add_argument("--seeds")
    ex.add_argument("--noise", type=float, default=0.0)
    ex.add_argument("--plane", choices=sorted(lab.PLANES))
    sim_flags(ex)
    ex.set_defaults(func=cmd_experiment)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Outputs(args.command, argv)
    try:
        return args.func(args, out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
