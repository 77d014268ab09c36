"""Batch command-line front end.

Every invocation runs exactly one command against a scenario file and writes
its outputs into a directory.  Scenarios are JSON with a `version` field and
explicit natural units (`"units": "c=1"`); trajectories and separation
families can be given inline or as file references resolved relative to the
scenario file.  Reports are CSV with a fixed header per command and floats
printed to 17 significant digits, so reruns of the same scenario are
byte-identical.

Exit codes: 0 on success, 1 for any scenario or domain failure (with a single
diagnostic line on stderr), 2 for an unknown command.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .action import action
from .core import (
    BoundaryData,
    ParticleParams,
    PiecewiseTrajectory,
    hermite_trajectory,
    load_trajectory,
    polygonal_from_vertices,
    save_trajectory,
    trajectory_from_dict,
    vec3,
)
from .errors import ConfigError, WfvarError
from .farfield import GUARD_BAND, gah_residual, latlong_mesh, sphere_flux
from .optimizer import MinimizerReport, _primary_view, discretize, minimize, verify
from .shortrange import (
    SeparationFamilyParams,
    _fibonacci_sphere,
    construct_partner,
    load_family,
    params_from_dict,
    sewing_chain,
)

SCENARIO_VERSION = 1


@dataclass(frozen=True)
class Scenario:
    """Parsed scenario file plus the directory its file refs resolve against."""

    particles: tuple
    traj1: PiecewiseTrajectory | None
    traj2: PiecewiseTrajectory | None
    family: SeparationFamilyParams | None
    boundary: BoundaryData | None
    kappa: float | None
    options: dict
    base_dir: Path


@dataclass(frozen=True)
class ReportTable:
    """Generic CSV payload: a fixed header and value rows."""

    header: tuple
    rows: tuple


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def emit_report(report, path) -> None:
    """Write a report as CSV; floats round-trip at 17 significant digits."""
    if isinstance(report, MinimizerReport):
        table = ReportTable(
            ("quantity", "value"),
            (
                ("action", report.action),
                ("max_el", report.max_el),
                ("max_break", report.max_break),
                ("iterations", report.iterations),
                ("converged", int(report.converged)),
            ),
        )
    elif isinstance(report, ReportTable):
        table = report
    else:
        raise ConfigError(f"cannot serialize report of type {type(report).__name__}")
    lines = [",".join(table.header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in table.rows)
    Path(path).write_text("\n".join(lines) + "\n")


# -- scenario loading ---------------------------------------------------------

def _traj_from_record(record, particle: ParticleParams) -> PiecewiseTrajectory:
    if not isinstance(record, dict):
        raise ConfigError("inline trajectory must be a JSON object")
    try:
        if "segments" in record:
            d = dict(record)
            d.setdefault("particle", {"mass": particle.mass, "charge": particle.charge})
            raw = trajectory_from_dict(d)
            return PiecewiseTrajectory(raw.segments, particle)
        kind = record.get("kind")
        if kind == "polygonal":
            verts = [(float(v[0]), vec3(v[1:4])) for v in record["vertices"]]
            return polygonal_from_vertices(verts, particle)
        if kind == "hermite":
            return hermite_trajectory(
                record["times"], record["positions"], record["velocities"], particle
            )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed trajectory record: {exc}") from exc
    raise ConfigError(f"unknown trajectory kind {record.get('kind')!r}")


def _load_traj(data: dict, idx: int, particle: ParticleParams,
               base: Path) -> PiecewiseTrajectory | None:
    inline = data.get(f"trajectory{idx}")
    ref = data.get(f"trajectory{idx}_file")
    if inline is not None and ref is not None:
        raise ConfigError(
            f"trajectory{idx} given both inline and as a file reference"
        )
    if ref is not None:
        raw = load_trajectory(base / ref)
        return PiecewiseTrajectory(raw.segments, particle)
    if inline is None:
        return None
    return _traj_from_record(inline, particle)


def _load_family_params(data: dict, base: Path) -> SeparationFamilyParams | None:
    inline = data.get("family")
    ref = data.get("family_file")
    if inline is not None and ref is not None:
        raise ConfigError("family given both inline and as a file reference")
    if ref is not None:
        return load_family(base / ref)
    if inline is None:
        return None
    return params_from_dict(inline)


def load_scenario(path) -> Scenario:
    path = Path(path)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    version = data.get("version")
    if version != SCENARIO_VERSION:
        raise ConfigError(
            f"scenario version must be {SCENARIO_VERSION}, got {version!r}"
        )
    if data.get("units") != "c=1":
        raise ConfigError('scenario must declare "units": "c=1"')
    raw_particles = data.get("particles")
    if not isinstance(raw_particles, list) or len(raw_particles) != 2:
        raise ConfigError("scenario needs a list of exactly two particles")
    try:
        particles = tuple(
            ParticleParams(float(p["mass"]), float(p["charge"]))
            for p in raw_particles
        )
        kappa = data.get("kappa")
        kappa = None if kappa is None else float(kappa)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed particle or kappa entry: {exc}") from exc
    options = data.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("options must be a JSON object")
    base = path.resolve().parent
    traj1 = _load_traj(data, 1, particles[0], base)
    traj2 = _load_traj(data, 2, particles[1], base)

    boundary = None
    raw_b = data.get("boundary")
    if raw_b is not None:
        try:
            window2 = raw_b.get("window2")
            if window2 is not None:
                window2 = (float(window2[0]), float(window2[1]))
            boundary = BoundaryData(
                float(raw_b["start_time"]),
                float(raw_b["end_time"]),
                history1=traj1,
                history2=traj2,
                k2=float(raw_b.get("k2", 0.0)),
                window2=window2,
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed boundary block: {exc}") from exc
    return Scenario(
        particles=particles,
        traj1=traj1,
        traj2=traj2,
        family=_load_family_params(data, base),
        boundary=boundary,
        kappa=kappa,
        options=options,
        base_dir=base,
    )


def _require(scen: Scenario, *, traj1=False, traj2=False, boundary=False,
             family=False) -> None:
    missing = []
    if traj1 and scen.traj1 is None:
        missing.append("trajectory1")
    if traj2 and scen.traj2 is None:
        missing.append("trajectory2")
    if boundary and scen.boundary is None:
        missing.append("boundary")
    if family and scen.family is None:
        missing.append("family")
    if missing:
        raise ConfigError(f"scenario is missing {', '.join(missing)}")


def _scan_times(options: dict) -> list:
    if "times" in options and "time_range" in options:
        raise ConfigError("give either times or time_range, not both")
    if "times" in options:
        return [float(t) for t in options["times"]]
    if "time_range" in options:
        try:
            a, b, count = options["time_range"]
        except (TypeError, ValueError) as exc:
            raise ConfigError("time_range must be [start, stop, count]") from exc
        count = int(count)
        if count < 0:
            raise ConfigError("time_range count must be >= 0")
        return [float(t) for t in np.linspace(float(a), float(b), count)]
    raise ConfigError("scan options need times or time_range")


def _directions(value, default_count: int) -> np.ndarray:
    if value is None:
        return _fibonacci_sphere(default_count)
    if isinstance(value, int):
        if value < 1:
            raise ConfigError("directions count must be positive")
        return _fibonacci_sphere(value)
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] == 0:
        raise ConfigError("directions must be a count or a list of 3-vectors")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0.0):
        raise ConfigError("direction vectors must be nonzero")
    return arr / norms[:, None]


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


# -- command handlers ---------------------------------------------------------

def _cmd_action(scen: Scenario, out: Path, tol, quiet: bool) -> None:
    _require(scen, traj1=True, traj2=True, boundary=True)
    w1, b1 = _primary_view(scen.boundary, 1)
    w2, b2 = _primary_view(scen.boundary, 2)
    s1 = action(scen.traj1, scen.traj2, w1, b1, kappa=scen.kappa)
    s2 = action(scen.traj2, scen.traj1, w2, b2, kappa=scen.kappa)
    path = out / "action.csv"
    emit_report(
        ReportTable(
            ("quantity", "value"),
            (("action1", s1), ("action2", s2), ("total", s1 + s2)),
        ),
        path,
    )
    _say(quiet, f"total action {s1 + s2:.12g} -> {path}")


def _cmd_verify(scen: Scenario, out: Path, tol, quiet: bool) -> None:
    _require(scen, traj1=True, traj2=True, boundary=True)
    el_tol = float(tol) if tol is not None else float(scen.options.get("el_tol", 1e-6))
    report = verify(
        scen.traj1,
        scen.traj2,
        scen.boundary,
        n_points=int(scen.options.get("n_points", 9)),
        el_tol=el_tol,
        break_tol=float(scen.options.get("break_tol", 1e-8)),
        kappa=scen.kappa,
    )
    path = out / "verify.csv"
    emit_report(report, path)
    _say(quiet, f"verify: max_el {report.max_el:.3g}, "
                f"max_break {report.max_break:.3g}, "
                f"converged {int(report.converged)} -> {path}")


def _cmd_gah_scan(scen: Scenario, out: Path, tol, quiet: bool) -> None:
    _require(scen, traj1=True, traj2=True)
    times = _scan_times(scen.options)
    dirs = _directions(scen.options.get("directions"), 32)
    guard = float(tol) if tol is not None else float(
        scen.options.get("guard", GUARD_BAND)
    )
    rows = []
    for t in times:
        for n in dirs:
            g = gah_residual(scen.traj1, scen.traj2, t, n, guard=guard)
            if g is None:
                rows.append((t, n[0], n[1], n[2], 0.0, 0.0, 0.0, 0))
            else:
                rows.append((t, n[0], n[1], n[2], g[0], g[1], g[2], 1))
    path = out / "gah_scan.csv"
    emit_report(
        ReportTable(("t", "nx", "ny", "nz", "gx", "gy", "gz", "defined"),
                    tuple(rows)),
        path,
    )
    _say(quiet, f"gah scan: {len(rows)} samples -> {path}")


def _cmd_flux(scen: Scenario, out: Path, tol, quiet: bool) -> None:
    _require(scen, traj1=True)
    times = _scan_times(scen.options)
    try:
        radius = float(scen.options["radius"])
    except KeyError as exc:
        raise ConfigError("flux options need a radius") from exc
    if radius <= 0.0:
        raise ConfigError("flux radius must be positive")
    mesh_opt = scen.options.get("mesh")
    mesh = None
    if mesh_opt is not None:
        try:
            n_theta, n_phi = (int(mesh_opt[0]), int(mesh_opt[1]))
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError("mesh must be [n_theta, n_phi]") from exc
        mesh = latlong_mesh(n_theta, n_phi)
    retarded_only = bool(scen.options.get("retarded_only", False))
    guard = float(tol) if tol is not None else float(
        scen.options.get("guard", GUARD_BAND)
    )
    rows = []
    for t in times:
        value = sphere_flux(scen.traj1, scen.traj2, t, radius, mesh=mesh,
                            retarded_only=retarded_only, guard=guard)
        rows.append((t, radius, value))
    path = out / "flux.csv"
    emit_report(ReportTable(("t", "radius", "flux"), tuple(rows)), path)
    _say(quiet, f"flux: {len(rows)} times at radius {radius:g} -> {path}")


def _cmd_build_polygonal(scen: Scenario, out: Path, tol, quiet: bool) -> None:
    rows = []
    written = []
    for idx in (1, 2):
        verts = scen.options.get(f"vertices{idx}")
        if verts is None:
            continue
        try:
            pairs = [(float(v[0]), vec3(v[1:4])) for v in verts]
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(
                f"vertices{idx} must be rows of [t, x, y, z]"
            ) from exc
        traj = polygonal_from_vertices(pairs, scen.particles[idx - 1])
        traj_path = out / f"trajectory{idx}.json"
        save_trajectory(traj, traj_path)
        written.append(traj_path)
        rows.append((f"max_speed{idx}", traj.max_speed()))
        rows.append((f"segments{idx}", len(traj.segments)))
    if not rows:
        raise ConfigError("build-polygonal needs vertices1 or vertices2")
    path = out / "build.csv"
    emit_report(ReportTable(("quantity", "value"), tuple(rows)), path)
    _say(quiet, f"built {len(written)} polygonal trajectories -> {path}")


def _cmd_construct_partner(scen: Scenario, out: Path, tol, quiet: bool) -> None:
    _require(scen, traj2=True, family=True)
    dirs = _directions(scen.options.get("directions"), 32)
    grid_opt = scen.options.get("t1_grid")
    if grid_opt is None:
        raise ConfigError("construct-partner options need a t1_grid")
    if (isinstance(grid_opt, list) and len(grid_opt) == 3
            and isinstance(grid_opt[2], int)):
        t1_grid = np.linspace(float(grid_opt[0]), float(grid_opt[1]),
                              grid_opt[2])
    else:
        t1_grid = np.asarray([float(t) for t in grid_opt])
    spread_tol = float(tol) if tol is not None else float(
        scen.options.get("spread_tol", 1e-6)
    )
    traj1, report = construct_partner(
        scen.traj2,
        scen.family,
        dirs,
        t1_grid,
        spread_tol=spread_tol,
        particle=scen.particles[0],
        fit=scen.options.get("fit", "auto"),
    )
    traj_path = out / "partner.json"
    save_trajectory(traj1, traj_path)
    rows = tuple(
        (t, x[0], x[1], x[2], s)
        for t, x, s in zip(report.t1_grid, report.positions, report.spreads)
    )
    path = out / "partner.csv"
    emit_report(ReportTable(("t1", "x", "y", "z", "spread"), rows), path)
    _say(quiet, f"partner spread {report.max_spread:.3g} -> {traj_path}")


def _cmd_sewing_chain(scen: Scenario, out: Path, tol, quiet: bool) -> None:
    _require(scen, traj1=True, traj2=True)
    seed_opt = scen.options.get("seed")
    try:
        seed = (int(seed_opt[0]), float(seed_opt[1]))
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError("seed must be [particle, time]") from exc
    chain = sewing_chain(
        scen.traj1,
        scen.traj2,
        seed,
        scen.options.get("direction", "forward"),
        int(scen.options.get("count", 8)),
    )
    rows = tuple(
        (i, particle, t) for i, (particle, t) in enumerate(chain.entries)
    )
    path = out / "chain.csv"
    emit_report(ReportTable(("index", "particle", "time"), rows), path)
    note = " (truncated)" if chain.truncated else ""
    _say(quiet, f"chain of {len(rows)} break times{note} -> {path}")


def _cmd_minimize(scen: Scenario, out: Path, tol, quiet: bool) -> None:
    _require(scen, traj1=True, traj2=True, boundary=True)
    opts = {
        k: scen.options[k]
        for k in ("gtol", "max_iter", "free_break_times", "el_tol", "break_tol")
        if k in scen.options
    }
    if tol is not None:
        opts["gtol"] = float(tol)
    break_times = scen.options.get("break_times")
    if break_times is not None:
        try:
            break_times = ([float(t) for t in break_times[0]],
                           [float(t) for t in break_times[1]])
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(
                "break_times must be two lists, one per particle"
            ) from exc
    init = discretize(
        scen.boundary,
        (scen.traj1, scen.traj2),
        int(scen.options.get("nodes_per_segment", 6)),
        break_times=break_times,
        free_break_times=bool(opts.get("free_break_times", False)),
    )
    traj1, traj2, report = minimize(scen.boundary, init, opts, kappa=scen.kappa)
    save_trajectory(traj1, out / "minimized1.json")
    save_trajectory(traj2, out / "minimized2.json")
    path = out / "minimize.csv"
    emit_report(report, path)
    _say(quiet, f"minimize: action {report.action:.12g}, "
                f"converged {int(report.converged)} -> {path}")


_COMMANDS = {
    "action": _cmd_action,
    "verify": _cmd_verify,
    "gah-scan": _cmd_gah_scan,
    "flux": _cmd_flux,
    "build-polygonal": _cmd_build_polygonal,
    "construct-partner": _cmd_construct_partner,
    "sewing-chain": _cmd_sewing_chain,
    "minimize": _cmd_minimize,
}


def _diagnostic(exc: Exception) -> str:
    name = type(exc).__name__
    if name.endswith("Error"):
        name = name[: -len("Error")]
    words = re.sub(r"(?<!^)(?=[A-Z])", " ", name).lower()
    text = " ".join(str(exc).split())
    return f"error: {words}: {text}"


def run(command: str, scenario_path, out_dir=None, tol=None,
        quiet: bool = False) -> int:
    """Run one command against a scenario file; returns the exit code."""
    handler = _COMMANDS.get(command)
    if handler is None:
        print(
            f"unknown command {command!r}; expected one of "
            + ", ".join(sorted(_COMMANDS)),
            file=sys.stderr,
        )
        return 2
    try:
        scen = load_scenario(scenario_path)
        out = Path(out_dir) if out_dir is not None else Path(scenario_path).resolve().parent
        out.mkdir(parents=True, exist_ok=True)
        handler(scen, out, tol, quiet)
    except WfvarError as exc:
        print(_diagnostic(exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io failure: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wfvar",
        description="Delayed two-body action toolkit (natural units, c=1).",
    )
    parser.add_argument("command",
                        help="one of: " + ", ".join(sorted(_COMMANDS)))
    parser.add_argument("--scenario", required=True,
                        help="path to a scenario JSON file")
    parser.add_argument("--out", default=None,
                        help="output directory (default: scenario directory)")
    parser.add_argument("--tol", type=float, default=None,
                        help="override the command's principal tolerance")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress the stdout summary line")
    args = parser.parse_args(argv)
    return run(args.command, args.scenario, out_dir=args.out, tol=args.tol,
               quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
