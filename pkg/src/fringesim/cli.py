"""``fringe-sim`` command line: run, invert and validate scenarios.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import re
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import BUNDLED, ColumnScenario, ConfigError, column_start, dump, load, parse_quantity, resolve_scenario
from .coupling import Scenario, SimulationError, run_scenario
from .grid import read_snapshot
from .inverse import (InversionError, breakthrough_forward, default_sampling, fit_adhesion, read_breakthrough_csv,
                      synthetic_experiment, write_fit)

log = logging.getLogger("fringesim")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
PROFILE_COLUMNS = ("t", "y", "s_l", "X_t", "X_l", "c_S", "c_l_O2", "c_g_O2")


# -- profiles ---------------------------------------------------------------------------
def snapshot_time(path) -> float:
    with Path(path).open() as fh:
        m = re.search(r"t = ([-+0-9.eE]+) s", fh.readline())
    if not m:
        raise ValueError(f"{path}: no time stamp in the snapshot header")
    return float(m.group(1))


def emit_profiles(snapshot, x_cut: float, path=None) -> dict:
    """Vertical profile through the cell column nearest to ``x_cut`` [m].

    ``snapshot`` is a snapshot file or the dict returned by ``read_snapshot``.
    Biomass is returned in cells/mL of porous medium, the solutes in kg/m^3.
    With ``path`` the profile is also written as CSV.
    """
    f = read_snapshot(snapshot) if not isinstance(snapshot, dict) else snapshot
    x, y = f["x"], f["y"]
    xs = np.unique(x)
    dx = xs[1] - xs[0] if xs.size > 1 else 1.0
    if not (xs[0] - 0.5 * dx - 1e-12 <= x_cut <= xs[-1] + 0.5 * dx + 1e-12):
        raise ValueError(f"cut x = {x_cut} m lies outside the domain")
    col = xs[np.argmin(np.abs(xs - x_cut))]
    sel = np.flatnonzero(np.isclose(x, col, rtol=0, atol=1e-12 + 1e-9 * abs(col)))
    sel = sel[np.argsort(y[sel])]
    prof = {"y": y[sel], "s_l": f["s_l"][sel], "X_t": f["X_t"][sel], "X_l": f["X_l"][sel],
            "c_S": f["c_l_S"][sel], "c_l_O2": f["c_l_O2"][sel], "c_g_O2": f["c_g_O2"][sel]}
    if path is not None:
        t = snapshot_time(snapshot) if not isinstance(snapshot, dict) else float("nan")
        write_profiles([(t, prof)], path)
    return prof


def write_profiles(profiles, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_COLUMNS)
        w.writerow(["s", "m", "-", "cells/mL", "cells/mL", "kg/m3", "kg/m3", "kg/m3"])
        for t, p in profiles:
            for i in range(p["y"].size):
                w.writerow([f"{t:.6g}"] + [f"{p[k][i]:.8e}" for k in PROFILE_COLUMNS[1:]])
    return path


def profile_name(x_cut: float) -> str:
    return f"profile_x{x_cut * 100:g}.csv"


# -- scenario overrides -----------------------------------------------------------------
def truncate(sc: Scenario, t_end: float) -> Scenario:
    """Drop or shorten stages beyond ``t_end`` seconds; the end time becomes an output time."""
    stages, t = [], 0.0
    for st in sc.stages:
        if t >= t_end:
            break
        stages.append(replace(st, duration=min(st.duration, t_end - t)))
        t += st.duration
    t_stop = min(t, t_end) if stages else 0.0
    outs = sorted({x for x in sc.output_times if x <= t_stop} | ({t_stop} if t_stop > 0 else set()))
    return replace(sc, stages=tuple(stages), output_times=tuple(outs))


def apply_overrides(sc, args) -> object:
    if isinstance(sc, ColumnScenario):
        return sc
    kw = {}
    if args.grid:
        m = re.fullmatch(r"(\d+)[xX](\d+)", args.grid)
        if not m or int(m.group(1)) < 1 or int(m.group(2)) < 1:
            raise ConfigError(f"--grid expects NXxNY, got {args.grid!r}")
        kw["resolution"] = (int(m.group(1)), int(m.group(2)))
    if args.cfl is not None:
        kw["cfl"] = args.cfl
    if args.threads is not None:
        kw["threads"] = args.threads
    if args.reaction_rtol is not None:
        kw["reaction_rtol"] = args.reaction_rtol
    if args.newton_tol is not None:
        kw["flow"] = replace(sc.flow, newton_tol=args.newton_tol)
    try:
        sc = replace(sc, **kw)
        if args.t_end:
            sc = truncate(sc, parse_duration(args.t_end))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return sc


def parse_duration(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    try:
        v = parse_quantity(text, "time")
    except ValueError as exc:
        raise ConfigError(f"--t-end: {exc}") from None
    if not v > 0:
        raise ConfigError("--t-end must be positive")
    return v


def load_scenario(args):
    if not args.scenario:
        raise ConfigError("--scenario is required (a file or one of: " + ", ".join(BUNDLED) + ")")
    path = resolve_scenario(args.scenario)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    return apply_overrides(load(path), args)


# -- subcommands --------------------------------------------------------------------
def output_dir(args, sc) -> Path:
    out = Path(args.output) if args.output else Path("fringe_out") / sc.name
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def cmd_validate(args) -> int:
    sc = load_scenario(args)
    if isinstance(sc, ColumnScenario):
        e = sc.experiment
        print(f"{sc.name}: column L={e.length} m, pore velocity={e.pore_velocity * 86400:g} m/d, "
              f"c_in={e.c_in:g} cells/mL, {len(e.times)} samples")
        return EXIT_OK
    g = sc.build_grid()
    print(f"{sc.name}: grid {g.nx}x{g.ny}, {len(sc.ports)} ports, {len(sc.stages)} stages, "
          f"t_end={sc.t_end / 86400:g} d, {len(sc.output_times)} output times")
    for st in sc.stages:
        print(f"  {st.name}: {st.duration / 3600:g} h, {len(st.flows)} flows")
    return EXIT_OK


def _column_experiment(sc: ColumnScenario, data_path=None):
    e = sc.experiment
    if data_path is not None:
        t, c = read_breakthrough_csv(data_path)
        return replace(e, times=tuple(t), c_out=tuple(c)), True
    if not e.times:
        e = replace(e, times=default_sampling(e, sc.pore_volumes, sc.n_samples))
    return e, e.c_out is not None


def cmd_run(args) -> int:
    sc = load_scenario(args)
    out = output_dir(args, sc)
    dump(sc, out / "scenario.toml")
    if isinstance(sc, ColumnScenario):
        e, _ = _column_experiment(sc)
        c = breakthrough_forward(sc.true_params, e, sc.n_cells)
        with (out / "breakthrough.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_seconds", "c_out"])
            w.writerows([[f"{t:.10g}", f"{v:.10g}"] for t, v in zip(e.times, c)])
        print(f"wrote {out / 'breakthrough.csv'}")
        return EXIT_OK
    t0 = time.time()
    try:
        report = run_scenario(sc, out)
    except SimulationError as exc:
        log.error("%s", exc)
        _profiles(sc, out)
        return EXIT_SOLVER
    paths = _profiles(sc, out)
    print(f"{sc.name}: {report.steps} steps in {time.time() - t0:.1f} s; "
          f"{len(report.snapshots)} snapshots, profiles: {', '.join(p.name for p in paths)}")
    return EXIT_OK


def _profiles(sc: Scenario, out: Path) -> list:
    snaps = sorted((out / "snapshots").glob("t_*.dat"), key=snapshot_time)
    paths = []
    for x in sc.profile_cuts:
        profs = [(snapshot_time(s), emit_profiles(s, x)) for s in snaps]
        paths.append(write_profiles(profs, out / profile_name(x)))
    return paths


def cmd_invert(args) -> int:
    sc = load_scenario(args)
    if not isinstance(sc, ColumnScenario):
        raise ConfigError("invert needs a column scenario (kind = \"column\")")
    out = output_dir(args, sc)
    e, measured = _column_experiment(sc, args.data)
    if not measured:
        e = synthetic_experiment(sc.true_params, e, sc.rel_noise, sc.seed, sc.n_cells)
        print(f"no measured data: synthetic curve with {sc.rel_noise:.0%} noise, seed {sc.seed}")
    try:
        result = fit_adhesion(e, column_start(sc), rel_noise=max(sc.rel_noise, 1e-3), n_cells=sc.n_cells)
    except InversionError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    fit_txt, curve = write_fit(result, e, out, sc.n_cells)
    k_att, k_det, c_max = result.params
    print(f"k_att={k_att:.4g} 1/s  k_det={k_det:.4g} 1/s  c_max={c_max:.4g} cells/mL  "
          f"({result.iterations} iterations, {result.message})")
    print(f"wrote {fit_txt} and {curve}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fringe-sim", description="Capillary-fringe bioreactive transport simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", help="scenario file, or a bundled name: " + ", ".join(BUNDLED))
        sp.add_argument("--output", help="output directory (default: fringe_out/<scenario name>)")
        sp.add_argument("--grid", help="override the resolution, e.g. 98x64 or 392x256")
        sp.add_argument("--t-end", help="stop after this time, e.g. '36 h' or seconds")
        sp.add_argument("--cfl", type=float, help="transport CFL number (default 0.4)")
        sp.add_argument("--threads", type=int, help="threads for the reaction step (default 1)")
        sp.add_argument("--reaction-rtol", type=float, help="RKF45 relative tolerance (default 1e-6)")
        sp.add_argument("--newton-tol", type=float, help="flow Newton tolerance (default 1e-8)")
        sp.add_argument("-v", "--verbose", action="store_true", help="log stage progress")

    common(sub.add_parser("run", help="simulate a scenario and write snapshots, report.csv, steps.csv, profiles"))
    inv = sub.add_parser("invert", help="fit adhesion parameters to a breakthrough curve")
    common(inv)
    inv.add_argument("--data", help="breakthrough CSV with columns t_seconds, c_out (cells/mL)")
    common(sub.add_parser("validate", help="parse and check a scenario without simulating"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = {"run": cmd_run, "invert": cmd_invert, "validate": cmd_validate}[args.command]
    try:
        return cmd(args)
    except ConfigError as exc:
        print(f"fringe-sim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"fringe-sim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

