import csv
import dataclasses
import subprocess
import sys

import numpy as np
import pytest

from fringesim.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, emit_profiles, main
from fringesim.config import dump, load, resolve_scenario
from fringesim.grid import build_grid, write_snapshot
from fringesim.twophase import TwoPhaseConfig


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as info:
        main(["run", "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert "--grid" in out and "--t-end" in out and "default 0.4" in out


def test_validate_bundled(capsys):
    assert main(["validate", "--scenario", "chamber_full"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "98x64" in out and "horizontal" in out


def test_missing_scenario_file(tmp_path, capsys):
    missing = tmp_path / "absent.toml"
    assert main(["validate", "--scenario", str(missing)]) == EXIT_CONFIG
    assert str(missing) in capsys.readouterr().err


def test_bad_key_and_unit(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('name = "x"\n[medium]\npermeability = "3 m"\n')
    assert main(["validate", "--scenario", str(p)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "bad.toml:3" in err
    assert main(["validate", "--scenario", "chamber_full", "--grid", "98by64"]) == EXIT_CONFIG


def test_run_short_chamber(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--scenario", "chamber_noflow", "--grid", "50x32", "--t-end", "20 min",
                 "--output", str(out)])
    assert code == EXIT_OK
    assert (out / "snapshots" / "t_0.dat").is_file()
    assert (out / "snapshots" / "t_1200.dat").is_file()
    for f in ("report.csv", "steps.csv", "profile_x25.csv", "scenario.toml"):
        assert (out / f).is_file(), f
    with (out / "steps.csv").open() as fh:
        assert next(csv.reader(fh)) == ["t", "dt", "newton_iters", "max_dsat", "mass_balance_error"]
    with (out / "profile_x25.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "y", "s_l", "X_t", "X_l", "c_S", "c_l_O2", "c_g_O2"]
    assert len(rows) == 2 + 2 * 32
    sc = load(out / "scenario.toml")
    assert sc.resolution == (50, 32) and sc.t_end == 1200.0


def test_solver_failure_exit_code(tmp_path):
    sc = load(resolve_scenario("chamber_noflow"))
    sc = dataclasses.replace(sc, resolution=(50, 32), flow=TwoPhaseConfig(dt_init=1.0, dt_min=0.5, max_sat_change=1e-6))
    p = dump(sc, tmp_path / "fail.toml")
    assert main(["run", "--scenario", str(p), "--output", str(tmp_path / "o")]) == EXIT_SOLVER
    assert (tmp_path / "o" / "report.csv").is_file()


def test_column_run_and_invert(tmp_path):
    assert main(["run", "--scenario", "column_breakthrough", "--output", str(tmp_path / "r")]) == EXIT_OK
    assert (tmp_path / "r" / "breakthrough.csv").is_file()
    assert main(["invert", "--scenario", "column_breakthrough", "--output", str(tmp_path / "i")]) == EXIT_OK
    text = (tmp_path / "i" / "fit.txt").read_text()
    assert "k_att" in text and "converged = true" in text
    # feeding the synthetic curve back as measured data
    assert main(["invert", "--scenario", "column_breakthrough", "--data", str(tmp_path / "r" / "breakthrough.csv"),
                 "--output", str(tmp_path / "j")]) == EXIT_OK
    assert main(["invert", "--scenario", "chamber_full"]) == EXIT_CONFIG


def test_emit_profiles_uniform_and_bounds(tmp_path):
    g = build_grid((0.5, 0.3), (10, 6))
    n = g.n_cells
    fields = {k: (np.full(n, v), "-") for k, v in
              [("s_l", 0.5), ("X_t", 1e8), ("X_l", 2e7), ("c_l_S", 0.1), ("c_l_O2", 9e-3), ("c_g_O2", 0.27)]}
    snap = write_snapshot(tmp_path / "t_60.dat", g, fields, 60.0)
    prof = emit_profiles(snap, 0.25, tmp_path / "p.csv")
    assert prof["y"].size == 6
    for k in ("s_l", "X_t", "X_l", "c_S", "c_l_O2", "c_g_O2"):
        assert np.all(prof[k] == prof[k][0])
    assert (tmp_path / "p.csv").read_text().splitlines()[2].startswith("60,")
    with pytest.raises(ValueError):
        emit_profiles(snap, 0.7)


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "fringesim.cli", "validate", "--scenario", "column_breakthrough"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "column" in res.stdout
