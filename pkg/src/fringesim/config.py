"""Scenario files: TOML with a unit suffix on every physical quantity.

Quantities are strings such as ``"190 mL/h"`` or ``"0.9 mm"``; plain
numbers are accepted only for dimensionless entries. Unknown tables or
keys, wrong units and violated invariants raise :class:`ConfigError` with
the file name and the line of the offending entry.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path

import tomli
import tomli_w

from .constitutive import FluidParams, MediumParams, VanGenuchtenParams
from .coupling import Diffusivities, InitialCondition, PortFlow, Scenario, Stage
from .grid import Port
from .inverse import ColumnExperiment, adhesion_from_cells, c_max_cells
from .reaction import CELL_MASS, AdhesionParams, GrowthParams
from .twophase import TwoPhaseConfig


class ConfigError(ValueError):
    def __init__(self, msg, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + msg)
        self.path = path
        self.line = line


# -- units -------------------------------------------------------------------------
# unit -> (dimension, factor to SI)
UNITS = {
    "m": ("length", 1.0), "cm": ("length", 1e-2), "mm": ("length", 1e-3), "um": ("length", 1e-6),
    "s": ("time", 1.0), "min": ("time", 60.0), "h": ("time", 3600.0), "d": ("time", 86400.0),
    "1/s": ("rate", 1.0), "1/min": ("rate", 1 / 60.0), "1/h": ("rate", 1 / 3600.0), "1/d": ("rate", 1 / 86400.0),
    "m/s": ("velocity", 1.0), "m/h": ("velocity", 1 / 3600.0), "m/d": ("velocity", 1 / 86400.0),
    "cm/s": ("velocity", 1e-2),
    "m3/s": ("flow", 1.0), "mL/h": ("flow", 1e-6 / 3600.0), "mL/min": ("flow", 1e-6 / 60.0),
    "L/h": ("flow", 1e-3 / 3600.0),
    "kg/m3": ("concentration", 1.0), "g/L": ("concentration", 1.0), "mg/L": ("concentration", 1e-3),
    "ug/L": ("concentration", 1e-6), "g/cm3": ("concentration", 1e3),
    "cells/mL": ("concentration", CELL_MASS * 1e3),  # biomass only, via the cell dry weight
    "Pa": ("pressure", 1.0), "hPa": ("pressure", 100.0), "kPa": ("pressure", 1e3), "bar": ("pressure", 1e5),
    "1/Pa": ("inverse_pressure", 1.0), "1/kPa": ("inverse_pressure", 1e-3),
    "m2": ("area", 1.0), "cm2": ("area", 1e-4),
    "m2/s": ("diffusivity", 1.0), "cm2/s": ("diffusivity", 1e-4),
    "Pa s": ("viscosity", 1.0), "mPa s": ("viscosity", 1e-3),
    "K": ("temperature", 1.0),
    "m/s2": ("acceleration", 1.0),
    "L/(h g)": ("specific_volume_rate", 1e-3 / 3600.0 / 1e-3),
    "J/(mol K)": ("gas_constant", 1.0),
}
_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def parse_quantity(value, dimension: str | None, unit_out: str | None = None) -> float:
    """Convert ``"<number> <unit>"`` to the unit ``unit_out`` (SI if omitted).

    ``dimension=None`` marks a dimensionless entry, given as a plain number.
    """
    if dimension is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"expected a plain number, got {value!r}")
        return float(value)
    if isinstance(value, bool) or not isinstance(value, str):
        raise ValueError(f"expected a quantity string with a unit ({dimension}), got {value!r}")
    m = _QTY.match(value)
    if not m or not m.group(2):
        raise ValueError(f"cannot read {value!r} as '<number> <unit>'")
    unit = m.group(2)
    if unit == "C" and dimension == "temperature":
        si = float(m.group(1)) + 273.15
    else:
        if unit not in UNITS:
            raise ValueError(f"unknown unit {unit!r} in {value!r}")
        dim, fac = UNITS[unit]
        if dim != dimension:
            raise ValueError(f"unit {unit!r} is a {dim}, expected a {dimension}")
        if unit == unit_out:
            return float(m.group(1))  # no detour through SI, keeps round trips exact
        si = float(m.group(1)) * fac
    if unit_out is None:
        return si
    return si / UNITS[unit_out][1]


def format_quantity(value: float, unit: str) -> str:
    return f"{float(value)!r} {unit}"


# -- field schemas: key -> (dataclass field, dimension, unit of the stored value) ------
MEDIUM = {"porosity": ("phi", None, None), "permeability": ("K", "area", "m2"),
          "grain_radius": ("r_p", "length", "m"), "kappa_exposed": ("kappa_exposed", None, None)}
FLUID = {"liquid_density": ("rho_l", "concentration", "kg/m3"), "liquid_viscosity": ("mu_l", "viscosity", "Pa s"),
         "gas_viscosity": ("mu_g", "viscosity", "Pa s"), "temperature": ("T", "temperature", "K"),
         "gas_constant": ("R_gas", "gas_constant", "J/(mol K)"), "gravity": ("g", "acceleration", "m/s2"),
         "henry": ("k_H", None, None)}
VG = {"alpha": ("alpha", "inverse_pressure", "1/Pa"), "n": ("n", None, None), "s_l_min": ("s_l_min", None, None)}
GROWTH = {"mu_max_a": ("mu_max_a", "rate", "1/h"), "mu_max_an": ("mu_max_an", "rate", "1/h"),
          "decay": ("d_c", "rate", "1/h"), "B_S_a": ("B_S_a", None, None), "B_S_an": ("B_S_an", None, None),
          "B_O2": ("B_O2", None, None), "Y_S_a": ("Y_S_a", None, None), "Y_S_an": ("Y_S_an", None, None),
          "Y_O2": ("Y_O2", None, None), "maintenance": ("m_o", "specific_volume_rate", "L/(h g)")}
ADHESION = {"k_att": ("k_att", "rate", "1/s"), "k_det": ("k_det", "rate", "1/s"),
            "c_max": ("c_s_X_max", "concentration", "kg/m3")}
DIFFUSION = {"l_S": ("l_S", "diffusivity", "m2/s"), "l_O2": ("l_O2", "diffusivity", "m2/s"),
             "l_X": ("l_X", "diffusivity", "m2/s"), "g_O2": ("g_O2", "diffusivity", "m2/s")}
INITIAL = {"s_l": ("s_l", None, None), "p_top": ("p_top", "pressure", "Pa"), "x_O2": ("x_O2", None, None),
           "c_l_S": ("c_l_S", "concentration", "kg/m3"), "c_l_X": ("c_l_X", "concentration", "kg/m3"),
           "c_s_X": ("c_s_X", "concentration", "kg/m3"), "c_l_O2": ("c_l_O2", "concentration", "kg/m3")}
FLOW = {"dt_init": ("dt_init", "time", "s"), "dt_max": ("dt_max", "time", "s"), "dt_min": ("dt_min", "time", "s"),
        "newton_tol": ("newton_tol", None, None), "newton_tol_gas": ("newton_tol_gas", None, None),
        "newton_max_iter": ("newton_max_iter", "int", None), "max_sat_change": ("max_sat_change", None, None),
        "linear_tol": ("linear_tol", None, None), "linear_max_iter": ("linear_max_iter", "int", None),
        "linear_solver": ("linear_solver", "str", None), "direct_max_unknowns": ("direct_max_unknowns", "int", None),
        "easy_iters": ("easy_iters", "int", None), "growth": ("growth", None, None),
        "s_g_floor": ("s_g_floor", None, None), "gas_scale_floor": ("gas_scale_floor", None, None),
        "upwind_smoothing": ("upwind_smoothing", "pressure", "Pa"),
        "max_dpg": ("max_dpg", "pressure", "Pa"), "divergence_factor": ("divergence_factor", None, None)}
SOLVER = {"cfl": ("cfl", None, None), "reaction_rtol": ("reaction_rtol", None, None),
          "reaction_atol": ("reaction_atol", None, None), "reaction_pool_rate": ("reaction_pool_rate", "rate", "1/s"),
          "threads": ("threads", "int", None)}
SPECIES_KEYS = {"S": "l_S", "O2": "l_O2", "X": "l_X"}
COLUMN = {"length": ("length", "length", "m"), "diameter": ("diameter", "length", "m"),
          "pore_velocity": ("pore_velocity", "velocity", "m/s"), "c_in": ("c_in", "concentration", "cells/mL"),
          "pulse_duration": ("pulse_duration", "time", "s"), "porosity": ("porosity", None, None)}


@dataclass(frozen=True)
class ColumnScenario:
    """Breakthrough experiment plus the settings of a synthetic or measured fit."""

    name: str = "column"
    experiment: ColumnExperiment = ColumnExperiment()
    true_params: AdhesionParams = AdhesionParams()
    start_factor: float = 3.0
    rel_noise: float = 0.02
    seed: int = 0
    n_cells: int = 512
    pore_volumes: float = 10.0
    n_samples: int = 200

    def __post_init__(self):
        if self.n_cells < 2 or self.n_samples < 2:
            raise ValueError("n_cells and n_samples must be at least 2")
        if not (self.start_factor > 0 and self.rel_noise >= 0 and self.pore_volumes > 0):
            raise ValueError("invalid synthetic-fit settings")


# -- reading -------------------------------------------------------------------------
class _Locator:
    """Maps a key path to the line it was written on."""

    _header = re.compile(r"^\s*(\[\[?)\s*([A-Za-z0-9_.\-\s\"]+?)\s*\]\]?\s*(#.*)?$")
    _key = re.compile(r"^\s*([A-Za-z0-9_\-\"]+)\s*=")

    def __init__(self, text: str):
        self.lines: dict[tuple, int] = {}
        counters: dict[str, int] = {}
        table: tuple = ()
        for no, line in enumerate(text.splitlines(), start=1):
            h = self._header.match(line)
            if h:
                name = h.group(2).replace('"', "").replace(" ", "")
                if h.group(1) == "[[":
                    idx = counters.get(name, -1) + 1
                    counters[name] = idx
                    # reset counters of nested arrays
                    for k in list(counters):
                        if k.startswith(name + "."):
                            del counters[k]
                    table = self._path(name, counters)
                else:
                    table = self._path(name, counters)
                self.lines.setdefault(table, no)
                continue
            k = self._key.match(line)
            if k:
                self.lines.setdefault(table + (k.group(1).strip('"'),), no)

    @staticmethod
    def _path(name: str, counters: dict) -> tuple:
        parts = name.split(".")
        out: list = []
        for i, p in enumerate(parts):
            out.append(p)
            prefix = ".".join(parts[: i + 1])
            if prefix in counters:
                out.append(counters[prefix])
        return tuple(out)

    def line(self, path: tuple) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return None


class _Reader:
    def __init__(self, text: str, source):
        self.source = source
        self.loc = _Locator(text)
        try:
            self.data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(f"TOML syntax error: {exc}", source, int(m.group(1)) if m else None) from None

    def error(self, msg, path: tuple):
        return ConfigError(f"{'.'.join(str(p) for p in path)}: {msg}", self.source, self.loc.line(path))

    def table(self, data, path: tuple, allowed) -> dict:
        if not isinstance(data, dict):
            raise self.error("expected a table", path)
        for k in data:
            if k not in allowed:
                raise self.error(f"unknown key {k!r} (allowed: {', '.join(sorted(allowed))})", path + (k,))
        return data

    def value(self, data, key, spec, path):
        _, dim, unit = spec
        v = data[key]
        try:
            if dim == "int":
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ValueError(f"expected an integer, got {v!r}")
                return v
            if dim == "str":
                if not isinstance(v, str):
                    raise ValueError(f"expected a string, got {v!r}")
                return v
            return parse_quantity(v, dim, unit)
        except ValueError as exc:
            raise self.error(str(exc), path + (key,)) from None

    def params(self, cls, base, data, schema, path):
        if data is None:
            return base
        self.table(data, path, schema)
        kw = {schema[k][0]: self.value(data, k, schema[k], path) for k in data}
        try:
            return replace(base, **kw) if base is not None else cls(**kw)
        except (ValueError, TypeError) as exc:
            raise self.error(str(exc), path) from None


TOP_KEYS = {"kind", "name", "grid", "ports", "medium", "fluid", "van_genuchten", "growth", "adhesion", "diffusion",
            "initial", "stages", "output", "flow_solver", "solver", "column", "fit"}


def loads(text: str, source="<string>"):
    """Parse scenario text; returns a :class:`Scenario` or :class:`ColumnScenario`."""
    r = _Reader(text, source)
    d = r.table(r.data, (), TOP_KEYS)
    kind = d.get("kind", "chamber")
    if kind == "column":
        return _column(r, d)
    if kind != "chamber":
        raise r.error(f"unknown scenario kind {kind!r} (chamber or column)", ("kind",))
    kw = {}
    if "name" in d:
        kw["name"] = str(d["name"])
    g = d.get("grid")
    if g is not None:
        r.table(g, ("grid",), {"extent", "resolution", "thickness"})
        if "extent" in g:
            ext = g["extent"]
            if not (isinstance(ext, list) and len(ext) == 2):
                raise r.error("extent must be [width, height]", ("grid", "extent"))
            try:
                kw["extent"] = tuple(parse_quantity(e, "length") for e in ext)
            except ValueError as exc:
                raise r.error(str(exc), ("grid", "extent")) from None
        if "resolution" in g:
            res = g["resolution"]
            if not (isinstance(res, list) and len(res) == 2 and all(isinstance(v, int) and v > 0 for v in res)):
                raise r.error("resolution must be two positive integers [nx, ny]", ("grid", "resolution"))
            kw["resolution"] = tuple(res)
        if "thickness" in g:
            kw["thickness"] = r.value(g, "thickness", (None, "length", "m"), ("grid",))
    if "ports" in d:
        ports = []
        for i, p in enumerate(d["ports"]):
            path = ("ports", i)
            r.table(p, path, {"name", "side", "position", "group"})
            for req in ("name", "side", "position"):
                if req not in p:
                    raise r.error(f"missing key {req!r}", path)
            try:
                ports.append(Port(str(p["name"]), str(p["side"]), r.value(p, "position", (None, "length", "m"), path),
                                  str(p.get("group", ""))))
            except ValueError as exc:
                raise r.error(str(exc), path) from None
        kw["ports"] = tuple(ports)
    kw["medium"] = r.params(MediumParams, MediumParams(), d.get("medium"), MEDIUM, ("medium",))
    kw["fluid"] = r.params(FluidParams, FluidParams(), d.get("fluid"), FLUID, ("fluid",))
    kw["vg"] = r.params(VanGenuchtenParams, VanGenuchtenParams(), d.get("van_genuchten"), VG, ("van_genuchten",))
    kw["growth"] = r.params(GrowthParams, GrowthParams(), d.get("growth"), GROWTH, ("growth",))
    kw["adhesion"] = r.params(AdhesionParams, AdhesionParams(), d.get("adhesion"), ADHESION, ("adhesion",))
    kw["diffusion"] = r.params(Diffusivities, Diffusivities(), d.get("diffusion"), DIFFUSION, ("diffusion",))
    init = d.get("initial")
    if init is not None:
        kw["initial"] = r.params(InitialCondition, InitialCondition(), init, INITIAL, ("initial",))
    kw["flow"] = r.params(TwoPhaseConfig, TwoPhaseConfig(), d.get("flow_solver"), FLOW, ("flow_solver",))
    sol = d.get("solver")
    if sol is not None:
        r.table(sol, ("solver",), SOLVER)
        for k in sol:
            kw[SOLVER[k][0]] = r.value(sol, k, SOLVER[k], ("solver",))
    stages = []
    for i, s in enumerate(d.get("stages", [])):
        path = ("stages", i)
        r.table(s, path, {"name", "duration", "description", "flows"})
        if "name" not in s or "duration" not in s:
            raise r.error("a stage needs 'name' and 'duration'", path)
        flows = []
        for j, f in enumerate(s.get("flows", [])):
            fp = path + ("flows", j)
            r.table(f, fp, {"target", "rate", *SPECIES_KEYS})
            if "target" not in f or "rate" not in f:
                raise r.error("a flow needs 'target' and 'rate'", fp)
            comp = tuple((SPECIES_KEYS[k], r.value(f, k, (None, "concentration", "kg/m3"), fp))
                         for k in SPECIES_KEYS if k in f)
            flows.append(PortFlow(str(f["target"]), r.value(f, "rate", (None, "flow", "m3/s"), fp), comp))
        try:
            stages.append(Stage(str(s["name"]), r.value(s, "duration", (None, "time", "s"), path), tuple(flows),
                                str(s.get("description", ""))))
        except ValueError as exc:
            raise r.error(str(exc), path) from None
    kw["stages"] = tuple(stages)
    out = d.get("output")
    if out is not None:
        r.table(out, ("output",), {"times", "profile_cuts"})
        try:
            kw["output_times"] = tuple(parse_quantity(t, "time") for t in out.get("times", []))
        except ValueError as exc:
            raise r.error(str(exc), ("output", "times")) from None
        try:
            kw["profile_cuts"] = tuple(parse_quantity(x, "length") for x in out.get("profile_cuts", []))
        except ValueError as exc:
            raise r.error(str(exc), ("output", "profile_cuts")) from None
    try:
        sc = Scenario(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), source) from None
    _check_targets(sc, r)
    return sc


def _check_targets(sc: Scenario, r: _Reader):
    names = {p.name for p in sc.ports} | {p.group for p in sc.ports if p.group}
    names |= {"left", "right", "bottom", "top"}
    for i, st in enumerate(sc.stages):
        for j, f in enumerate(st.flows):
            if f.target not in names:
                raise r.error(f"flow target {f.target!r} names no port, port group or side",
                              ("stages", i, "flows", j, "target"))
    L = sc.extent
    for c in sc.profile_cuts:
        if not 0 <= c <= L[0]:
            raise r.error(f"profile cut at {c} m lies outside the domain", ("output", "profile_cuts"))
    try:
        sc.build_grid()
    except (ValueError, KeyError) as exc:
        raise r.error(str(exc), ("ports",)) from None


def _column(r: _Reader, d: dict) -> ColumnScenario:
    r.table(d, (), {"kind", "name", "column", "adhesion", "fit"})
    kw = {}
    if "name" in d:
        kw["name"] = str(d["name"])
    col = d.get("column")
    exp = ColumnExperiment()
    if col is not None:
        allowed = set(COLUMN) | {"times", "data"}
        r.table(col, ("column",), allowed)
        ekw = {COLUMN[k][0]: r.value(col, k, COLUMN[k], ("column",)) for k in col if k in COLUMN}
        if "times" in col:
            try:
                ekw["times"] = tuple(parse_quantity(t, "time") for t in col["times"])
            except ValueError as exc:
                raise r.error(str(exc), ("column", "times")) from None
        if "data" in col:
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in col["data"]):
                raise r.error("data must be numbers in cells/mL", ("column", "data"))
            ekw["c_out"] = tuple(float(v) for v in col["data"])
        try:
            exp = ColumnExperiment(**ekw)
        except ValueError as exc:
            raise r.error(str(exc), ("column",)) from None
    kw["experiment"] = exp
    kw["true_params"] = r.params(AdhesionParams, AdhesionParams(), d.get("adhesion"), ADHESION, ("adhesion",))
    fit = d.get("fit")
    if fit is not None:
        spec = {"start_factor": None, "rel_noise": None, "seed": "int", "n_cells": "int", "pore_volumes": None,
                "n_samples": "int"}
        r.table(fit, ("fit",), spec)
        for k, dim in spec.items():
            if k in fit:
                kw[k] = r.value(fit, k, (k, dim, None), ("fit",))
    try:
        return ColumnScenario(**kw)
    except ValueError as exc:
        raise r.error(str(exc), ("fit",)) from None


def load(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}", path)
    return loads(path.read_text(), path)


# -- writing ---------------------------------------------------------------------------
def _dump_params(obj, schema) -> dict:
    out = {}
    for key, (attr, dim, unit) in schema.items():
        v = getattr(obj, attr)
        if v is None:
            continue
        if dim in ("int", "str"):
            out[key] = v
        elif dim is None:
            out[key] = float(v)
        else:
            out[key] = format_quantity(v, unit)
    return out


def to_dict(sc) -> dict:
    if isinstance(sc, ColumnScenario):
        e = sc.experiment
        col = _dump_params(e, COLUMN)
        col["c_in"] = format_quantity(e.c_in, "cells/mL")
        if e.times:
            col["times"] = [format_quantity(t, "s") for t in e.times]
        if e.c_out is not None:
            col["data"] = [float(v) for v in e.c_out]
        return {"kind": "column", "name": sc.name, "column": col,
                "adhesion": _dump_params(sc.true_params, ADHESION),
                "fit": {"start_factor": float(sc.start_factor), "rel_noise": float(sc.rel_noise), "seed": sc.seed,
                        "n_cells": sc.n_cells, "pore_volumes": float(sc.pore_volumes), "n_samples": sc.n_samples}}
    d = {
        "kind": "chamber", "name": sc.name,
        "grid": {"extent": [format_quantity(v, "m") for v in sc.extent], "resolution": list(sc.resolution),
                 "thickness": format_quantity(sc.thickness, "m")},
        "ports": [{"name": p.name, "side": p.side, "position": format_quantity(p.position, "m"), "group": p.group}
                  for p in sc.ports],
        "medium": _dump_params(sc.medium, MEDIUM), "fluid": _dump_params(sc.fluid, FLUID),
        "van_genuchten": _dump_params(sc.vg, VG), "growth": _dump_params(sc.growth, GROWTH),
        "adhesion": _dump_params(sc.adhesion, ADHESION), "diffusion": _dump_params(sc.diffusion, DIFFUSION),
        "initial": _dump_params(sc.initial, INITIAL), "flow_solver": _dump_params(sc.flow, FLOW),
        "solver": _dump_params(sc, SOLVER),
        "stages": [],
        "output": {"times": [format_quantity(t, "s") for t in sc.output_times],
                   "profile_cuts": [format_quantity(x, "m") for x in sc.profile_cuts]},
    }
    inv = {v: k for k, v in SPECIES_KEYS.items()}
    for st in sc.stages:
        flows = []
        for f in st.flows:
            fd = {"target": f.target, "rate": format_quantity(f.rate, "m3/s")}
            for sp, val in f.composition:
                fd[inv[sp]] = format_quantity(val, "kg/m3")
            flows.append(fd)
        sd = {"name": st.name, "duration": format_quantity(st.duration, "s"), "description": st.description}
        if flows:
            sd["flows"] = flows
        d["stages"].append(sd)
    if not d["ports"]:
        del d["ports"]
    if not d["stages"]:
        del d["stages"]
    return d


def dumps(sc) -> str:
    return tomli_w.dumps(to_dict(sc))


def dump(sc, path) -> Path:
    path = Path(path)
    path.write_text(dumps(sc))
    return path


# -- bundled scenarios ------------------------------------------------------------------
SCENARIO_DIR = Path(__file__).with_name("scenarios")
BUNDLED = ("chamber_full", "chamber_noflow", "chamber_nodoc", "column_breakthrough")


def resolve_scenario(name_or_path) -> Path:
    """A bundled scenario name or a path to a scenario file."""
    p = Path(name_or_path)
    if str(name_or_path) in BUNDLED:
        return SCENARIO_DIR / f"{name_or_path}.toml"
    return p


def column_start(sc: ColumnScenario) -> AdhesionParams:
    t = sc.true_params
    f = sc.start_factor
    return adhesion_from_cells(f * t.k_att, f * t.k_det, f * c_max_cells(t))

