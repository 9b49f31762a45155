"""Sequential non-iterative coupling of flow, transport and reaction.

Each accepted flow step of length ``dt`` is followed by CFL-limited
transport substeps of the liquid species, one implicit gas-O2 transport
step and a per-cell reaction integration over the same ``dt``. The
orchestrator runs the stage schedule of a :class:`Scenario`, steps exactly
onto output times and writes snapshots, ``report.csv`` and ``steps.csv``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constitutive import (M_O2, FluidParams, MediumParams, VanGenuchtenParams, effective_diffusion,
                           saturation_from_pc)
from .grid import FieldState, Port, StructuredGrid, build_grid, write_snapshot
from .reaction import (CELL_MASS, DEFAULT_POOL_RATE, AdhesionParams, ExchangeParams, GrowthParams, KineticParams,
                       integrate_bulk, kernel_args)
from .transport import (DEFAULT_CFL, advect_step, cfl_dt, diffuse_step, explicit_diffusion,
                        explicit_diffusion_dt)
from .twophase import (P_ATM, X_O2_AIR, FlowBC, FlowError, FlowProblem, StepLog, TwoPhaseConfig,
                       adaptive_flow_step, hydrostatic_gas_pressure, theta_g_effective)

log = logging.getLogger(__name__)

LIQUID_SPECIES = ("l_S", "l_O2", "l_X")
ALL_SPECIES = ("l_S", "l_O2", "l_X", "g_O2", "s_X")


class SimulationError(RuntimeError):
    """A sub-solver failed; ``report`` holds everything up to the failure."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


def cells_per_ml_to_kg_m3(n_cells, cell_mass: float = CELL_MASS):
    """cells/mL -> kg/m^3 (g/L) of biomass dry weight."""
    return np.asarray(n_cells) * cell_mass * 1e3


def kg_m3_to_cells_per_ml(c, cell_mass: float = CELL_MASS):
    return np.asarray(c) * 1e-3 / cell_mass


def ml_per_h_to_m3_s(q):
    return np.asarray(q) * 1e-6 / 3600.0


def m3_s_to_ml_per_h(q):
    return np.asarray(q) * 3600.0 / 1e-6


# -- scenario ----------------------------------------------------------------
@dataclass(frozen=True)
class PortFlow:
    """Volumetric rate through a port or port group, split evenly over its faces.

    Positive ``rate`` injects [m^3/s]; negative extracts. ``composition``
    gives the injected concentrations [kg/m^3] of ``l_S``, ``l_O2``, ``l_X``.
    """

    target: str
    rate: float
    composition: tuple = ()  # ((species, value), ...)

    def conc(self, species: str) -> float:
        return dict(self.composition).get(species, 0.0)


@dataclass(frozen=True)
class Stage:
    name: str
    duration: float  # s
    flows: tuple = ()
    description: str = ""

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"stage {self.name!r}: duration must be positive")


@dataclass(frozen=True)
class InitialCondition:
    s_l: float = 1e-3
    p_top: float = P_ATM
    x_O2: float = X_O2_AIR
    c_l_S: float = 0.0
    c_l_X: float = 0.0
    c_s_X: float = 0.0  # per solid volume
    # None: liquid O2 in Henry equilibrium with the gas
    c_l_O2: float | None = None


@dataclass(frozen=True)
class Diffusivities:
    l_S: float = 1.9e-10
    l_O2: float = 2.2e-9
    l_X: float = 0.0
    g_O2: float = 1.8e-5


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    extent: tuple = (0.50, 0.30)
    resolution: tuple = (98, 64)
    thickness: float = 0.006
    ports: tuple = ()
    medium: MediumParams = MediumParams()
    fluid: FluidParams = FluidParams()
    vg: VanGenuchtenParams = VanGenuchtenParams()
    growth: GrowthParams = GrowthParams()
    adhesion: AdhesionParams = AdhesionParams()
    diffusion: Diffusivities = Diffusivities()
    initial: InitialCondition = InitialCondition()
    stages: tuple = ()
    output_times: tuple = ()
    flow: TwoPhaseConfig = TwoPhaseConfig()
    cfl: float = DEFAULT_CFL
    reaction_rtol: float = 1e-6
    reaction_atol: float = 1e-12
    reaction_pool_rate: float | None = DEFAULT_POOL_RATE
    threads: int = 1
    profile_cuts: tuple = ()  # x positions [m]

    def __post_init__(self):
        if not 0 < self.cfl < 1:
            raise ValueError("cfl must lie in (0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if any(b <= a for a, b in zip(self.output_times, self.output_times[1:])):
            raise ValueError("output times must be strictly increasing")
        if any(t < 0 for t in self.output_times):
            raise ValueError("output times must be non-negative")
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise ValueError("stage names must be unique")

    @property
    def t_end(self) -> float:
        return float(sum(s.duration for s in self.stages))

    def build_grid(self) -> StructuredGrid:
        return build_grid(self.extent, self.resolution, self.ports, self.thickness)

    @property
    def kinetics(self) -> KineticParams:
        ex = ExchangeParams(D_l_O2=self.diffusion.l_O2, r_p=self.medium.r_p,
                            kappa_exposed=self.medium.kappa_exposed, k_H=self.fluid.k_H)
        return KineticParams(self.growth, self.adhesion, ex)


# -- state helpers -----------------------------------------------------------------
def gas_o2_concentration(p_g, x_O2, fluid: FluidParams):
    """Mass concentration of O2 in gas of pressure ``p_g`` and mole fraction ``x_O2``."""
    return x_O2 * np.asarray(p_g) / (fluid.R_gas * fluid.T) * M_O2


def initial_state(scenario: Scenario, grid: StructuredGrid | None = None) -> FieldState:
    grid = grid or scenario.build_grid()
    ic = scenario.initial
    vg, fl = scenario.vg, scenario.fluid
    from .constitutive import pc_from_saturation

    p_g = hydrostatic_gas_pressure(grid, fl, ic.p_top, ic.x_O2)
    p_c = np.full(grid.n_cells, pc_from_saturation(max(ic.s_l, vg.s_l_min), vg))
    n = grid.n_cells
    c_g = gas_o2_concentration(p_g, ic.x_O2, fl)
    c_l_O2 = fl.k_H * c_g if ic.c_l_O2 is None else np.full(n, ic.c_l_O2)
    conc = {
        "l_S": np.full(n, ic.c_l_S), "l_O2": np.asarray(c_l_O2, dtype=float).copy(),
        "l_X": np.full(n, ic.c_l_X), "g_O2": c_g, "s_X": np.full(n, ic.c_s_X),
    }
    return FieldState(grid=grid, p_l=p_g - p_c, p_c=p_c, conc=conc,
                      s_l=saturation_from_pc(p_c, vg) * np.ones(n),
                      v_l=np.zeros(grid.n_faces), v_g=np.zeros(grid.n_faces), t=0.0)


def pore_velocity(v_faces, theta_l, grid: StructuredGrid):
    """Cell-centred pore velocity components from face Darcy fluxes."""
    nxf = grid.n_xfaces
    vx = np.asarray(v_faces[:nxf]).reshape(grid.ny, grid.nx + 1)
    vy = np.asarray(v_faces[nxf:]).reshape(grid.ny + 1, grid.nx)
    ux = 0.5 * (vx[:, 1:] + vx[:, :-1]).ravel() / theta_l
    uy = 0.5 * (vy[1:, :] + vy[:-1, :]).ravel() / theta_l
    return ux, uy


@dataclass
class Budget:
    """Domain totals [kg] of the tracked quantities."""

    water: float
    l_S: float
    l_O2: float
    g_O2: float
    l_X: float
    s_X: float

    @classmethod
    def of(cls, state: FieldState, scenario: Scenario) -> "Budget":
        phi = scenario.medium.phi
        V = state.grid.cell_volume
        th_l = phi * state.s_l
        th_g = theta_g_effective(state.s_l, phi, scenario.flow.s_g_floor)
        c = state.conc
        return cls(
            water=float(np.sum(th_l) * V * scenario.fluid.rho_l),
            l_S=float(np.sum(th_l * c["l_S"]) * V), l_O2=float(np.sum(th_l * c["l_O2"]) * V),
            g_O2=float(np.sum(th_g * c["g_O2"]) * V), l_X=float(np.sum(th_l * c["l_X"]) * V),
            s_X=float(np.sum((1 - phi) * c["s_X"]) * V),
        )


@dataclass
class StepDiagnostics:
    dt: float
    flow_iters: int
    max_dsat: float
    mass_balance_error: float
    cfl_substeps: int
    clipped: float
    boundary_out: dict  # species -> mass left through the boundary [kg]
    reaction_source: dict  # species -> net reaction change [kg]
    rejected: int = 0


@dataclass
class SimulationReport:
    times: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # dicts for report.csv
    snapshots: list = field(default_factory=list)  # (t, path)
    steps: int = 0
    cfl_substeps: int = 0
    clipped_total: float = 0.0
    flow_rejections: int = 0
    final_state: FieldState | None = None
    states: dict = field(default_factory=dict)  # output time -> FieldState copy
    error: str | None = None

    def series(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])


# -- SNIA step ---------------------------------------------------------------------
class Simulation:
    """Holds the grid, discrete operators and boundary data of one scenario run."""

    def __init__(self, scenario: Scenario, grid: StructuredGrid | None = None):
        self.scenario = scenario
        self.grid = grid or scenario.build_grid()
        self.problem = FlowProblem(self.grid, scenario.medium, scenario.fluid, scenario.vg, scenario.flow)
        self.kinetics = scenario.kinetics
        self.order_flip = False
        self.set_stage(None)
        top = self.grid.boundary_faces("top")
        fl = scenario.fluid
        self.c_atm = float(gas_o2_concentration(scenario.initial.p_top, scenario.initial.x_O2, fl))
        self.gas_dirichlet = {int(f): self.c_atm for f in top}

    def set_stage(self, stage: Stage | None):
        g = self.grid
        q_in = np.zeros(g.n_faces)
        inflow = {s: np.zeros(g.n_faces) for s in LIQUID_SPECIES}
        for pf in (stage.flows if stage else ()):
            faces = g.boundary_faces(pf.target)
            if len(faces) == 0:
                raise ValueError(f"port target {pf.target!r} has no faces")
            q_in[faces] += pf.rate / len(faces)
            if pf.rate > 0:
                for s in LIQUID_SPECIES:
                    inflow[s][faces] = pf.conc(s)
        self.stage = stage
        self.inflow = inflow
        sc = self.scenario
        bc = FlowBC.open_top(g, sc.initial.p_top, q_in)
        bc.x_O2_boundary = sc.initial.x_O2
        self.problem = self.problem.with_bc(bc)

    # -- pieces --------------------------------------------------------------------
    def gas_mole_fraction(self, state: FieldState):
        fl = self.scenario.fluid
        nu = np.maximum(state.p_g, 1.0) / (fl.R_gas * fl.T)
        return np.clip(state.conc["g_O2"] / M_O2 / nu, 0.0, 1.0)

    def transport(self, state: FieldState, s_new, v_l, v_g, dt):
        """Advance all mobile species over ``dt`` with the given flow solution."""
        sc = self.scenario
        g = self.grid
        phi = sc.medium.phi
        V = g.cell_volume
        th_old = phi * state.s_l
        th_new = phi * s_new
        conc = {k: v.copy() for k, v in state.conc.items()}
        bout = {s: 0.0 for s in ALL_SPECIES}
        D = sc.diffusion
        t = 0.0
        th = th_old.copy()
        nsub = 0
        while t < dt * (1 - 1e-12):
            h = min(dt - t, cfl_dt(v_l, np.minimum(th, th_new), g, sc.cfl))
            order = "yx" if self.order_flip else "xy"
            self.order_flip = not self.order_flip
            th_end = None
            for s in LIQUID_SPECIES:
                res = advect_step(conc[s], v_l, th, h, g, self.inflow[s], order=order)
                conc[s] = res.c
                th_end = res.theta
                bout[s] += float(res.boundary_mass.sum())
            for s in ("l_S", "l_O2"):
                Ds = getattr(D, s)
                if Ds <= 0:
                    continue
                D_cell = effective_diffusion(th_end / phi, phi, Ds)
                h_d = explicit_diffusion_dt(D_cell, th_end, g)
                m = max(1, math.ceil(h / h_d))
                for _ in range(m):
                    conc[s] = conc[s] + explicit_diffusion(conc[s], D_cell, h / m, g) / (th_end * V)
            th = th_end
            t += h
            nsub += 1
        # replace the flux-integrated water content by the flow solution's
        for s in LIQUID_SPECIES:
            conc[s] = conc[s] * th / th_new
        # gas O2: implicit diffusion + upwind advection
        floor = sc.flow.s_g_floor
        tg_old = theta_g_effective(state.s_l, phi, floor)
        tg_new = theta_g_effective(s_new, phi, floor)
        res = diffuse_step(conc["g_O2"], 1.0 - s_new, tg_old, tg_new, phi, D.g_O2, dt, g,
                           dirichlet=self.gas_dirichlet, v=v_g)
        conc["g_O2"] = res.c
        bout["g_O2"] += float(res.boundary_mass.sum())
        return conc, bout, nsub

    def react(self, conc, s_l, v_l, dt):
        sc = self.scenario
        phi = sc.medium.phi
        th_l = phi * s_l
        th_s = 1.0 - phi
        th_g = theta_g_effective(s_l, phi, sc.flow.s_g_floor)
        ux, uy = pore_velocity(v_l, th_l, self.grid)
        Y = np.column_stack([th_l * conc["l_S"], th_l * conc["l_O2"], th_l * conc["l_X"],
                             th_s * conc["s_X"], th_g * conc["g_O2"]])
        Y0 = Y.copy()
        args = kernel_args(th_l, th_s, th_g, s_l, np.hypot(ux, uy), self.kinetics, sc.medium,
                           theta_l_floor=phi * sc.vg.s_l_min, pool_rate=sc.reaction_pool_rate)
        Y, diag = integrate_bulk(Y, args, dt, sc.reaction_rtol, sc.reaction_atol, sc.threads)
        out = dict(conc)
        out["l_S"] = Y[:, 0] / th_l
        out["l_O2"] = Y[:, 1] / th_l
        out["l_X"] = Y[:, 2] / th_l
        out["s_X"] = Y[:, 3] / th_s
        out["g_O2"] = Y[:, 4] / th_g
        V = self.grid.cell_volume
        src = {s: float((Y[:, k] - Y0[:, k]).sum() * V)
               for k, s in enumerate(("l_S", "l_O2", "l_X", "s_X", "g_O2"))}
        return out, float(diag.clipped.sum() * V), src


def snia_step(sim: Simulation, state: FieldState, dt: float, dt_limit: float = np.inf):
    """One coupled step; returns ``(new_state, diagnostics, suggested_next_dt)``."""
    sim.problem.x_O2 = sim.gas_mole_fraction(state)
    sol = adaptive_flow_step(state, sim.problem, dt, dt_limit)
    conc, bout, nsub = sim.transport(state, sol.s_l, sol.v_l, sol.v_g, sol.dt)
    conc, clipped, src = sim.react(conc, sol.s_l, sol.v_l, sol.dt)
    new = FieldState(grid=state.grid, p_l=sol.p_l, p_c=sol.p_c, conc=conc, s_l=sol.s_l,
                     v_l=sol.v_l, v_g=sol.v_g, t=state.t + sol.dt)
    new.check_finite()
    diag = StepDiagnostics(dt=sol.dt, flow_iters=sol.newton_iters, max_dsat=sol.max_dsat,
                           mass_balance_error=max(sol.mass_balance_error), cfl_substeps=nsub,
                           clipped=clipped, boundary_out=bout, reaction_source=src, rejected=sol.rejected)
    return new, diag, sol.next_dt


# -- output ------------------------------------------------------------------------
def snapshot_fields(state: FieldState, scenario: Scenario) -> dict:
    phi = scenario.medium.phi
    th_l = phi * state.s_l
    c = state.conc
    bulk_X = th_l * c["l_X"] + (1 - phi) * c["s_X"]
    ux, uy = pore_velocity(state.v_l, th_l, state.grid)
    return {
        "s_l": (state.s_l, "-"), "p_l": (state.p_l, "Pa"), "p_c": (state.p_c, "Pa"),
        "c_l_S": (c["l_S"], "kg/m3"), "c_l_O2": (c["l_O2"], "kg/m3"), "c_l_X": (c["l_X"], "kg/m3"),
        "c_s_X": (c["s_X"], "kg/m3_solid"), "c_g_O2": (c["g_O2"], "kg/m3_gas"),
        "X_t": (kg_m3_to_cells_per_ml(bulk_X), "cells/mL_pm"),
        "X_l": (kg_m3_to_cells_per_ml(th_l * c["l_X"]), "cells/mL_pm"),
        "u_x": (ux, "m/s"), "u_y": (uy, "m/s"),
    }


def snapshot_name(t: float) -> str:
    return f"t_{int(round(t))}.dat"


REPORT_COLUMNS = ("t", "stage", "dt", "water", "l_S", "l_O2", "g_O2", "l_X", "s_X",
                  "out_l_S", "out_l_O2", "out_g_O2", "out_l_X", "max_dsat_rate", "cfl_substeps", "clipped")


def run_scenario(scenario: Scenario, output_dir=None, *, keep_states: bool = False,
                 on_step=None) -> SimulationReport:
    """Run all stages; snapshots at ``output_times`` (and t = 0).

    With ``output_dir`` the snapshots, ``report.csv`` and ``steps.csv`` are
    written there. A failing sub-solver raises :class:`SimulationError`
    carrying the partial report.
    """
    sim = Simulation(scenario)
    grid = sim.grid
    state = initial_state(scenario, grid)
    report = SimulationReport()
    out = Path(output_dir) if output_dir is not None else None
    steps_log = StepLog(out / "steps.csv" if out else None)
    rep_fh = None
    if out:
        (out / "snapshots").mkdir(parents=True, exist_ok=True)
        rep_fh = (out / "report.csv").open("w", newline="")
        writer = csv.writer(rep_fh)
        writer.writerow(REPORT_COLUMNS)

    cum_out = {s: 0.0 for s in ALL_SPECIES}

    def record(st: FieldState, stage: str, diag: StepDiagnostics | None):
        b = Budget.of(st, scenario)
        row = {"t": st.t, "stage": stage, "dt": diag.dt if diag else 0.0, "water": b.water,
               "l_S": b.l_S, "l_O2": b.l_O2, "g_O2": b.g_O2, "l_X": b.l_X, "s_X": b.s_X,
               **{f"out_{s}": cum_out[s] for s in ("l_S", "l_O2", "g_O2", "l_X")},
               "max_dsat_rate": diag.max_dsat / diag.dt if diag else 0.0,
               "cfl_substeps": diag.cfl_substeps if diag else 0, "clipped": diag.clipped if diag else 0.0}
        report.rows.append(row)
        report.times.append(st.t)
        if rep_fh:
            writer.writerow([row[k] if isinstance(row[k], str) else f"{row[k]:.12g}" for k in REPORT_COLUMNS])

    def snapshot(st: FieldState):
        if keep_states:
            report.states[st.t] = st.copy()
        if out:
            p = write_snapshot(out / "snapshots" / snapshot_name(st.t), grid, snapshot_fields(st, scenario), st.t)
            report.snapshots.append((st.t, p))
        else:
            report.snapshots.append((st.t, None))

    record(state, "initial", None)
    snapshot(state)
    pending = [t for t in scenario.output_times if t > 0]
    dt = scenario.flow.dt_init
    t_stage0 = 0.0
    try:
        for stage in scenario.stages:
            sim.set_stage(stage)
            t_stage1 = t_stage0 + stage.duration
            log.info("stage %s: %.0f s -> %.0f s", stage.name, t_stage0, t_stage1)
            while state.t < t_stage1 - 1e-9 * max(1.0, t_stage1):
                target = t_stage1
                if pending and pending[0] < target:
                    target = pending[0]
                try:
                    state, diag, dt = snia_step(sim, state, dt, target - state.t)
                except (FlowError, RuntimeError) as exc:
                    raise SimulationError(f"stage {stage.name!r} at t={state.t:.1f} s: {exc}", report) from exc
                if abs(state.t - target) < 1e-9 * max(1.0, target):
                    state.t = target
                for s, v in diag.boundary_out.items():
                    cum_out[s] += v
                report.steps += 1
                report.cfl_substeps += diag.cfl_substeps
                report.clipped_total += diag.clipped
                report.flow_rejections += diag.rejected
                steps_log.add(state.t, _FlowRow(diag))
                record(state, stage.name, diag)
                if on_step is not None:
                    on_step(state, diag)
                while pending and pending[0] <= state.t + 1e-9 * max(1.0, state.t):
                    pending.pop(0)
                    snapshot(state)
            t_stage0 = t_stage1
    except SimulationError as exc:
        report.error = str(exc)
        report.final_state = state
        raise
    finally:
        if rep_fh:
            rep_fh.close()
    report.final_state = state
    return report


@dataclass
class _FlowRow:
    """Adapter so StepLog can record coupled-step diagnostics."""

    diag: StepDiagnostics

    @property
    def dt(self):
        return self.diag.dt

    @property
    def newton_iters(self):
        return self.diag.flow_iters

    @property
    def max_dsat(self):
        return self.diag.max_dsat

    @property
    def mass_balance_error(self):
        return (self.diag.mass_balance_error,)


# -- bundled chamber setup ---------------------------------------------------------------
BOTTOM_PORTS_CM = (5.0, 11.5, 21.5, 28.0, 39.0, 44.5)
SIDE_PORTS_CM = (0.5, 2.0, 3.5, 5.0)


def chamber_ports() -> tuple:
    ports = [Port(f"bottom_{i + 1}", "bottom", x / 100.0, "bottom_ports") for i, x in enumerate(BOTTOM_PORTS_CM)]
    ports += [Port(f"left_{i + 1}", "left", y / 100.0, "left_ports") for i, y in enumerate(SIDE_PORTS_CM)]
    ports += [Port(f"right_{i + 1}", "right", y / 100.0, "right_ports") for i, y in enumerate(SIDE_PORTS_CM)]
    return tuple(ports)


def chamber_stages(flow_days: float = 5.0, doc_supply: bool = True, with_flow: bool = True) -> tuple:
    hour, day = 3600.0, 86400.0
    x_in = float(cells_per_ml_to_kg_m3(2e7))
    inflow = PortFlow("bottom_ports", float(ml_per_h_to_m3_s(190.0)),
                      (("l_S", 0.8), ("l_O2", 1e-4), ("l_X", x_in)))
    stages = [Stage("inflow", hour, (inflow,), "injection through the six bottom ports"),
              Stage("stagnancy", 5 * day - hour, (), "no flow until day 5")]
    if with_flow:
        doc = 0.8 if doc_supply else 0.0
        q = float(ml_per_h_to_m3_s(15.0))
        stages.append(Stage("horizontal", flow_days * day,
                            (PortFlow("left_ports", q, (("l_S", doc), ("l_O2", 9.1e-3), ("l_X", 0.0))),
                             PortFlow("right_ports", -q)),
                            "horizontal flow from the left to the right ports"))
    return tuple(stages)


def chamber_scenario(resolution=(98, 64), **overrides) -> Scenario:
    hour, day = 3600.0, 86400.0
    with_flow = overrides.pop("with_flow", True)
    doc_supply = overrides.pop("doc_supply", True)
    stages = chamber_stages(doc_supply=doc_supply, with_flow=with_flow)
    t_end = sum(s.duration for s in stages)
    outputs = tuple(sorted({6 * hour, *(d * day for d in range(1, int(round(t_end / day)) + 1))}))
    kw = dict(name="chamber_full", extent=(0.50, 0.30), resolution=tuple(resolution), thickness=0.006,
              ports=chamber_ports(), stages=stages, output_times=outputs, profile_cuts=(0.25,))
    kw.update(overrides)
    return Scenario(**kw)
