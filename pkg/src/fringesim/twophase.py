"""Fully implicit two-phase (water/air) flow in the p_l - p_c formulation.

Cell-centred finite volumes with two-point fluxes and phase-potential
upwinding of the mobilities. Each cell carries a liquid and a gas mass
balance; the unknowns ``(p_l, p_c)`` are interleaved per cell. The Newton
Jacobian is built by finite differences with a 5-colouring of the grid, so a
full Jacobian costs ten extra residual evaluations.

Two regularisations keep the discrete system well posed in the limits:

* the gas storage uses ``phi * hypot(s_g, s_g_floor)``, so a fully saturated
  cell still has a (tiny) compressible gas volume and its gas pressure stays
  determined (it is effectively frozen there);
* ``p_c`` is capped at the value where ``s_l`` reaches ``s_l_min``. The
  Jacobian perturbs ``p_c`` downwards so the derivative at the cap is the
  one-sided slope of the retention curve.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import (M_AIR_REF, M_O2, FluidParams, MediumParams, VanGenuchtenParams,
                           pc_from_saturation, relative_permeability, saturation_from_pc)
from .grid import FieldState, StructuredGrid

P_ATM = 101325.0
X_O2_AIR = 0.2095


class FlowError(RuntimeError):
    """Time step underflow or an unrecoverable solver failure."""


class NewtonFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class TwoPhaseConfig:
    dt_init: float = 1.0
    dt_max: float = 600.0
    dt_min: float = 1e-4
    newton_tol: float = 1e-8  # liquid rows, equivalent saturation error
    newton_tol_gas: float = 1e-6  # gas rows, relative gas-mass error
    newton_max_iter: int = 12
    max_sat_change: float = 0.1
    linear_tol: float = 1e-12
    linear_max_iter: int = 400
    # "direct" (sparse LU), "iterative" (ILU + BiCGStab) or "auto" by size
    linear_solver: str = "auto"
    direct_max_unknowns: int = 60000
    easy_iters: int = 6
    growth: float = 1.5
    s_g_floor: float = 1e-4
    gas_scale_floor: float = 0.05  # gas rows measure errors against at least this gas saturation
    upwind_smoothing: float = 1.0  # Pa
    max_dpg: float = 2000.0  # Pa, gas pressure change per Newton iteration
    divergence_factor: float = 1e4

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if not 0 < self.max_sat_change <= 1:
            raise ValueError("max_sat_change must lie in (0, 1]")
        if self.newton_tol <= 0 or self.newton_tol_gas <= 0 or self.linear_tol <= 0 or self.newton_max_iter < 1:
            raise ValueError("invalid Newton or linear solver settings")
        if not 0 < self.s_g_floor < 0.1:
            raise ValueError("s_g_floor must be a small positive number")
        if not 0 <= self.gas_scale_floor <= 1:
            raise ValueError("gas_scale_floor must lie in [0, 1]")
        if self.linear_solver not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class FlowBC:
    """Boundary data on faces.

    ``q_in`` is the prescribed liquid volume rate entering the domain
    [m^3/s] per boundary face (negative for extraction). Faces listed in
    ``gas_dirichlet`` hold a fixed gas pressure; every other boundary face
    is closed to the gas.
    """

    q_in: np.ndarray
    gas_dirichlet: dict = field(default_factory=dict)  # face -> p_g [Pa]
    x_O2_boundary: float = X_O2_AIR

    @classmethod
    def closed(cls, grid: StructuredGrid) -> "FlowBC":
        return cls(q_in=np.zeros(grid.n_faces))

    @classmethod
    def open_top(cls, grid: StructuredGrid, p_atm: float = P_ATM, q_in=None) -> "FlowBC":
        q = np.zeros(grid.n_faces) if q_in is None else np.asarray(q_in, dtype=float)
        return cls(q_in=q, gas_dirichlet={int(f): p_atm for f in grid.boundary_faces("top")})


@dataclass
class FlowSolution:
    p_l: np.ndarray
    p_c: np.ndarray
    s_l: np.ndarray
    v_l: np.ndarray  # Darcy flux per face, +x / +y positive [m/s]
    v_g: np.ndarray
    dt: float
    newton_iters: int
    max_dsat: float = 0.0
    mass_balance_error: tuple = (0.0, 0.0)  # relative (liquid, gas)
    residual_norm: float = 0.0
    next_dt: float = 0.0
    rejected: int = 0


class FlowProblem:
    """Discrete operators of the two-phase system on one grid.

    ``x_O2`` is the O2 mole fraction of the gas per cell, frozen over a flow
    step and used for the gas molar mass.
    """

    def __init__(self, grid: StructuredGrid, medium: MediumParams = MediumParams(),
                 fluid: FluidParams = FluidParams(), vg: VanGenuchtenParams = VanGenuchtenParams(),
                 config: TwoPhaseConfig = TwoPhaseConfig(), bc: FlowBC | None = None, x_O2=X_O2_AIR):
        self.grid = grid
        self.medium = medium
        self.fluid = fluid
        self.vg = vg
        self.config = config
        self.pc_max = vg.pc_max
        self.bc = bc if bc is not None else FlowBC.closed(grid)
        self.x_O2 = np.broadcast_to(np.asarray(x_O2, dtype=float), (grid.n_cells,)).copy()

        n = grid.n_cells
        lo, hi = grid.face_cells()
        self.lo, self.hi = lo, hi
        self.inner = np.flatnonzero((lo >= 0) & (hi >= 0))
        self.bfaces = np.flatnonzero((lo < 0) | (hi < 0))
        self.bcell = np.where(lo[self.bfaces] >= 0, lo[self.bfaces], hi[self.bfaces])
        # +1 where the +normal of a boundary face points out of the domain
        self.bsign = np.where(lo[self.bfaces] >= 0, 1.0, -1.0)
        self.area = grid.face_area()
        is_x = grid.face_is_x()
        self.dist = np.where(is_x, grid.dx, grid.dy)
        _, yc = grid.cell_centers()
        self.yc = yc
        _, self.yf = grid.face_centers()
        self.V = grid.cell_volume
        self.trans = medium.K * self.area / self.dist  # interior two-point transmissibility
        self.trans_b = medium.K * self.area / (0.5 * self.dist)

        # graph colouring of the 5-point stencil
        j, i = np.divmod(np.arange(n), grid.nx)
        self.colors = (i + 2 * j) % 5
        nb = np.full((n, 5), -1)
        nb[:, 0] = np.arange(n)
        nb[:, 1] = np.where(i > 0, np.arange(n) - 1, -1)
        nb[:, 2] = np.where(i < grid.nx - 1, np.arange(n) + 1, -1)
        nb[:, 3] = np.where(j > 0, np.arange(n) - grid.nx, -1)
        nb[:, 4] = np.where(j < grid.ny - 1, np.arange(n) + grid.nx, -1)
        self.stencil = nb

    def with_bc(self, bc: FlowBC) -> "FlowProblem":
        new = object.__new__(FlowProblem)
        new.__dict__.update(self.__dict__)
        new.bc = bc
        return new

    # -- closures -----------------------------------------------------------
    def gas_molar_mass(self):
        return self.x_O2 * M_O2 + (1.0 - self.x_O2) * M_AIR_REF

    def gas_density(self, p_g):
        return np.maximum(p_g, 0.0) * self.gas_molar_mass() / (self.fluid.R_gas * self.fluid.T)

    def theta_g_eff(self, s_l):
        return theta_g_effective(s_l, self.medium.phi, self.config.s_g_floor)

    def unpack(self, x):
        x = x.reshape(-1, 2)
        return x[:, 0], x[:, 1]

    # -- fluxes ---------------------------------------------------------------
    def upwind_weight(self, dphi):
        """Weight of the low-side cell: 1 when the potential drops towards +normal.

        Within ``upwind_smoothing`` Pa of a vanishing potential difference the
        weight blends linearly, which keeps Newton quadratic at rest states.
        """
        d = self.config.upwind_smoothing
        if d <= 0:
            return (dphi <= 0).astype(float)
        return np.clip(0.5 - 0.5 * dphi / d, 0.0, 1.0)

    def fluxes(self, p_l, p_c):
        """Darcy fluxes and mass fluxes for both phases on all faces."""
        fl = self.fluid
        g = fl.g
        s = saturation_from_pc(p_c, self.vg)
        p_g = p_l + p_c
        rho_g = self.gas_density(p_g)
        # water cannot drain out of a cell sitting on the saturation floor
        s_min = self.vg.s_l_min
        ramp = np.clip((s - s_min) / s_min, 0.0, 1.0)
        lam_l = ramp * relative_permeability(s, "liquid", self.vg) / fl.mu_l
        lam_g = relative_permeability(s, "gas", self.vg) / fl.mu_g
        nf = self.grid.n_faces
        q_l = np.zeros(nf)
        q_g = np.zeros(nf)
        m_l = np.zeros(nf)
        m_g = np.zeros(nf)

        f, a, b = self.inner, self.lo[self.inner], self.hi[self.inner]
        dy = self.yc[b] - self.yc[a]
        # liquid
        dphi = p_l[b] - p_l[a] + fl.rho_l * g * dy
        w = self.upwind_weight(dphi)
        lam = w * lam_l[a] + (1.0 - w) * lam_l[b]
        q_l[f] = -self.trans[f] / self.area[f] * lam * dphi
        m_l[f] = fl.rho_l * q_l[f]
        # gas
        rho_f = 0.5 * (rho_g[a] + rho_g[b])
        dphi = p_g[b] - p_g[a] + rho_f * g * dy
        w = self.upwind_weight(dphi)
        lam = w * lam_g[a] + (1.0 - w) * lam_g[b]
        q_g[f] = -self.trans[f] / self.area[f] * lam * dphi
        m_g[f] = (w * rho_g[a] + (1.0 - w) * rho_g[b]) * q_g[f]

        # boundaries
        bf, k, sgn = self.bfaces, self.bcell, self.bsign
        q = -sgn * self.bc.q_in[bf] / self.area[bf]
        q_l[bf] = q
        m_l[bf] = fl.rho_l * q
        if self.bc.gas_dirichlet:
            faces = np.fromiter(self.bc.gas_dirichlet.keys(), dtype=int)
            pb = np.fromiter(self.bc.gas_dirichlet.values(), dtype=float)
            pos = np.searchsorted(bf, faces)
            kk = k[pos]
            s_out = sgn[pos]
            # potential difference outside minus inside
            dphi = pb - p_g[kk] + rho_g[kk] * g * (self.yf[faces] - self.yc[kk])
            q_out = -self.trans_b[faces] / self.area[faces] * lam_g[kk] * dphi  # outward positive
            rho_b = pb * (self.fluid_Mb()) / (fl.R_gas * fl.T)
            mass_out = np.where(q_out > 0, rho_g[kk], rho_b) * q_out
            q_g[faces] = s_out * q_out
            m_g[faces] = s_out * mass_out
        return q_l, q_g, m_l, m_g, s, rho_g

    def fluid_Mb(self):
        x = self.bc.x_O2_boundary
        return x * M_O2 + (1.0 - x) * M_AIR_REF

    def divergence(self, m):
        """Net outflow per cell of a face mass flux (positive along +normal)."""
        n = self.grid.n_cells
        fa = m * self.area
        out = np.zeros(n)
        f = self.inner
        out += np.bincount(self.lo[f], fa[f], n) - np.bincount(self.hi[f], fa[f], n)
        out += np.bincount(self.bcell, self.bsign * fa[self.bfaces], n)
        return out

    # -- residual -------------------------------------------------------------
    def storage(self, p_l, p_c):
        s = saturation_from_pc(p_c, self.vg)
        rho_g = self.gas_density(p_l + p_c)
        phi = self.medium.phi
        return phi * s * self.fluid.rho_l * self.V, self.theta_g_eff(s) * rho_g * self.V

    def residual(self, x, x_old, dt, old_storage=None):
        """Mass residual [kg/s] per cell and phase, shape (n, 2)."""
        p_l, p_c = self.unpack(x)
        if old_storage is None:
            old_storage = self.storage(*self.unpack(x_old))
        M_l, M_g = self.storage(p_l, p_c)
        _, _, m_l, m_g, _, _ = self.fluxes(p_l, p_c)
        R = np.empty((self.grid.n_cells, 2))
        R[:, 0] = (M_l - old_storage[0]) / dt + self.divergence(m_l)
        R[:, 1] = (M_g - old_storage[1]) / dt + self.divergence(m_g)
        return R

    def residual_scale(self, x, dt):
        """Row scaling turning residuals into saturation / relative gas-mass errors."""
        p_l, p_c = self.unpack(x)
        s = saturation_from_pc(p_c, self.vg)
        sc = np.empty((self.grid.n_cells, 2))
        sc[:, 0] = dt / (self.V * self.medium.phi * self.fluid.rho_l)
        rho_g = np.maximum(self.gas_density(p_l + p_c), 1e-3)
        # gas rows share the liquid tolerance after this rescaling; trapped gas
        # in nearly saturated cells is judged against a floor so that its
        # negligible absolute error does not stall convergence
        theta_ref = np.maximum(self.theta_g_eff(s), self.medium.phi * self.config.gas_scale_floor)
        sc[:, 1] = dt / (self.V * theta_ref * rho_g) * (
            self.config.newton_tol / self.config.newton_tol_gas)
        return sc

    # -- Jacobian ---------------------------------------------------------------
    def jacobian(self, x, x_old, dt, R0=None, old_storage=None):
        n = self.grid.n_cells
        if old_storage is None:
            old_storage = self.storage(*self.unpack(x_old))
        if R0 is None:
            R0 = self.residual(x, x_old, dt, old_storage)
        X = x.reshape(n, 2)
        rows, cols, vals = [], [], []
        eps = np.maximum(1e-7 * np.abs(X), 1e-4)
        eps[:, 1] *= -1.0  # one-sided from below in p_c
        nb = self.stencil
        nb_color = np.where(nb >= 0, self.colors[np.maximum(nb, 0)], -1)
        for c in range(5):
            perturbed = np.flatnonzero(self.colors == c)
            # row cell r -> the stencil member of colour c
            has = nb_color == c
            r_idx, slot = np.nonzero(has)
            owner = nb[r_idx, slot]
            for v in range(2):
                Xp = X.copy()
                Xp[perturbed, v] += eps[perturbed, v]
                Rp = self.residual(Xp.ravel(), x_old, dt, old_storage)
                d = (Rp[r_idx] - R0[r_idx]) / eps[owner, v][:, None]
                for e in range(2):
                    rows.append(2 * r_idx + e)
                    cols.append(2 * owner + v)
                    vals.append(d[:, e])
        J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * n, 2 * n))
        return J

    # -- Newton -----------------------------------------------------------------
    def solve_linear(self, J, b):
        cfg = self.config
        J = J.tocsc()
        # column equilibration on top of the row scaling
        colmax = np.asarray(abs(J).max(axis=0).todense()).ravel()
        colmax[colmax == 0] = 1.0
        C = sp.diags(1.0 / colmax)
        Js = (J @ C).tocsc()
        direct = cfg.linear_solver == "direct" or (
            cfg.linear_solver == "auto" and Js.shape[0] <= cfg.direct_max_unknowns)
        if direct:
            y = spla.splu(Js, permc_spec="COLAMD").solve(b)
            return C @ y
        try:
            ilu = spla.spilu(Js, drop_tol=1e-6, fill_factor=20)
            M = spla.LinearOperator(Js.shape, ilu.solve)
            y, info = spla.bicgstab(Js, b, M=M, rtol=cfg.linear_tol, atol=0.0, maxiter=cfg.linear_max_iter)
        except RuntimeError:
            info = -1
        if info != 0 or not np.all(np.isfinite(y)):
            # ILU breakdown or stagnation: fall back to a sparse direct solve
            y = spla.splu(Js, permc_spec="COLAMD").solve(b)
        return C @ y

    def update(self, x, dx, max_ds: float = 0.2):
        """Apply a Newton correction in (p_g, s_l) space.

        The retention curve is far from linear in ``p_c`` near the dry end, so
        the linearised saturation change is applied to ``s_l`` and mapped back
        through the inverse curve; the per-iteration saturation change is
        chopped to ``max_ds``. The gas pressure receives the plain update.
        """
        X = x.reshape(-1, 2)
        D = dx.reshape(-1, 2)
        pc0 = X[:, 1]
        pc_raw = pc0 + D[:, 1]
        s0 = saturation_from_pc(pc0, self.vg)
        slope = dsat_dpc(pc0, self.vg)
        s_pred = s0 + slope * D[:, 1]
        # near saturation the curve is flat and its inverse loses precision
        curved = (slope < 0.0) & (s0 < 0.99)
        s_tgt = np.clip(s_pred, s0 - max_ds, s0 + max_ds)
        s_tgt = np.clip(s_tgt, self.vg.s_l_min, 1.0)
        pc_curved = pc_from_saturation(s_tgt, self.vg)
        # flat part (saturated): plain update, chopped if it drains too fast
        s_flat = saturation_from_pc(pc_raw, self.vg)
        pc_flat = np.where(s_flat < 1.0 - max_ds, pc_from_saturation(1.0 - max_ds, self.vg), pc_raw)
        pc_new = np.minimum(np.where(curved, pc_curved, pc_flat), self.pc_max)
        out = np.empty_like(X)
        out[:, 1] = pc_new
        dpg = np.clip(D[:, 0] + D[:, 1], -self.config.max_dpg, self.config.max_dpg)
        out[:, 0] = X[:, 0] + dpg - (pc_new - pc0)
        return out.ravel()

    def newton(self, x0, x_old, dt):
        """Solve the implicit step; returns (x, iterations, scaled residual norm)."""
        cfg = self.config
        old_storage = self.storage(*self.unpack(x_old))
        x = x0.copy()
        scale = self.residual_scale(x_old, dt)
        R = self.residual(x, x_old, dt, old_storage)
        norm = float(np.max(np.abs(R * scale)))
        best = norm
        it = 0
        while norm > cfg.newton_tol:
            if it >= cfg.newton_max_iter:
                raise NewtonFailure(f"no convergence after {it} iterations (scaled residual {norm:.3e})")
            J = self.jacobian(x, x_old, dt, R, old_storage)
            Dr = sp.diags(scale.ravel())
            try:
                dx = self.solve_linear(Dr @ J, -(R * scale).ravel())
            except RuntimeError as exc:  # singular factorisation
                raise NewtonFailure(f"linear solve failed: {exc}") from exc
            if not np.all(np.isfinite(dx)):
                raise NewtonFailure("non-finite Newton update")
            x = self.update(x, dx)
            it += 1
            R = self.residual(x, x_old, dt, old_storage)
            new_norm = float(np.max(np.abs(R * scale)))
            if not np.isfinite(new_norm):
                raise NewtonFailure("non-finite residual")
            if new_norm > cfg.divergence_factor * best:
                raise NewtonFailure(f"diverging (scaled residual {new_norm:.3e})")
            norm = new_norm
            best = min(best, norm)
        return x, it, norm


def theta_g_effective(s_l, phi: float, s_g_floor: float):
    """Gas volume fraction with a smooth floor, ``phi * hypot(s_g, s_g_floor)``.

    A hard ``max`` puts a kink into the gas storage right where trapped gas
    sits in nearly saturated cells, and Newton then cycles across it.
    """
    return phi * np.hypot(1.0 - np.asarray(s_l, dtype=float), s_g_floor)


def dsat_dpc(p_c, vg: VanGenuchtenParams):
    """Slope of the retention curve; at and beyond the cap the left limit."""
    p = np.minimum(np.asarray(p_c, dtype=float), vg.pc_max)
    ap = vg.alpha * np.maximum(p, 0.0)
    apn = ap ** vg.n
    with np.errstate(divide="ignore", invalid="ignore"):
        d = -vg.m * vg.n * vg.alpha * np.where(ap > 0, apn / ap, 0.0) * (1.0 + apn) ** (-vg.m - 1.0)
    return np.where(p > 0, d, 0.0)


def pack(p_l, p_c):
    x = np.empty(2 * len(p_l))
    x[0::2] = p_l
    x[1::2] = p_c
    return x


def assemble_residual(state: FieldState, state_old: FieldState, dt: float, problem: FlowProblem):
    """Interleaved liquid/gas mass residuals [kg/s] of ``state`` relative to ``state_old``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = pack(state.p_l, state.p_c)
    x_old = pack(state_old.p_l, state_old.p_c)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_old))):
        raise FloatingPointError("non-finite pressures in residual assembly")
    return problem.residual(x, x_old, dt).ravel()


def _solution(problem: FlowProblem, x, x_old, dt, iters, norm) -> FlowSolution:
    p_l, p_c = problem.unpack(x)
    p_l, p_c = p_l.copy(), p_c.copy()
    q_l, q_g, m_l, m_g, s, _ = problem.fluxes(p_l, p_c)
    s_old = saturation_from_pc(problem.unpack(x_old)[1], problem.vg)
    R = problem.residual(x, x_old, dt)
    M_l, M_g = problem.storage(p_l, p_c)
    err = tuple(float(abs(R[:, e].sum()) * dt / max(M.sum(), 1e-300)) for e, M in enumerate((M_l, M_g)))
    return FlowSolution(p_l=p_l, p_c=p_c, s_l=s, v_l=q_l, v_g=q_g, dt=dt, newton_iters=iters,
                        max_dsat=float(np.max(np.abs(s - s_old))), mass_balance_error=err,
                        residual_norm=norm)


def newton_step(state: FieldState, problem: FlowProblem, dt: float) -> FlowSolution:
    """One implicit step of length ``dt`` from ``state``; raises NewtonFailure."""
    x_old = pack(state.p_l, state.p_c)
    x, it, norm = problem.newton(x_old, x_old, dt)
    return _solution(problem, x, x_old, dt, it, norm)


def adaptive_flow_step(state: FieldState, problem: FlowProblem, dt: float,
                       dt_limit: float = np.inf) -> FlowSolution:
    """Take one accepted step starting with ``dt`` (never longer than ``dt_limit``).

    Newton failures halve the step; a saturation change above
    ``max_sat_change`` rejects it and retries with half the step. The
    returned ``next_dt`` grows by ``config.growth`` after easy convergence.
    """
    cfg = problem.config
    dt = min(dt, cfg.dt_max, dt_limit)
    rejected = 0
    while True:
        if dt < cfg.dt_min and dt < dt_limit:
            raise FlowError(f"time step {dt:.3e} s fell below dt_min={cfg.dt_min} at t={state.t:.1f} s")
        try:
            sol = newton_step(state, problem, dt)
        except NewtonFailure:
            dt *= 0.5
            rejected += 1
            continue
        if sol.max_dsat > cfg.max_sat_change:
            dt *= 0.5
            rejected += 1
            continue
        nxt = min(dt * cfg.growth, cfg.dt_max) if sol.newton_iters <= cfg.easy_iters else dt
        sol.next_dt = max(nxt, sol.dt) if dt >= dt_limit else nxt
        sol.rejected = rejected
        return sol


# -- initial states ---------------------------------------------------------------
def hydrostatic_gas_pressure(grid: StructuredGrid, fluid: FluidParams = FluidParams(),
                             p_top: float = P_ATM, x_O2: float = X_O2_AIR) -> np.ndarray:
    """Discretely balanced gas pressure per cell for a gas column open at the top."""
    M = x_O2 * M_O2 + (1.0 - x_O2) * M_AIR_REF
    a = M * fluid.g / (fluid.R_gas * fluid.T)
    p = np.empty(grid.ny)
    # top cell: p - p_top = rho(p) g dy/2
    p[-1] = p_top / (1.0 - a * 0.5 * grid.dy)
    for j in range(grid.ny - 2, -1, -1):
        # p_j - p_{j+1} = 0.5 (rho_j + rho_{j+1}) g dy
        p[j] = (p[j + 1] + 0.5 * a * p[j + 1] * grid.dy) / (1.0 - 0.5 * a * grid.dy)
    return np.repeat(p, grid.nx)


def dry_initial_pressures(grid: StructuredGrid, vg: VanGenuchtenParams = VanGenuchtenParams(),
                          fluid: FluidParams = FluidParams(), s_init: float | None = None,
                          p_top: float = P_ATM):
    """Pressures for a uniformly dry medium (``s_l = s_init``) under atmospheric gas."""
    s0 = vg.s_l_min if s_init is None else s_init
    p_g = hydrostatic_gas_pressure(grid, fluid, p_top)
    p_c = np.full(grid.n_cells, pc_from_saturation(s0, vg))
    return p_g - p_c, p_c


def hydrostatic_pressures(grid: StructuredGrid, y_wt: float, vg: VanGenuchtenParams = VanGenuchtenParams(),
                          fluid: FluidParams = FluidParams(), p_top: float = P_ATM):
    """Liquid hydrostatic profile with the water table at height ``y_wt``."""
    p_g = hydrostatic_gas_pressure(grid, fluid, p_top)
    _, yc = grid.cell_centers()
    p_wt = np.interp(y_wt, yc[:: grid.nx], p_g[:: grid.nx])
    p_l = p_wt - fluid.rho_l * fluid.g * (yc - y_wt)
    p_c = np.minimum(p_g - p_l, vg.pc_max)
    return p_l, p_c


class StepLog:
    """Append-only CSV of accepted flow steps."""

    header = ("t", "dt", "newton_iters", "max_dsat", "mass_balance_error")

    def __init__(self, path=None):
        self.rows: list[tuple] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(self.header)

    def add(self, t: float, sol: FlowSolution):
        row = (t, sol.dt, sol.newton_iters, sol.max_dsat, max(sol.mass_balance_error))
        self.rows.append(row)
        if self.path is not None:
            with self.path.open("a", newline="") as fh:
                csv.writer(fh).writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


def run_flow(state: FieldState, problem: FlowProblem, t_end: float, dt0: float | None = None,
             log: StepLog | None = None, stationary_tol: float | None = None):
    """Advance the flow alone to ``t_end``; returns the final state and step count.

    With ``stationary_tol`` the run stops early once ``max|ds_l/dt|`` drops
    below it.
    """
    dt = problem.config.dt_init if dt0 is None else dt0
    st = state.copy()
    steps = 0
    while st.t < t_end * (1 - 1e-12):
        sol = adaptive_flow_step(st, problem, dt, t_end - st.t)
        rate = sol.max_dsat / sol.dt
        st.p_l, st.p_c, st.s_l, st.v_l, st.v_g = sol.p_l, sol.p_c, sol.s_l, sol.v_l, sol.v_g
        st.t += sol.dt
        steps += 1
        dt = sol.next_dt
        if log is not None:
            log.add(st.t, sol)
        if stationary_tol is not None and rate < stationary_tol:
            break
    return st, steps
