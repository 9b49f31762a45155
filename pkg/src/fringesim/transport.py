"""Component transport on the structured grid.

Advection uses a second-order Godunov scheme: piecewise-linear
reconstruction with minmod-limited slopes, evolved exactly over one explicit
step (reconstruct-evolve-average), so the upwind face value is
``c_up + 0.5 * (1 - nu) * slope`` with ``nu`` the local Courant number.
Two-dimensional problems are split into x and y sweeps whose order
alternates between calls.

Diffusion of gaseous species is implicit (central differences, backward
Euler) with optional first-order upwind advection in the same solve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import effective_diffusion
from .grid import StructuredGrid

DEFAULT_CFL = 0.4


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransportRegime:
    """How each transported component is discretised."""

    regimes: dict  # component -> "explicit_advective" | "implicit_diffusive"
    cfl: float = DEFAULT_CFL

    def __post_init__(self):
        if not 0 < self.cfl < 1:
            raise ValueError(f"CFL must lie in (0, 1), got {self.cfl}")
        for name, kind in self.regimes.items():
            if kind not in ("explicit_advective", "implicit_diffusive"):
                raise ValueError(f"{name}: unknown transport regime {kind!r}")


def minmod(a, b):
    """Zero for opposite signs, otherwise the argument of smaller magnitude."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    same = np.sign(a) * np.sign(b) > 0  # avoids underflow of a * b
    out = np.where(same, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)
    return out if out.ndim else float(out)


def _line_outflow(F):
    """Sum of outgoing volumetric fluxes of each cell along the line axis."""
    return np.maximum(F[..., 1:], 0.0) + np.maximum(-F[..., :-1], 0.0)


def cfl_dt(v, theta, grid: StructuredGrid, cfl: float = DEFAULT_CFL) -> float:
    """Largest explicit advection step for Darcy face fluxes ``v`` [m/s].

    Per cell and sweep direction the step keeps the outgoing water volume
    below ``cfl`` times the stored water volume; for one-directional flow
    this is ``cfl * theta * dx / |v|``. Returns ``inf`` without flow.
    """
    Fx, Fy = _split_faces(np.asarray(v) * grid.face_area(), grid)
    vol = np.asarray(theta, dtype=float).reshape(grid.ny, grid.nx) * grid.cell_volume
    out = np.concatenate([
        (_line_outflow(Fx)).ravel(),
        (_line_outflow(Fy.T)).T.ravel(),
    ])
    vols = np.concatenate([vol.ravel(), vol.ravel()])
    active = out > 0
    if not np.any(active):
        return np.inf
    return float(cfl * np.min(vols[active] / out[active]))


def _split_faces(face_values, grid: StructuredGrid):
    nxf = grid.n_xfaces
    fx = np.asarray(face_values[:nxf]).reshape(grid.ny, grid.nx + 1)
    fy = np.asarray(face_values[nxf:]).reshape(grid.ny + 1, grid.nx)
    return fx, fy


def advect_1d(c, F, vol, dt, inflow_lo=None, inflow_hi=None, *, periodic=False, limiter=True):
    """One explicit advection step along the last axis.

    Parameters
    ----------
    c : (..., m) concentrations at the start of the step
    F : (..., m + 1) volumetric face fluxes [m^3/s], positive towards +axis
        (for ``periodic`` the first and last face are the same face)
    vol : (..., m) water volume ``theta * V`` at the start of the step
    inflow_lo, inflow_hi : concentrations entering through the end faces
        when the flux points inwards; ``None`` means zero concentration.

    Returns
    -------
    mass : (..., m) new stored mass ``theta * V * c``
    boundary : (..., 2) mass that left through the low and high end faces
    """
    c = np.asarray(c, dtype=float)
    F = np.asarray(F, dtype=float)
    vol = np.asarray(vol, dtype=float)
    lead = c.shape[:-1]
    lo_in = np.broadcast_to(0.0 if inflow_lo is None else inflow_lo, lead)
    hi_in = np.broadcast_to(0.0 if inflow_hi is None else inflow_hi, lead)

    if periodic:
        ghost_lo, ghost_hi = c[..., -1], c[..., 0]
    else:
        # inflow ghosts carry the boundary value, outflow ends are zero-gradient
        ghost_lo = np.where(F[..., 0] > 0, lo_in, c[..., 0])
        ghost_hi = np.where(F[..., -1] < 0, hi_in, c[..., -1])
    ext = np.concatenate([ghost_lo[..., None], c, ghost_hi[..., None]], axis=-1)
    if limiter:
        slope = minmod(ext[..., 1:-1] - ext[..., :-2], ext[..., 2:] - ext[..., 1:-1])
    else:
        slope = np.zeros_like(c)
    if not periodic:
        # boundary cells fall back to first order
        slope = slope.copy()
        slope[..., 0] = 0.0
        slope[..., -1] = 0.0

    with np.errstate(divide="ignore", invalid="ignore"):
        nu_cell_pos = np.where(vol > 0, np.maximum(F[..., 1:], 0.0) * dt / vol, 0.0)
        nu_cell_neg = np.where(vol > 0, np.maximum(-F[..., :-1], 0.0) * dt / vol, 0.0)
    if np.any(nu_cell_pos + nu_cell_neg > 1.0 + 1e-12):
        raise TransportError("CFL condition violated in advection step")

    # face values, m + 1 faces
    face_c = np.empty(F.shape)
    # positive flux: upwind is the cell below the face
    up_lo = c[..., :-1] + 0.5 * (1.0 - nu_cell_pos[..., :-1]) * slope[..., :-1]
    up_hi = c[..., 1:] - 0.5 * (1.0 - nu_cell_neg[..., 1:]) * slope[..., 1:]
    face_c[..., 1:-1] = np.where(F[..., 1:-1] > 0, up_lo, up_hi)
    if periodic:
        wrap_pos = c[..., -1] + 0.5 * (1.0 - nu_cell_pos[..., -1]) * slope[..., -1]
        wrap_neg = c[..., 0] - 0.5 * (1.0 - nu_cell_neg[..., 0]) * slope[..., 0]
        face_c[..., 0] = np.where(F[..., 0] > 0, wrap_pos, wrap_neg)
        face_c[..., -1] = face_c[..., 0]
    else:
        face_c[..., 0] = np.where(F[..., 0] > 0, lo_in, c[..., 0])
        face_c[..., -1] = np.where(F[..., -1] < 0, hi_in, c[..., -1])

    flux = F * face_c * dt
    mass = vol * c - (flux[..., 1:] - flux[..., :-1])
    boundary = np.stack([-flux[..., 0], flux[..., -1]], axis=-1)
    if periodic:
        boundary = np.zeros_like(boundary)
    return mass, boundary


@dataclass
class AdvectionResult:
    c: np.ndarray
    theta: np.ndarray  # flux-consistent water content at the end of the step
    boundary_mass: np.ndarray  # mass that left through each boundary face (kg)


def advect_step(c, v, theta_old, dt, grid: StructuredGrid, inflow=None, *, theta_new=None,
                order: str = "xy", limiter: bool = True) -> AdvectionResult:
    """Advance cell concentrations ``c`` by one explicit advection step.

    ``v`` are Darcy face fluxes [m/s]; ``inflow`` holds per-face
    concentrations used where the flux enters the domain (``nan`` or
    ``None`` for zero). The water content at the end of the step follows
    from the fluxes so that a uniform concentration is preserved; pass
    ``theta_new`` to divide by an externally supplied water content instead.
    """
    nx, ny = grid.nx, grid.ny
    V = grid.cell_volume
    Fx, Fy = _split_faces(np.asarray(v) * grid.face_area(), grid)
    if inflow is None:
        inflow = np.zeros(grid.n_faces)
    inflow = np.nan_to_num(np.asarray(inflow, dtype=float), nan=0.0)
    inx, iny = _split_faces(inflow, grid)

    conc = np.asarray(c, dtype=float).reshape(ny, nx)
    vol = np.asarray(theta_old, dtype=float).reshape(ny, nx) * V
    bmass = np.zeros(grid.n_faces)
    bx, by = _split_faces(bmass, grid)  # views into bmass

    for axis in order:
        if axis == "x":
            mass, b = advect_1d(conc, Fx, vol, dt, inx[:, 0], inx[:, -1], limiter=limiter)
            vol = vol - dt * (Fx[:, 1:] - Fx[:, :-1])
            bx[:, 0] += b[:, 0]
            bx[:, -1] += b[:, 1]
        elif axis == "y":
            mass, b = advect_1d(conc.T, Fy.T, vol.T, dt, iny[0, :], iny[-1, :], limiter=limiter)
            mass = mass.T
            vol = vol - dt * (Fy[1:, :] - Fy[:-1, :])
            by[0, :] += b[:, 0]
            by[-1, :] += b[:, 1]
        else:
            raise ValueError(f"unknown sweep axis {axis!r}")
        if np.any(vol <= 0):
            raise TransportError("water volume vanished during advection sweep")
        conc = mass / vol
    theta_end = vol.ravel() / V
    if theta_new is not None:
        conc = (conc.ravel() * theta_end / np.asarray(theta_new)).reshape(ny, nx)
    return AdvectionResult(conc.ravel(), theta_end, bmass)


def face_conductance(D_cell, grid: StructuredGrid) -> np.ndarray:
    """Two-point diffusive conductance ``A/d * harmonic_mean(D)`` on interior faces (0 elsewhere)."""
    lo, hi = grid.face_cells()
    inner = (lo >= 0) & (hi >= 0)
    D = np.asarray(D_cell, dtype=float)
    d = np.where(grid.face_is_x(), grid.dx, grid.dy)
    T = np.zeros(grid.n_faces)
    Dl, Dh = D[lo[inner]], D[hi[inner]]
    with np.errstate(divide="ignore", invalid="ignore"):
        hm = np.where(Dl + Dh > 0, 2.0 * Dl * Dh / (Dl + Dh), 0.0)
    T[inner] = grid.face_area()[inner] / d[inner] * hm
    return T


def explicit_diffusion(c, D_cell, dt, grid: StructuredGrid) -> np.ndarray:
    """Mass change ``dt * sum(T (c_nb - c))`` per cell for zero-flux walls."""
    T = face_conductance(D_cell, grid)
    lo, hi = grid.face_cells()
    inner = np.flatnonzero((lo >= 0) & (hi >= 0))
    flow = T[inner] * (c[hi[inner]] - c[lo[inner]]) * dt  # lo -> gains
    dm = np.zeros(grid.n_cells)
    dm += np.bincount(lo[inner], weights=flow, minlength=grid.n_cells)
    dm -= np.bincount(hi[inner], weights=flow, minlength=grid.n_cells)
    return dm


def explicit_diffusion_dt(D_cell, theta, grid: StructuredGrid, safety: float = 0.5) -> float:
    T = face_conductance(D_cell, grid)
    lo, hi = grid.face_cells()
    inner = np.flatnonzero((lo >= 0) & (hi >= 0))
    tot = np.bincount(lo[inner], weights=T[inner], minlength=grid.n_cells)
    tot += np.bincount(hi[inner], weights=T[inner], minlength=grid.n_cells)
    vol = np.asarray(theta) * grid.cell_volume
    active = tot > 0
    if not np.any(active):
        return np.inf
    return float(safety * np.min(vol[active] / tot[active]))


@dataclass
class DiffusionResult:
    c: np.ndarray
    boundary_mass: np.ndarray  # mass that left through each boundary face (kg)


def diffuse_step(c, s_alpha, theta_old, theta_new, phi, D, dt, grid: StructuredGrid,
                 dirichlet=None, v=None, inflow=None) -> DiffusionResult:
    """Implicit Euler step of ``d(theta c)/dt = div(s^2 phi^(4/3) D grad c) - div(c v)``.

    ``dirichlet`` maps boundary face indices to fixed concentrations (all
    other boundary faces are closed to diffusion). ``v`` optionally adds
    first-order upwind advection with Darcy face fluxes; entering fluxes
    carry ``inflow[face]`` (defaults to the Dirichlet value or zero).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = grid.n_cells
    V = grid.cell_volume
    c_old = np.asarray(c, dtype=float)
    D_cell = effective_diffusion(s_alpha, phi, D) * np.ones(n)
    T = face_conductance(D_cell, grid)
    lo, hi = grid.face_cells()
    inner = np.flatnonzero((lo >= 0) & (hi >= 0))
    area = grid.face_area()

    diag = np.asarray(theta_new, dtype=float) * V / dt
    rhs = np.asarray(theta_old, dtype=float) * V / dt * c_old
    rows, cols, vals = [], [], []

    # diffusion between cells
    Ti = T[inner]
    diag = diag + np.bincount(lo[inner], Ti, n) + np.bincount(hi[inner], Ti, n)
    rows += [lo[inner], hi[inner]]
    cols += [hi[inner], lo[inner]]
    vals += [-Ti, -Ti]

    dirichlet = dict(dirichlet or {})
    bfaces = np.flatnonzero((lo < 0) | (hi < 0))
    bcell = np.where(lo[bfaces] >= 0, lo[bfaces], hi[bfaces])
    outward = np.where(lo[bfaces] >= 0, 1.0, -1.0)  # sign of +normal relative to outward
    d_half = 0.5 * np.where(grid.face_is_x()[bfaces], grid.dx, grid.dy)
    Tb = np.zeros(len(bfaces))
    cb = np.zeros(len(bfaces))
    for idx, f in enumerate(bfaces):
        if f in dirichlet:
            Tb[idx] = area[f] / d_half[idx] * D_cell[bcell[idx]]
            cb[idx] = dirichlet[f]
    diag = diag + np.bincount(bcell, Tb, n)
    rhs = rhs + np.bincount(bcell, Tb * cb, n)

    if v is not None:
        F = np.asarray(v, dtype=float) * area
        Fi = F[inner]
        pos = np.maximum(Fi, 0.0)
        neg = np.maximum(-Fi, 0.0)
        diag = diag + np.bincount(lo[inner], pos, n) + np.bincount(hi[inner], neg, n)
        rows += [hi[inner], lo[inner]]
        cols += [lo[inner], hi[inner]]
        vals += [-pos, -neg]
        Fout = F[bfaces] * outward
        c_in = np.zeros(len(bfaces))
        if inflow is not None:
            c_in = np.nan_to_num(np.asarray(inflow, dtype=float)[bfaces], nan=0.0)
        for idx, f in enumerate(bfaces):
            if f in dirichlet and (inflow is None or np.isnan(inflow[f])):
                c_in[idx] = dirichlet[f]
        diag = diag + np.bincount(bcell, np.maximum(Fout, 0.0), n)
        rhs = rhs + np.bincount(bcell, np.maximum(-Fout, 0.0) * c_in, n)
    else:
        Fout = np.zeros(len(bfaces))
        c_in = np.zeros(len(bfaces))

    # rows without storage or coupling keep their value
    idle = diag <= 1e-300
    diag = np.where(idle, 1.0, diag)
    rhs = np.where(idle, c_old, rhs)
    A = sp.csr_matrix(
        (np.concatenate([diag, *vals]), (np.concatenate([np.arange(n), *rows]), np.concatenate([np.arange(n), *cols]))),
        shape=(n, n),
    )
    c_new = spla.spsolve(A.tocsc(), rhs)
    if not np.all(np.isfinite(c_new)):
        raise TransportError("implicit diffusion solve failed")

    bmass = np.zeros(grid.n_faces)
    diff_out = Tb * (c_new[bcell] - cb)
    adv_out = np.maximum(Fout, 0.0) * c_new[bcell] - np.maximum(-Fout, 0.0) * c_in
    bmass[bfaces] = dt * (diff_out + adv_out)
    return DiffusionResult(c_new, bmass)
