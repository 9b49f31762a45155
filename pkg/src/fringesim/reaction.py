"""Per-cell reaction network for E. coli in the capillary fringe.

Contois growth (aerobic and anaerobic), first-order decay, reversible
attachment with a blocking deposition function and kinetic gas-liquid
oxygen exchange. The cell state is integrated in bulk amounts
``(theta_l c_S, theta_l c_O2, theta_l c_lX, theta_s c_sX, theta_g c_gO2)``
with the water contents frozen over the step.

Concentrations are mass concentrations in kg/m^3 (numerically g/L); the
attached biomass ``c_s_X`` is per unit volume of solid. Growth constants
are stored in the units of the batch experiments (1/h, L/(h g)) and
converted to SI only when the kernel arguments are built.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .constitutive import MediumParams
from .rkf45 import OK, UNDERFLOW, rkf45_integrate

HOUR = 3600.0
CELL_MASS = 5e-13  # g dry weight per cell
N_SPECIES = 5
S, O2, XL, XS, GO2 = range(N_SPECIES)


class ReactionError(RuntimeError):
    pass


@dataclass(frozen=True)
class GrowthParams:
    mu_max_a: float = 0.324  # 1/h
    mu_max_an: float = 0.255  # 1/h
    d_c: float = 3.54e-3  # 1/h
    B_S_a: float = 1.81
    B_S_an: float = 3.07
    B_O2: float = 0.019
    Y_S_a: float = 0.95  # g dw / g DOC
    Y_S_an: float = 0.163
    Y_O2: float = 0.49  # g dw / g O2
    m_o: float = 0.003  # L / (h g dw)

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if val < 0:
                raise ValueError(f"growth parameter {name} must be non-negative")
        if min(self.Y_S_a, self.Y_S_an, self.Y_O2) <= 0:
            raise ValueError("yields must be positive")


@dataclass(frozen=True)
class AdhesionParams:
    """Attachment kinetics; ``c_s_X_max`` is attached biomass per porous-medium volume."""

    k_att: float = 3e-4  # 1/s
    k_det: float = 6.2e-6  # 1/s
    c_s_X_max: float = 1.6e8 * CELL_MASS * 1e3  # kg/m^3 of porous medium

    def __post_init__(self):
        if min(self.k_att, self.k_det, self.c_s_X_max) < 0:
            raise ValueError("adhesion parameters must be non-negative")


@dataclass(frozen=True)
class ExchangeParams:
    D_l_O2: float = 2.2e-9  # m^2/s
    r_p: float = 0.9e-3  # m
    kappa_exposed: float = 1.0
    k_H: float = 3.28e-2

    def __post_init__(self):
        if min(self.D_l_O2, self.r_p, self.k_H) <= 0:
            raise ValueError("exchange parameters must be positive")
        if not 0 < self.kappa_exposed <= 1:
            raise ValueError("kappa_exposed must lie in (0, 1]")


@dataclass
class CellReactionState:
    """Concentrations and frozen phase contents of one cell (or arrays of cells)."""

    c_l_S: np.ndarray
    c_l_O2: np.ndarray
    c_l_X: np.ndarray
    c_s_X: np.ndarray
    c_g_O2: np.ndarray
    theta_l: np.ndarray
    theta_g: np.ndarray
    theta_s: np.ndarray
    s_l: np.ndarray
    v_norm: np.ndarray = field(default_factory=lambda: np.zeros(()))
    theta_l_floor: float = 0.0

    @property
    def s_g(self):
        return 1.0 - np.asarray(self.s_l)

    @property
    def c_X(self):
        th = np.maximum(self.theta_l, self.theta_l_floor)
        return np.asarray(self.c_l_X) + np.asarray(self.c_s_X) * self.theta_s / th

    def bulk(self) -> np.ndarray:
        """Bulk amounts per unit porous-medium volume, species on the last axis."""
        return np.stack(np.broadcast_arrays(
            self.theta_l * self.c_l_S, self.theta_l * self.c_l_O2, self.theta_l * self.c_l_X,
            self.theta_s * self.c_s_X, self.theta_g * self.c_g_O2,
        ), axis=-1).astype(float)

    def with_bulk(self, y) -> "CellReactionState":
        y = np.asarray(y, dtype=float)

        def div(a, th):
            th = np.asarray(th, dtype=float)
            return np.where(th > 0, a / np.where(th > 0, th, 1.0), 0.0)

        return CellReactionState(
            c_l_S=div(y[..., S], self.theta_l), c_l_O2=div(y[..., O2], self.theta_l),
            c_l_X=div(y[..., XL], self.theta_l), c_s_X=div(y[..., XS], self.theta_s),
            c_g_O2=np.where(np.asarray(self.theta_g) > 0, div(y[..., GO2], self.theta_g), self.c_g_O2),
            theta_l=self.theta_l, theta_g=self.theta_g, theta_s=self.theta_s, s_l=self.s_l,
            v_norm=self.v_norm, theta_l_floor=self.theta_l_floor,
        )


def specific_growth_rates(c_S, c_O2, c_X, gp: GrowthParams):
    """Aerobic and anaerobic Contois rates [1/h]; the 0/0 corner is zero."""
    c_S = np.asarray(c_S, dtype=float)
    c_O2 = np.asarray(c_O2, dtype=float)
    c_X = np.asarray(c_X, dtype=float)

    def frac(num, den):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    mu_a = gp.mu_max_a * frac(c_S, c_X * gp.B_S_a + c_S) * frac(c_O2, c_X * gp.B_O2 + c_O2)
    mu_an = np.maximum(gp.mu_max_an * frac(c_S, c_X * gp.B_S_an + c_S) - mu_a, 0.0)
    if mu_a.ndim == 0:
        return float(mu_a), float(mu_an)
    return mu_a, mu_an


def mass_exchange_coefficient(ep: ExchangeParams, v_norm):
    """Stagnant-film coefficient ``beta = D (2/r_p + 1/delta)`` [m/s]."""
    v = np.asarray(v_norm, dtype=float)
    if np.any(v < 0):
        raise ValueError("velocity magnitude must be non-negative")
    inv_delta = np.sqrt(v / (np.pi * ep.r_p * ep.D_l_O2))
    beta = ep.D_l_O2 * (2.0 / ep.r_p + inv_delta)
    return beta if beta.ndim else float(beta)


def interfacial_area(s_g, medium: MediumParams, kappa_exposed: float | None = None, r_p: float | None = None):
    """Gas-water interfacial area per unit volume, ``kappa s_g 6 phi / r_p`` [1/m]."""
    kappa = medium.kappa_exposed if kappa_exposed is None else kappa_exposed
    rp = medium.r_p if r_p is None else r_p
    out = kappa * np.asarray(s_g, dtype=float) * 6.0 * medium.phi / rp
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class KineticParams:
    growth: GrowthParams = GrowthParams()
    adhesion: AdhesionParams = AdhesionParams()
    exchange: ExchangeParams = ExchangeParams()


def reaction_rhs(state: CellReactionState, gp: GrowthParams, ap: AdhesionParams,
                 ep: ExchangeParams, medium: MediumParams):
    """Time derivatives of the bulk amounts, species on the last axis [kg/(m^3 s)]."""
    th_l = np.asarray(state.theta_l, dtype=float)
    th_s = np.asarray(state.theta_s, dtype=float)
    c_X = state.c_X
    mu_a, mu_an = specific_growth_rates(state.c_l_S, state.c_l_O2, c_X, gp)
    mu_a = np.asarray(mu_a) / HOUR
    mu_an = np.asarray(mu_an) / HOUR
    d_c = gp.d_c / HOUR
    cap = state.s_l * ap.c_s_X_max
    psi = 1.0 - np.where(cap > 0, th_s * state.c_s_X / np.where(cap > 0, cap, 1.0), 0.0)
    a_lX = -th_l * ap.k_att * psi * state.c_l_X + th_s * ap.k_det * state.c_s_X
    beta = mass_exchange_coefficient(ep, state.v_norm)
    a_gw = interfacial_area(state.s_g, medium, ep.kappa_exposed, ep.r_p)
    e_l = beta * a_gw * (ep.k_H * state.c_g_O2 - state.c_l_O2)
    dX = th_l * ((mu_a + mu_an) * c_X - d_c * state.c_l_X) + a_lX
    dXs = -a_lX - th_s * d_c * state.c_s_X
    dS = -th_l * (mu_a / gp.Y_S_a + mu_an / gp.Y_S_an) * c_X
    dO2 = -th_l * (mu_a / gp.Y_O2 + gp.m_o / HOUR * state.c_l_O2) * c_X + e_l
    dG = -e_l
    return np.stack(np.broadcast_arrays(dS, dO2, dX, dXs, dG), axis=-1)


# --- compiled kernel ------------------------------------------------------
# per-cell argument vector layout
(A_THL, A_THS, A_THG, A_SL, A_BA, A_CAP, A_KATT, A_KDET, A_MUA, A_MUAN, A_DC,
 A_BSA, A_BSAN, A_BO2, A_YSA, A_YSAN, A_YO2, A_MO, A_KH, A_THLF, A_POOL) = range(21)
N_ARGS = 21
# exchange relaxation rate [1/s] above which dissolved and gaseous O2 are
# carried as one pool held at Henry equilibrium
DEFAULT_POOL_RATE = 1.0


@njit(cache=True, nogil=True)
def _liquid_share(a):
    """Fraction of a pooled O2 amount that sits in the liquid at equilibrium."""
    wl = a[A_KH] * a[A_THL]
    tot = wl + a[A_THG]
    return wl / tot if tot > 0 else 0.0


@njit(cache=True, nogil=True)
def _cell_rhs(t, y, a, out):
    th_l = a[A_THL]
    th_s = a[A_THS]
    th_g = a[A_THG]
    inv_l = 1.0 / th_l if th_l > 0 else 0.0
    c_S = y[S] * inv_l
    pooled = a[A_POOL] > 0.0
    if pooled:
        w_l = _liquid_share(a)
        c_O2 = w_l * (y[O2] + y[GO2]) * inv_l
    else:
        c_O2 = y[O2] * inv_l
    c_lX = y[XL] * inv_l
    c_sX = y[XS] / th_s if th_s > 0 else 0.0
    c_g = y[GO2] / th_g if th_g > 0 else 0.0
    th_c = max(th_l, a[A_THLF])
    c_X = c_lX + (y[XS] / th_c if th_c > 0 else 0.0)

    den = c_X * a[A_BSA] + c_S
    f_a = c_S / den if den > 0 else 0.0
    den = c_X * a[A_BO2] + c_O2
    f_o = c_O2 / den if den > 0 else 0.0
    mu_a = a[A_MUA] * f_a * f_o
    den = c_X * a[A_BSAN] + c_S
    f_an = c_S / den if den > 0 else 0.0
    mu_an = max(a[A_MUAN] * f_an - mu_a, 0.0)

    cap = a[A_CAP]
    psi = 1.0 - (y[XS] / cap if cap > 0 else 0.0)
    a_lX = -th_l * a[A_KATT] * psi * c_lX + a[A_KDET] * y[XS]
    e_l = 0.0 if pooled else a[A_BA] * (a[A_KH] * c_g - c_O2)
    d_c = a[A_DC]
    out[XL] = th_l * ((mu_a + mu_an) * c_X - d_c * c_lX) + a_lX
    out[XS] = -a_lX - d_c * y[XS]
    out[S] = -th_l * (mu_a / a[A_YSA] + mu_an / a[A_YSAN]) * c_X
    r_O2 = -th_l * (mu_a / a[A_YO2] + a[A_MO] * c_O2) * c_X
    if pooled:
        out[O2] = w_l * r_O2
        out[GO2] = (1.0 - w_l) * r_O2
    else:
        out[O2] = r_O2 + e_l
        out[GO2] = -e_l


@njit(nogil=True)
def _integrate_range(Y, args, dt, rtol, atol, lo, hi, status, clipped, nsteps):
    for c in range(lo, hi):
        if args[c, A_POOL] > 0.0:
            # fast exchange: start on the equilibrium partition
            tot = Y[c, O2] + Y[c, GO2]
            w_l = _liquid_share(args[c])
            Y[c, O2] = w_l * tot
            Y[c, GO2] = tot - Y[c, O2]
        y, st, acc, rej, clip = rkf45_integrate(_cell_rhs, Y[c], dt, args[c], rtol, atol, dt, True, 10_000_000)
        Y[c, :] = y
        status[c] = st
        clipped[c] = clip
        nsteps[c] = acc + rej


def kernel_args(theta_l, theta_s, theta_g, s_l, v_norm, kp: KineticParams, medium: MediumParams,
                theta_l_floor: float = 0.0, pool_rate: float | None = DEFAULT_POOL_RATE) -> np.ndarray:
    """Per-cell argument matrix for the compiled right-hand side (SI rates).

    Cells whose exchange relaxation rate reaches ``pool_rate`` integrate O2
    as a single equilibrium pool; ``None`` disables pooling.
    """
    gp, ap, ep = kp.growth, kp.adhesion, kp.exchange
    theta_l = np.atleast_1d(np.asarray(theta_l, dtype=float))
    n = theta_l.shape[0]
    a = np.empty((n, N_ARGS))
    a[:, A_THL] = theta_l
    a[:, A_THS] = theta_s
    a[:, A_THG] = theta_g
    a[:, A_SL] = s_l
    s_g = 1.0 - np.broadcast_to(np.asarray(s_l, dtype=float), (n,))
    a[:, A_BA] = mass_exchange_coefficient(ep, np.broadcast_to(v_norm, (n,))) * interfacial_area(
        s_g, medium, ep.kappa_exposed, ep.r_p)
    a[:, A_CAP] = np.asarray(s_l) * ap.c_s_X_max  # attached mass per bulk volume at capacity
    a[:, A_KATT] = ap.k_att
    a[:, A_KDET] = ap.k_det
    a[:, A_MUA] = gp.mu_max_a / HOUR
    a[:, A_MUAN] = gp.mu_max_an / HOUR
    a[:, A_DC] = gp.d_c / HOUR
    a[:, A_BSA] = gp.B_S_a
    a[:, A_BSAN] = gp.B_S_an
    a[:, A_BO2] = gp.B_O2
    a[:, A_YSA] = gp.Y_S_a
    a[:, A_YSAN] = gp.Y_S_an
    a[:, A_YO2] = gp.Y_O2
    a[:, A_MO] = gp.m_o / HOUR
    a[:, A_KH] = ep.k_H
    a[:, A_THLF] = theta_l_floor
    a[:, A_POOL] = 0.0
    if pool_rate is not None:
        a[:, A_POOL] = exchange_rate(a) >= pool_rate
    return a


def exchange_rate(args) -> np.ndarray:
    """Relaxation rate [1/s] of the gas-liquid O2 disequilibrium per cell."""
    args = np.atleast_2d(args)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_l = np.where(args[:, A_THL] > 0, 1.0 / np.maximum(args[:, A_THL], 1e-300), np.inf)
        inv_g = np.where(args[:, A_THG] > 0, args[:, A_KH] / np.maximum(args[:, A_THG], 1e-300), np.inf)
        rate = np.where(args[:, A_BA] > 0, args[:, A_BA] * (inv_l + inv_g), 0.0)
    return rate


@dataclass
class ReactionDiagnostics:
    clipped: np.ndarray  # magnitude removed by clipping negatives, per cell
    steps: np.ndarray  # RKF45 steps (accepted + rejected) per cell


def integrate_bulk(Y, args, dt, rtol=1e-6, atol=1e-12, threads: int = 1):
    """Integrate bulk amounts ``Y`` (n, 5) in place over ``dt`` seconds.

    Cells are independent; with ``threads > 1`` contiguous cell blocks run
    concurrently, which gives bit-identical results to a serial run.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not (rtol > 0 and atol > 0):
        raise ValueError("tolerances must be positive")
    Y = np.ascontiguousarray(Y, dtype=float)
    args = np.ascontiguousarray(args, dtype=float)
    n = Y.shape[0]
    status = np.zeros(n, dtype=np.int64)
    clipped = np.zeros(n)
    nsteps = np.zeros(n, dtype=np.int64)
    if threads <= 1 or n < 2 * threads:
        _integrate_range(Y, args, dt, rtol, atol, 0, n, status, clipped, nsteps)
    else:
        bounds = np.linspace(0, n, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(_integrate_range, Y, args, dt, rtol, atol, lo, hi, status, clipped, nsteps)
                    for lo, hi in zip(bounds[:-1], bounds[1:])]
            for f in futs:
                f.result()
    bad = np.flatnonzero(status != OK)
    if bad.size:
        c = int(bad[0])
        kind = "step-size underflow" if status[c] == UNDERFLOW else "step limit reached"
        raise ReactionError(f"RKF45 {kind} in cell {c}; state={Y[c].tolist()} args={args[c].tolist()}")
    return Y, ReactionDiagnostics(clipped, nsteps)


def integrate_cell(state: CellReactionState, kp: KineticParams, medium: MediumParams, dt: float,
                   rtol: float = 1e-6, atol: float = 1e-12, pool_rate: float | None = DEFAULT_POOL_RATE):
    """Integrate one cell (or a batch of cells) over ``dt`` seconds."""
    y = np.atleast_2d(state.bulk())
    n = y.shape[0]
    bc = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,))  # noqa: E731
    args = kernel_args(bc(state.theta_l), bc(state.theta_s), bc(state.theta_g), bc(state.s_l),
                       bc(state.v_norm), kp, medium, state.theta_l_floor, pool_rate)
    y, diag = integrate_bulk(y, args, dt, rtol, atol)
    if np.ndim(state.theta_l) == 0:
        y = y[0]
    return state.with_bulk(y), diag
