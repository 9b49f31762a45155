"""Closure relations for the two-phase porous medium.

Capillary pressure / saturation (van Genuchten), Mualem relative
permeabilities, Millington-Quirk effective diffusion, the ideal-gas state of
the gas phase and Henry's law for dissolved oxygen. All functions accept
scalars or numpy arrays and are free of side effects.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

R_GAS = 8.314
M_O2 = 0.031999
# remainder of dry air (reference gas component), taken as nitrogen
M_AIR_REF = 0.028013


@dataclass(frozen=True)
class VanGenuchtenParams:
    alpha: float = 1.21e-3  # 1/Pa
    n: float = 5.48
    s_l_min: float = 1e-3
    m: float = field(init=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.n > 1:
            raise ValueError(f"n must exceed 1, got {self.n}")
        if not 0 < self.s_l_min < 1:
            raise ValueError(f"s_l_min must lie in (0, 1), got {self.s_l_min}")
        object.__setattr__(self, "m", 1.0 - 1.0 / self.n)

    @property
    def pc_max(self) -> float:
        """Capillary pressure cap, reached at the residual saturation floor."""
        return float(pc_from_saturation(self.s_l_min, self))


@dataclass(frozen=True)
class MediumParams:
    phi: float = 0.39
    K: float = 2.6e-11  # m^2
    r_p: float = 0.9e-3  # m
    kappa_exposed: float = 1.0

    def __post_init__(self):
        if not 0 < self.phi < 1:
            raise ValueError(f"porosity must lie in (0, 1), got {self.phi}")
        if not self.K > 0:
            raise ValueError("permeability must be positive")
        if not self.r_p > 0:
            raise ValueError("particle diameter must be positive")
        if not 0 < self.kappa_exposed <= 1:
            raise ValueError("kappa_exposed must lie in (0, 1]")


@dataclass(frozen=True)
class FluidParams:
    rho_l: float = 1000.0
    mu_l: float = 1.0e-3
    mu_g: float = 1.8e-5
    T: float = 294.15
    R_gas: float = R_GAS
    g: float = 9.81
    k_H: float = 3.28e-2

    def __post_init__(self):
        for name in ("rho_l", "mu_l", "mu_g", "T", "R_gas", "g", "k_H"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


def saturation_from_pc(p_c, vg: VanGenuchtenParams):
    """Liquid saturation for capillary pressure ``p_c`` [Pa].

    Non-positive capillary pressures give full saturation; the result never
    drops below ``vg.s_l_min``.
    """
    p = np.asarray(p_c, dtype=float)
    ap = vg.alpha * np.maximum(p, 0.0)
    s = np.exp(-vg.m * np.log1p(ap**vg.n))
    s = np.maximum(s, vg.s_l_min)
    return s if s.ndim else float(s)


def pc_from_saturation(s_l, vg: VanGenuchtenParams):
    """Inverse of :func:`saturation_from_pc` on ``[s_l_min, 1]``."""
    s = np.asarray(s_l, dtype=float)
    if np.any(s < vg.s_l_min * (1 - 1e-12)) or np.any(s > 1.0) or np.any(~np.isfinite(s)):
        raise ValueError(
            f"saturation outside [{vg.s_l_min}, 1]: min={np.min(s)}, max={np.max(s)}"
        )
    s = np.clip(s, vg.s_l_min, 1.0)
    # s**(-1/m) - 1 without cancellation near s = 1
    x = np.expm1(-np.log(s) / vg.m)
    p = np.maximum(x, 0.0) ** (1.0 / vg.n) / vg.alpha
    return p if p.ndim else float(p)


def relative_permeability(s_l, phase: str, vg: VanGenuchtenParams):
    """Mualem-van Genuchten relative permeability of ``phase``."""
    s = np.clip(np.asarray(s_l, dtype=float), 0.0, 1.0)
    m = vg.m
    with np.errstate(divide="ignore"):
        se_pow = s ** (1.0 / m)
    if phase == "liquid":
        kr = np.sqrt(s) * (1.0 - (1.0 - se_pow) ** m) ** 2
    elif phase == "gas":
        kr = np.sqrt(1.0 - s) * (1.0 - se_pow) ** (2.0 * m)
    else:
        raise ValueError(f"unknown phase {phase!r}")
    kr = np.clip(kr, 0.0, 1.0)
    return kr if kr.ndim else float(kr)


def effective_diffusion(s_alpha, phi: float, D: float):
    """Millington-Quirk effective diffusivity ``s^2 phi^(4/3) D``."""
    s = np.asarray(s_alpha, dtype=float)
    out = s * s * phi ** (4.0 / 3.0) * D
    return out if out.ndim else float(out)


def henry_equilibrium(c_g_O2, k_H: float = 3.28e-2):
    """Liquid-phase O2 concentration in equilibrium with gas concentration ``c_g_O2``."""
    out = k_H * np.asarray(c_g_O2, dtype=float)
    return out if out.ndim else float(out)


def gas_state(molar_concentrations, fluid: FluidParams, molar_masses):
    """Dalton/ideal-gas closure.

    ``molar_concentrations`` has the component index on the first axis
    (mol/m^3); returns total gas pressure [Pa] and mass density [kg/m^3].
    """
    c = np.asarray(molar_concentrations, dtype=float)
    M = np.asarray(molar_masses, dtype=float)
    if np.any(c < 0):
        raise ValueError("molar concentrations must be non-negative")
    M = M.reshape(M.shape + (1,) * (c.ndim - 1))
    p_g = fluid.R_gas * fluid.T * c.sum(axis=0)
    rho_g = (c * M).sum(axis=0)
    if np.ndim(p_g) == 0:
        return float(p_g), float(rho_g)
    return p_g, rho_g


def gas_density(p_g, x_O2, fluid: FluidParams):
    """Gas mass density at pressure ``p_g`` with O2 mole fraction ``x_O2``.

    The remainder of the gas is the reference air component.
    """
    nu = np.asarray(p_g, dtype=float) / (fluid.R_gas * fluid.T)
    x = np.asarray(x_O2, dtype=float)
    _, rho = gas_state(np.stack(np.broadcast_arrays(x * nu, (1.0 - x) * nu)), fluid, [M_O2, M_AIR_REF])
    return rho
