import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fringesim.constitutive import (FluidParams, MediumParams, VanGenuchtenParams, effective_diffusion, gas_density,
                                    gas_state, henry_equilibrium, pc_from_saturation, relative_permeability,
                                    saturation_from_pc)

VG = VanGenuchtenParams()
FLUID = FluidParams()


def test_zero_capillary_pressure_is_saturated():
    assert saturation_from_pc(0.0, VG) == 1.0
    assert saturation_from_pc(-50.0, VG) == 1.0


def test_saturation_at_inverse_alpha():
    # s_e = (1 + 1)^(-m)
    assert saturation_from_pc(1 / 1.21e-3, VG) == pytest.approx(2.0 ** -(1 - 1 / 5.48), rel=1e-12)
    # the listed 0.5669 is 2**-0.81752 rounded loosely; the exact value is 0.56741
    assert saturation_from_pc(826.45, VG) == pytest.approx(0.5669, abs=1e-3)


def test_five_cm_water_column_nearly_saturated():
    assert saturation_from_pc(490.5, VG) == pytest.approx(0.955, abs=1e-3)


def test_inverse_examples():
    assert pc_from_saturation(1.0, VG) == 0.0
    assert pc_from_saturation(0.5669, VG) == pytest.approx(826.45, rel=1e-3)
    assert pc_from_saturation(VG.s_l_min, VG) == pytest.approx(VG.pc_max)
    assert saturation_from_pc(10 * VG.pc_max, VG) == VG.s_l_min


def test_inverse_rejects_out_of_range():
    with pytest.raises(ValueError):
        pc_from_saturation(1.2, VG)
    with pytest.raises(ValueError):
        pc_from_saturation(1e-5, VG)


@given(st.floats(min_value=1.0001e-3, max_value=0.999999))
def test_pc_saturation_round_trip(s):
    assert saturation_from_pc(pc_from_saturation(s, VG), VG) == pytest.approx(s, rel=1e-10)


def test_relative_permeability_examples():
    assert relative_permeability(1.0, "liquid", VG) == 1.0
    assert relative_permeability(0.0, "liquid", VG) == 0.0
    vg = VanGenuchtenParams(n=1.0 / (1 - 0.81752))
    assert relative_permeability(0.5, "liquid", vg) == pytest.approx(0.0952, abs=2e-4)
    with pytest.raises(ValueError):
        relative_permeability(0.5, "oil", VG)


def test_monotonicity():
    pc = np.linspace(1.0, 0.999 * VG.pc_max, 400)
    assert np.all(np.diff(saturation_from_pc(pc, VG)) < 0)
    s = np.linspace(0.01, 0.99, 400)
    assert np.all(np.diff(relative_permeability(s, "liquid", VG)) > 0)
    assert np.all(np.diff(relative_permeability(s, "gas", VG)) < 0)


@given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e9, max_value=1e9))
def test_closures_bounded(pc):
    s = saturation_from_pc(pc, VG)
    assert VG.s_l_min <= s <= 1.0
    for phase in ("liquid", "gas"):
        assert 0.0 <= relative_permeability(s, phase, VG) <= 1.0


def test_effective_diffusion_examples():
    assert effective_diffusion(0.0, 0.39, 2.2e-9) == 0.0
    assert effective_diffusion(1.0, 0.39, 1.0) == pytest.approx(0.2849, abs=1e-4)
    assert effective_diffusion(0.5, 0.39, 2.2e-9) == pytest.approx(1.567e-10, rel=1e-3)


def test_henry_examples():
    assert henry_equilibrium(0.0) == 0.0
    c_g = 8.68 * 32e-3  # kg/m^3
    assert henry_equilibrium(c_g) == pytest.approx(9.11e-3, rel=2e-3)
    assert henry_equilibrium(2 * c_g) == pytest.approx(2 * henry_equilibrium(c_g))


@given(st.floats(0, 10), st.floats(0.01, 100))
def test_homogeneity(c, lam):
    assert henry_equilibrium(lam * c) == pytest.approx(lam * henry_equilibrium(c), rel=1e-12, abs=1e-300)
    assert effective_diffusion(0.7, 0.39, lam * c) == pytest.approx(
        lam * effective_diffusion(0.7, 0.39, c), rel=1e-12, abs=1e-300)


def test_gas_state():
    assert gas_state(np.zeros(2), FLUID, [0.032, 0.028]) == (0.0, 0.0)
    nu = 101325 / (8.314 * 294.15)
    assert nu == pytest.approx(41.43, abs=0.01)
    assert 0.2095 * nu == pytest.approx(8.68, abs=0.01)
    p, rho = gas_state(np.array([0.2095 * nu, 0.7905 * nu]), FLUID, [0.031999, 0.028013])
    assert p == pytest.approx(101325)
    assert rho == pytest.approx(gas_density(101325, 0.2095, FLUID))
    with pytest.raises(ValueError):
        gas_state(np.array([-1.0, 1.0]), FLUID, [1, 1])


def test_parameter_validation():
    with pytest.raises(ValueError):
        VanGenuchtenParams(n=0.9)
    with pytest.raises(ValueError):
        MediumParams(phi=1.2)
    with pytest.raises(ValueError):
        FluidParams(rho_l=0)
