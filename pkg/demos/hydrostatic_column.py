"""Fill a dry 30 cm column from below, let it rest and compare with the closed-form fringe.

    python demos/hydrostatic_column.py [--cells 128]
"""
import argparse

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from fringesim.constitutive import FluidParams, VanGenuchtenParams, saturation_from_pc
from fringesim.grid import FieldState, build_grid
from fringesim.twophase import FlowBC, FlowProblem, dry_initial_pressures, run_flow


def closed_form(water, height, grid, vg, fl):
    def s(y, ywt):
        return saturation_from_pc(max(fl.rho_l * fl.g * (y - ywt), 0.0), vg)

    ywt = brentq(lambda w: quad(s, 0, height, args=(w,), points=[w], limit=200)[0] - water, 0.0, height)
    return ywt, np.array([s(y, ywt) for y in grid.yc])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=128)
    ap.add_argument("--fill", type=float, default=0.15, help="water depth added, as m of pore space")
    args = ap.parse_args()
    vg, fl = VanGenuchtenParams(), FluidParams()
    g = build_grid((0.01, 0.30), (1, args.cells))
    p_l, p_c = dry_initial_pressures(g)
    st = FieldState(g, p_l, p_c, {}, saturation_from_pc(p_c, vg), np.zeros(g.n_faces), np.zeros(g.n_faces))
    q = np.zeros(g.n_faces)
    q[g.boundary_faces("bottom")] = 0.01 * 0.006 * 0.39 * args.fill / 3600.0
    prob = FlowProblem(g, bc=FlowBC.open_top(g, q_in=q))
    st, n1 = run_flow(st, prob, 3600.0)
    st, n2 = run_flow(st, prob.with_bc(FlowBC.open_top(g)), 30 * 86400.0, dt0=60.0, stationary_tol=1e-10)
    ywt, s_ref = closed_form(st.s_l.sum() * g.dy, 0.30, g, vg, fl)
    print(f"{n1 + n2} flow steps, rest reached after {st.t / 3600:.1f} h; water table at {ywt * 100:.2f} cm")
    print(" y [cm]   s_l     closed form")
    for j in range(0, g.ny, max(1, g.ny // 32)):
        print(f"{g.yc[j] * 100:7.2f}  {st.s_l[j]:.4f}  {s_ref[j]:.4f}")
    print(f"max |difference| {np.abs(st.s_l - s_ref).max():.2e}")


if __name__ == "__main__":
    main()
