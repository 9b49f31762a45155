import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fringesim.grid import build_grid
from fringesim.transport import (advect_1d, advect_step, cfl_dt, diffuse_step, explicit_diffusion, minmod,
                                 TransportError)
from oracles import observed_order, periodic_sine_error, upwind_1d


def uniform_x_flow(g, u):
    v = np.zeros(g.n_faces)
    v[: g.n_xfaces] = u
    return v


# -- cfl_dt -------------------------------------------------------------------------
def test_cfl_zero_velocity_is_unbounded():
    g = build_grid((1, 1), (4, 4))
    assert cfl_dt(np.zeros(g.n_faces), np.full(g.n_cells, 0.39), g) == np.inf


def test_cfl_example():
    g = build_grid((0.13, 0.1), (100, 4))
    u = 1.3 / 86400
    # pore velocity 1.3 m/d in a saturated medium: Darcy flux = theta * u
    dt = cfl_dt(uniform_x_flow(g, 0.39 * u), np.full(g.n_cells, 0.39), g, 0.4)
    assert dt == pytest.approx(0.4 * 1.3e-3 / u, rel=1e-12)
    assert dt == pytest.approx(34.6, abs=0.1)
    dt2 = cfl_dt(uniform_x_flow(g, 2 * 0.39 * u), np.full(g.n_cells, 0.39), g, 0.4)
    assert dt2 == pytest.approx(dt / 2, rel=1e-12)


# -- minmod ---------------------------------------------------------------------------
def test_minmod_examples():
    assert minmod(1, -1) == 0
    assert minmod(0.5, 2) == 0.5
    assert minmod(-3, -1) == -1


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_minmod_symmetric(a, b):
    assert minmod(a, b) == minmod(b, a)
    assert minmod(a, a) == a


# -- advection ------------------------------------------------------------------------
def test_uniform_concentration_preserved():
    g = build_grid((0.5, 0.3), (20, 12))
    rng = np.random.default_rng(3)
    # node stream function, zero on the rim: discretely divergence-free and closed
    psi = np.zeros((g.ny + 1, g.nx + 1))
    psi[1:-1, 1:-1] = rng.normal(size=(g.ny - 1, g.nx - 1)) * 1e-8
    vx = (psi[1:, :] - psi[:-1, :]) / g.dy
    vy = -(psi[:, 1:] - psi[:, :-1]) / g.dx
    v = np.concatenate([vx.ravel(), vy.ravel()])
    theta = np.full(g.n_cells, 0.39)
    dt = cfl_dt(v, theta, g)
    c = np.full(g.n_cells, 0.7)
    for order in ("xy", "yx"):
        res = advect_step(c, v, theta, dt, g, order=order)
        assert np.max(np.abs(res.c - 0.7)) < 1e-14
        assert np.max(np.abs(res.theta - theta)) < 1e-14


def test_step_function_beats_first_order_upwind():
    n = 100
    dx, u = 1.0 / n, 1.0
    dt = 0.4 * dx / u
    steps = int(round(0.5 / (u * dt)))
    xc = (np.arange(n) + 0.5) * dx
    c0 = (xc < 0.25).astype(float)
    exact = (xc < 0.25 + u * dt * steps).astype(float)
    c = c0.copy()
    vol = np.full(n, dx)
    F = np.full(n + 1, u)
    for _ in range(steps):
        mass, _ = advect_1d(c, F, vol, dt, inflow_lo=1.0)
        c = mass / vol
    up = upwind_1d(c0, u, dx, dt, steps, c_in=1.0)
    assert np.abs(c - exact).sum() < np.abs(up - exact).sum()


def test_orders_on_smooth_data():
    e = [periodic_sine_error(n) for n in (32, 64, 128)]
    assert observed_order(e[1], e[2]) > 1.75  # minmod clips at the two extrema
    u = [periodic_sine_error(n, limiter=False) for n in (64, 128)]
    assert observed_order(*u) == pytest.approx(1.0, abs=0.1)
    assert e[2] < u[1]


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.45))
def test_advection_conserves_mass_and_positivity(seed, cfl):
    rng = np.random.default_rng(seed)
    g = build_grid((0.5, 0.3), (9, 7))
    theta = rng.uniform(0.05, 0.39, g.n_cells)
    v = rng.normal(size=g.n_faces) * 1e-6
    c = rng.uniform(0, 1, g.n_cells)
    c_in = rng.uniform(0, 1, g.n_faces)
    dt = cfl_dt(v, theta, g, cfl)
    res = advect_step(c, v, theta, dt, g, c_in)
    V = g.cell_volume
    entering = np.zeros(g.n_faces)
    lo, hi = g.face_cells()
    bnd = g.boundary_mask()
    inward = np.where(lo < 0, v, -v) * g.face_area() * dt
    entering[bnd] = np.maximum(inward[bnd], 0) * c_in[bnd]
    before = np.sum(theta * c) * V + entering.sum()
    after = np.sum(res.theta * res.c) * V + np.sum(np.maximum(res.boundary_mass, 0.0))
    assert after == pytest.approx(before, rel=1e-12)
    assert np.all(res.c >= -1e-15)


def test_cfl_violation_detected():
    c = np.ones(4)
    with pytest.raises(TransportError):
        advect_1d(c, np.ones(5), np.full(4, 0.1), 1.0)


# -- diffusion --------------------------------------------------------------------------
def test_diffusion_uniform_unchanged():
    g = build_grid((0.1, 0.1), (5, 5))
    th = np.full(g.n_cells, 0.39)
    res = diffuse_step(np.full(g.n_cells, 3.0), np.ones(g.n_cells), th, th, 0.39, 1e-9, 100.0, g)
    assert np.max(np.abs(res.c - 3.0)) < 1e-13


def test_two_cell_equilibration():
    g = build_grid((0.02, 0.01), (2, 1))
    th = np.full(2, 0.39)
    c = np.array([1.0, 0.0])
    total = np.sum(th * c)
    for dt in (10.0, 1e3, 1e5, 1e9):
        res = diffuse_step(c, np.ones(2), th, th, 0.39, 2.2e-9, dt, g)
        assert np.sum(th * res.c) == pytest.approx(total, rel=1e-13)
        assert res.c[0] >= res.c[1]
    assert res.c[0] - res.c[1] < 1e-4
    dm = explicit_diffusion(c, np.full(2, 1e-9), 1.0, g)
    assert dm.sum() == 0.0 and dm[0] < 0


def test_heat_kernel():
    """Gaussian in a saturated column against the analytic spreading solution."""
    n, L = 128, 1.0
    g = build_grid((L / n, L), (1, n))
    phi, D = 0.39, 1e-9
    D_eff = phi ** (4 / 3) * D / phi  # per unit pore water
    y = g.yc
    s0 = 0.05
    t_diff = s0**2 / D_eff  # one diffusion time of the initial width

    def profile(t):
        s2 = s0**2 + 2 * D_eff * t
        return np.exp(-((y - 0.5) ** 2) / (2 * s2)) * s0 / np.sqrt(s2)

    c = profile(0.0)
    th = np.full(n, phi)
    steps = 400
    for _ in range(steps):
        c = diffuse_step(c, np.ones(n), th, th, phi, D, t_diff / steps, g).c
    ref = profile(t_diff)
    assert np.linalg.norm(c - ref) / np.linalg.norm(ref) < 0.02


def test_diffusion_positivity_and_dirichlet_budget():
    g = build_grid((0.1, 0.1), (6, 6))
    rng = np.random.default_rng(0)
    th0 = rng.uniform(0.1, 0.3, g.n_cells)
    th1 = rng.uniform(0.1, 0.3, g.n_cells)
    c = rng.uniform(0, 1, g.n_cells)
    top = g.boundary_faces("top")
    res = diffuse_step(c, rng.uniform(0, 1, g.n_cells), th0, th1, 0.39, 1e-5, 50.0, g,
                       dirichlet={int(f): 0.2 for f in top})
    assert np.all(res.c >= 0)
    V = g.cell_volume
    assert np.sum(th1 * res.c) * V + res.boundary_mass.sum() == pytest.approx(np.sum(th0 * c) * V, rel=1e-12)
