import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fringesim.grid import FieldState, Port, build_grid, read_snapshot, write_snapshot


def test_desk_resolution_spacing():
    g = build_grid((0.50, 0.30), (392, 256))
    assert g.dx == pytest.approx(1.28e-3, abs=5e-6)
    assert g.dy == pytest.approx(1.17e-3, abs=5e-6)
    assert g.interior_faces().size == 391 * 256 + 392 * 255 == 200056


def test_single_cell():
    g = build_grid((1, 1), (1, 1))
    assert g.n_cells == 1
    assert g.interior_faces().size == 0
    assert sum(g.boundary_faces(s).size for s in ("left", "right", "bottom", "top")) == 4


def test_two_cells_one_interior_face():
    assert build_grid((2, 1), (2, 1)).interior_faces().size == 1


def test_top_faces_count():
    g = build_grid((0.5, 0.3), (7, 5))
    assert g.boundary_faces("top").size == 7


def test_ports_map_to_containing_faces():
    heights = (0.005, 0.020, 0.035, 0.050)
    ports = [Port(f"L{i}", "left", h) for i, h in enumerate(heights)]
    g = build_grid((0.5, 0.3), (98, 64), ports)
    lo, hi = g.face_cells()
    _, yf = g.face_centers()
    for p, h in zip(ports, heights):
        (f,) = g.boundary_faces(p.name)
        assert lo[f] == -1 and abs(yf[f] - h) <= g.dy / 2 + 1e-12


def test_port_collisions_rejected():
    with pytest.raises(ValueError):
        build_grid((0.5, 0.3), (10, 10), [Port("a", "left", 0.01), Port("b", "left", 0.011)])
    with pytest.raises(ValueError):
        Port("a", "front", 0.1)


def test_invalid_grids():
    with pytest.raises(ValueError):
        build_grid((0, 1), (1, 1))
    with pytest.raises(ValueError):
        build_grid((1, 1), (0, 1))


@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.01, 2), st.floats(0.01, 2))
def test_volume_and_face_topology(nx, ny, Lx, Ly):
    g = build_grid((Lx, Ly), (nx, ny), thickness=0.006)
    assert g.cell_volume * g.n_cells == pytest.approx(Lx * Ly * 0.006, rel=1e-12)
    n_int = g.interior_faces().size
    assert n_int == (nx - 1) * ny + nx * (ny - 1)
    assert g.n_faces - n_int == 2 * (nx + ny)
    bnd = g.boundary_mask()
    area = g.face_area()
    assert area[bnd].sum() == pytest.approx(2 * (Lx + Ly) * 0.006, rel=1e-12)
    # every cell has four faces and every interior face two cells
    lo, hi = g.face_cells()
    counts = np.bincount(np.concatenate([lo[lo >= 0], hi[hi >= 0]]), minlength=g.n_cells)
    assert np.all(counts == 4)
    for k in range(g.n_cells):
        for f in g.cell_faces(k):
            assert k in (lo[f], hi[f])


def test_snapshot_round_trip(tmp_path):
    g = build_grid((0.5, 0.3), (4, 3))
    a = np.linspace(0, 1, g.n_cells) * 1e-7
    path = write_snapshot(tmp_path / "t_0.dat", g, {"s_l": (a, "-"), "X_t": (a * 1e15, "cells/mL")}, 12.0)
    back = read_snapshot(path)
    np.testing.assert_allclose(back["s_l"], a, rtol=1e-9)
    np.testing.assert_allclose(back["x"], g.cell_centers()[0])


def test_field_state_copy_is_deep():
    g = build_grid((1, 1), (2, 2))
    z = np.zeros(g.n_cells)
    s = FieldState(g, z.copy(), z.copy(), {"a": z.copy()}, z + 1, np.zeros(g.n_faces), np.zeros(g.n_faces))
    c = s.copy()
    c.conc["a"][0] = 5
    c.p_l[0] = 3
    assert s.conc["a"][0] == 0 and s.p_l[0] == 0
