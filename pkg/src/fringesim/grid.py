"""Structured 2D cell-centred grid, field containers and snapshot output.

Cells are numbered ``k = j * nx + i`` with ``i`` along x and ``j`` along y
(upwards). Faces are numbered x-faces first, ``(ny, nx + 1)`` in row-major
order, followed by y-faces, ``(ny + 1, nx)``. Every face carries a signed
normal along +x or +y; face fluxes are positive in that direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Port:
    """A boundary opening occupying the single face that contains ``position``."""

    name: str
    side: str
    position: float  # m, along the side (y for left/right, x for bottom/top)
    group: str = ""

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"port {self.name!r}: unknown side {self.side!r}")


@dataclass(frozen=True)
class StructuredGrid:
    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)
    thickness: float = 0.006
    ports: tuple[Port, ...] = ()
    # derived, filled in __post_init__
    boundary_tags: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per direction")
        if not (self.dx > 0 and self.dy > 0 and self.thickness > 0):
            raise ValueError("cell sizes and thickness must be positive")
        tags = np.full(self.n_faces, "", dtype=object)
        for side in SIDES:
            tags[self._side_faces(side)] = side
        used: dict[int, str] = {}
        for port in self.ports:
            f = self._port_face(port)
            if f in used:
                raise ValueError(f"ports {used[f]!r} and {port.name!r} share boundary face {f}")
            if port.name in SIDES or port.name in used.values():
                raise ValueError(f"duplicate or reserved port name {port.name!r}")
            used[f] = port.name
            tags[f] = port.name
        object.__setattr__(self, "boundary_tags", tags)

    # -- sizes ---------------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_xfaces(self) -> int:
        return self.ny * (self.nx + 1)

    @property
    def n_faces(self) -> int:
        return self.n_xfaces + (self.ny + 1) * self.nx

    @property
    def extent(self) -> tuple[float, float]:
        return self.nx * self.dx, self.ny * self.dy

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.thickness

    # -- geometry ------------------------------------------------------------
    @property
    def xc(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def yc(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        X, Y = np.meshgrid(self.xc, self.yc)
        return X.ravel(), Y.ravel()

    def face_is_x(self) -> np.ndarray:
        out = np.zeros(self.n_faces, dtype=bool)
        out[: self.n_xfaces] = True
        return out

    def face_area(self) -> np.ndarray:
        a = np.empty(self.n_faces)
        a[: self.n_xfaces] = self.dy * self.thickness
        a[self.n_xfaces :] = self.dx * self.thickness
        return a

    def face_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Cells on the negative and positive side of every face (-1 outside)."""
        nx, ny = self.nx, self.ny
        jx, ix = np.divmod(np.arange(self.n_xfaces), nx + 1)
        lo_x = np.where(ix > 0, jx * nx + ix - 1, -1)
        hi_x = np.where(ix < nx, jx * nx + ix, -1)
        jy, iy = np.divmod(np.arange((ny + 1) * nx), nx)
        lo_y = np.where(jy > 0, (jy - 1) * nx + iy, -1)
        hi_y = np.where(jy < ny, jy * nx + iy, -1)
        return np.concatenate([lo_x, lo_y]), np.concatenate([hi_x, hi_y])

    def face_centers(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.nx, self.ny
        x0, y0 = self.origin
        jx, ix = np.divmod(np.arange(self.n_xfaces), nx + 1)
        jy, iy = np.divmod(np.arange((ny + 1) * nx), nx)
        fx = np.concatenate([x0 + ix * self.dx, x0 + (iy + 0.5) * self.dx])
        fy = np.concatenate([y0 + (jx + 0.5) * self.dy, y0 + jy * self.dy])
        return fx, fy

    # -- topology ------------------------------------------------------------
    def interior_faces(self) -> np.ndarray:
        lo, hi = self.face_cells()
        return np.flatnonzero((lo >= 0) & (hi >= 0))

    def face_neighbors(self) -> Iterator[tuple[int, int, int]]:
        """Yield ``(face, cell_lo, cell_hi)`` for each interior face once."""
        lo, hi = self.face_cells()
        for f in self.interior_faces():
            yield int(f), int(lo[f]), int(hi[f])

    def cell_faces(self, k: int) -> tuple[int, int, int, int]:
        """Faces (left, right, bottom, top) of cell ``k``."""
        j, i = divmod(int(k), self.nx)
        left = j * (self.nx + 1) + i
        bottom = self.n_xfaces + j * self.nx + i
        return left, left + 1, bottom, bottom + self.nx

    def _side_faces(self, side: str) -> np.ndarray:
        nx, ny = self.nx, self.ny
        if side == "left":
            return np.arange(ny) * (nx + 1)
        if side == "right":
            return np.arange(ny) * (nx + 1) + nx
        if side == "bottom":
            return self.n_xfaces + np.arange(nx)
        if side == "top":
            return self.n_xfaces + ny * nx + np.arange(nx)
        raise ValueError(f"unknown side {side!r}")

    def _port_face(self, port: Port) -> int:
        horizontal = port.side in ("bottom", "top")
        start = self.origin[0] if horizontal else self.origin[1]
        h = self.dx if horizontal else self.dy
        n = self.nx if horizontal else self.ny
        idx = int(np.floor((port.position - start) / h))
        if not (0 <= port.position - start <= n * h):
            raise ValueError(f"port {port.name!r} at {port.position} m lies outside the {port.side} side")
        idx = min(idx, n - 1)
        return int(self._side_faces(port.side)[idx])

    def boundary_faces(self, tag: str) -> np.ndarray:
        """Boundary faces carrying ``tag`` (a side name, port name or port group)."""
        tags = self.boundary_tags
        if tag in SIDES:
            # a port replaces the wall tag of its face but still lies on that side
            return self._side_faces(tag)
        names = [p.name for p in self.ports if p.name == tag or p.group == tag]
        if not names:
            raise KeyError(f"unknown boundary tag {tag!r}")
        return np.flatnonzero(np.isin(tags, names))

    def boundary_mask(self) -> np.ndarray:
        lo, hi = self.face_cells()
        return (lo < 0) | (hi < 0)

    def with_resolution(self, nx: int, ny: int) -> "StructuredGrid":
        Lx, Ly = self.extent
        return replace(self, nx=nx, ny=ny, dx=Lx / nx, dy=Ly / ny)


def build_grid(
    extent: tuple[float, float],
    resolution: tuple[int, int],
    ports: Sequence[Port] = (),
    thickness: float = 0.006,
    origin: tuple[float, float] = (0.0, 0.0),
) -> StructuredGrid:
    Lx, Ly = extent
    nx, ny = resolution
    if not (Lx > 0 and Ly > 0):
        raise ValueError("extent must be positive")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError("resolution must be positive integers")
    return StructuredGrid(
        nx=int(nx), ny=int(ny), dx=Lx / nx, dy=Ly / ny, origin=tuple(origin),
        thickness=thickness, ports=tuple(ports),
    )


@dataclass
class FieldState:
    """Primary and derived fields on a grid.

    ``conc`` holds mass concentrations [kg/m^3 of the owning phase]:
    ``l_S`` (DOC), ``l_O2``, ``l_X`` (mobile biomass), ``g_O2`` and ``s_X``
    (attached biomass per unit solid volume).
    """

    grid: StructuredGrid
    p_l: np.ndarray
    p_c: np.ndarray
    conc: dict[str, np.ndarray]
    s_l: np.ndarray
    v_l: np.ndarray  # Darcy flux on faces, m/s
    v_g: np.ndarray
    t: float = 0.0

    @property
    def p_g(self) -> np.ndarray:
        return self.p_l + self.p_c

    def theta_l(self, phi: float) -> np.ndarray:
        return phi * self.s_l

    def theta_g(self, phi: float) -> np.ndarray:
        return phi * (1.0 - self.s_l)

    def copy(self) -> "FieldState":
        return FieldState(
            grid=self.grid, p_l=self.p_l.copy(), p_c=self.p_c.copy(),
            conc={k: v.copy() for k, v in self.conc.items()},
            s_l=self.s_l.copy(), v_l=self.v_l.copy(), v_g=self.v_g.copy(), t=self.t,
        )

    def check_finite(self) -> None:
        for name, arr in [("p_l", self.p_l), ("p_c", self.p_c), ("s_l", self.s_l),
                          ("v_l", self.v_l), ("v_g", self.v_g), *self.conc.items()]:
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in field {name}")


def write_snapshot(path, grid: StructuredGrid, fields: dict[str, tuple[np.ndarray, str]], t: float) -> Path:
    """Write cell-centred scalars as ``x y value...`` columns.

    ``fields`` maps a name to ``(values, unit)``. The two header lines name
    the columns and their units; they are prefixed with ``#`` so the file
    loads directly with ``numpy.loadtxt`` or gnuplot.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x, y = grid.cell_centers()
    names = ["x", "y", *fields]
    units = ["m", "m", *(u for _, u in fields.values())]
    cols = [x, y, *(np.asarray(v, dtype=float).ravel() for v, _ in fields.values())]
    for name, col in zip(names, cols):
        if col.shape != (grid.n_cells,):
            raise ValueError(f"field {name} has shape {col.shape}, expected ({grid.n_cells},)")
    header = (
        f"t = {t:.6f} s, nx = {grid.nx}, ny = {grid.ny}\n"
        + " ".join(names) + "\n" + " ".join(f"[{u}]" for u in units)
    )
    np.savetxt(path, np.column_stack(cols), header=header, fmt="%.10e")
    return path


def read_snapshot(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        fh.readline()
        names = fh.readline().lstrip("#").split()
    data = np.loadtxt(path, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(names)}
