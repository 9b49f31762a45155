"""Adhesion-parameter estimation from column breakthrough curves.

The forward model is a saturated 1D column: Godunov advection with a
minmod-limited second-order face value (the scheme of
:func:`fringesim.transport.advect_1d`, compiled here for speed) and
reversible attachment with a blocking factor, integrated with classical RK4
per transport step. Growth is off. Concentrations in the column are in
cells/mL of pore water (mobile) and cells/mL of porous medium (attached).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .reaction import CELL_MASS, AdhesionParams

DAY = 86400.0


class InversionError(RuntimeError):
    """The optimiser could not make progress; ``trace`` holds the history."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


def c_max_cells(ap: AdhesionParams) -> float:
    """Attachment capacity in cells/mL of porous medium."""
    return ap.c_s_X_max * 1e-3 / CELL_MASS


def adhesion_from_cells(k_att: float, k_det: float, c_max: float) -> AdhesionParams:
    """AdhesionParams from a capacity given in cells/mL."""
    return AdhesionParams(k_att=k_att, k_det=k_det, c_s_X_max=c_max * CELL_MASS * 1e3)


@dataclass(frozen=True)
class ColumnExperiment:
    length: float = 0.10  # m
    diameter: float = 0.004  # m
    pore_velocity: float = 4.0 / DAY  # m/s
    c_in: float = 1e9  # cells/mL
    pulse_duration: float | None = None  # s; None: one pore volume
    times: tuple = ()  # sampling times [s]
    c_out: tuple | None = None  # measured outlet concentrations [cells/mL]
    porosity: float = 0.39

    def __post_init__(self):
        if not (self.length > 0 and self.diameter > 0):
            raise ValueError("column geometry must be positive")
        if not self.pore_velocity > 0:
            raise ValueError("pore velocity must be positive")
        if self.c_in < 0:
            raise ValueError("inlet concentration must be non-negative")
        if not 0 < self.porosity < 1:
            raise ValueError("porosity must lie in (0, 1)")
        if self.pulse_duration is not None and not self.pulse_duration > 0:
            raise ValueError("pulse duration must be positive")
        t = np.asarray(self.times, dtype=float)
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0):
            raise ValueError("sampling times must be non-negative and strictly increasing")
        if self.c_out is not None and len(self.c_out) != len(self.times):
            raise ValueError("c_out must match the sampling times")

    @property
    def pore_volume_time(self) -> float:
        return self.length / self.pore_velocity

    @property
    def pulse(self) -> float:
        return self.pore_volume_time if self.pulse_duration is None else self.pulse_duration

    @property
    def area(self) -> float:
        return math.pi * self.diameter ** 2 / 4.0


@njit(cache=True)
def _att_rate(c, S, theta, k_att, k_det, c_max):
    psi = 1.0 - S / c_max
    return theta * k_att * psi * c - k_det * S


@njit(cache=True)
def _column_kernel(n, dx, v, theta, c_in, pulse, t_end, cfl, k_att, k_det, c_max):
    """March the column to ``t_end``; returns step times, outlet series and budget."""
    c = np.zeros(n)
    S = np.zeros(n)
    dt_cfl = cfl * dx / v
    n_est = int(t_end / dt_cfl) + 4
    ts = np.empty(n_est + 2)
    cs = np.empty(n_est + 2)
    ts[0] = 0.0
    cs[0] = 0.0
    k = 1
    t = 0.0
    F = v * theta  # Darcy flux per unit area
    inflow = 0.0
    outflow = 0.0
    face = np.empty(n + 1)
    slope = np.zeros(n)
    nu = v * dt_cfl / dx
    while t < t_end * (1.0 - 1e-14):
        h = min(dt_cfl, t_end - t)
        if t < pulse and t + h > pulse:
            h = pulse - t
        cin = c_in if t < pulse * (1.0 - 1e-14) else 0.0
        nu = v * h / dx
        # minmod slopes, first order in the two boundary cells
        for i in range(1, n - 1):
            a = c[i] - c[i - 1]
            b = c[i + 1] - c[i]
            if a * b > 0:
                slope[i] = a if abs(a) < abs(b) else b
            else:
                slope[i] = 0.0
        face[0] = cin
        for i in range(n - 1):
            face[i + 1] = c[i] + 0.5 * (1.0 - nu) * slope[i]
        face[n] = c[n - 1]
        for i in range(n):
            c[i] = c[i] - F * h * (face[i + 1] - face[i]) / (theta * dx)
        inflow += F * h * cin
        outflow += F * h * face[n]
        # attachment kinetics, RK4 on (c, S) with theta c + S conserved
        for i in range(n):
            c0 = c[i]
            s0 = S[i]
            r1 = _att_rate(c0, s0, theta, k_att, k_det, c_max)
            r2 = _att_rate(c0 - 0.5 * h * r1 / theta, s0 + 0.5 * h * r1, theta, k_att, k_det, c_max)
            r3 = _att_rate(c0 - 0.5 * h * r2 / theta, s0 + 0.5 * h * r2, theta, k_att, k_det, c_max)
            r4 = _att_rate(c0 - h * r3 / theta, s0 + h * r3, theta, k_att, k_det, c_max)
            r = (r1 + 2.0 * r2 + 2.0 * r3 + r4) / 6.0
            S[i] = s0 + h * r
            c[i] = c0 - h * r / theta
        t += h
        if k >= ts.shape[0]:
            ts = np.concatenate((ts, np.empty(ts.shape[0])))
            cs = np.concatenate((cs, np.empty(cs.shape[0])))
        ts[k] = t
        cs[k] = c[n - 1]
        k += 1
    return ts[:k], cs[:k], c, S, inflow, outflow


@dataclass
class ColumnRun:
    t: np.ndarray
    c_out: np.ndarray  # outlet (last cell) concentration at each step
    c: np.ndarray  # final mobile concentration profile [cells/mL water]
    S: np.ndarray  # final attached amount [cells/mL porous medium]
    inflow: float  # cells per unit cross-section area / 1e-6 (cells/mL * m)
    outflow: float
    dx: float
    theta: float

    @property
    def stored(self) -> float:
        return float(np.sum(self.theta * self.c + self.S) * self.dx)

    @property
    def budget_error(self) -> float:
        """Relative mismatch of inflow against outflow plus storage."""
        return abs(self.inflow - self.outflow - self.stored) / max(self.inflow, 1e-300)


def simulate_column(params: AdhesionParams, exp: ColumnExperiment, n_cells: int = 512,
                    t_end: float | None = None, cfl: float = 0.4) -> ColumnRun:
    if n_cells < 2:
        raise ValueError("need at least two cells")
    if params.k_att < 0 or params.k_det < 0 or not params.c_s_X_max > 0:
        raise ValueError("adhesion parameters must be non-negative with positive capacity")
    if t_end is None:
        t_end = float(exp.times[-1]) if len(exp.times) else 3.0 * exp.pore_volume_time
    dx = exp.length / n_cells
    ts, cs, c, S, inflow, outflow = _column_kernel(
        n_cells, dx, exp.pore_velocity, exp.porosity, exp.c_in, exp.pulse, t_end, cfl,
        params.k_att, params.k_det, c_max_cells(params))
    return ColumnRun(ts, cs, c, S, inflow, outflow, dx, exp.porosity)


def breakthrough_forward(params: AdhesionParams, exp: ColumnExperiment, n_cells: int = 512,
                         cfl: float = 0.4) -> np.ndarray:
    """Outlet concentration [cells/mL] at ``exp.times``, interpolated between steps."""
    if not len(exp.times):
        raise ValueError("experiment has no sampling times")
    run = simulate_column(params, exp, n_cells, float(exp.times[-1]), cfl)
    return np.interp(np.asarray(exp.times, dtype=float), run.t, run.c_out)


# -- Levenberg-Marquardt ---------------------------------------------------------
@dataclass
class FitResult:
    params: np.ndarray
    rss: float
    iterations: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)  # one dict per trial step
    covariance: np.ndarray | None = None
    jacobian: np.ndarray | None = None
    names: tuple = ()

    @property
    def std_errors(self) -> np.ndarray | None:
        return None if self.covariance is None else np.sqrt(np.abs(np.diag(self.covariance)))

    def adhesion(self) -> AdhesionParams:
        return adhesion_from_cells(*self.params)


def _fd_jacobian(fun, z, r0, to_p, step):
    J = np.empty((r0.size, z.size))
    for j in range(z.size):
        h = step * max(1.0, abs(z[j]))
        zp = z.copy()
        zp[j] += h
        J[:, j] = (np.asarray(fun(to_p(zp)), dtype=float) - r0) / h
    return J


def levenberg_marquardt(fun, p0, *, log_params: bool = True, lam0: float = 1e-3, lam_up: float = 10.0,
                        lam_down: float = 10.0, lam_max: float = 1e16, gtol: float = 1e-10,
                        ftol: float = 1e-10, max_iter: int = 100, fd_step: float = 1e-6,
                        names: tuple = ()) -> FitResult:
    """Minimise ``sum(fun(p)**2)``.

    The normal equations are damped with Marquardt's diagonal scaling and
    the Jacobian comes from forward differences in the optimisation
    variables (``log p`` with ``log_params``, which keeps p positive).
    Raises :class:`InversionError` if no damping level gives a solvable,
    improving step while the gradient is still large.
    """
    p0 = np.asarray(p0, dtype=float)
    if log_params:
        if np.any(p0 <= 0):
            raise ValueError("log parameterisation needs positive starting values")
        z = np.log(p0)
        to_p = np.exp
    else:
        z = p0.copy()
        to_p = lambda v: v  # noqa: E731
    r = np.asarray(fun(to_p(z)), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residual is not finite at the starting point")
    rss = float(r @ r)
    trace = [{"iter": 0, "rss": rss, "lambda": lam0, "params": to_p(z).tolist(), "accepted": True}]
    if rss == 0.0:
        return FitResult(to_p(z), 0.0, 0, True, "zero residual at start", trace, names=names)

    lam = lam0
    it = 0
    converged = False
    message = "maximum iterations reached"
    J = _fd_jacobian(fun, z, r, to_p, fd_step)
    while it < max_iter:
        g = J.T @ r
        if np.max(np.abs(g)) < gtol:
            converged, message = True, "gradient norm below gtol"
            break
        A = J.T @ J
        D = np.diag(np.diag(A).copy())
        D[D == 0] = 1.0
        accepted = False
        while lam <= lam_max:
            try:
                dz = np.linalg.solve(A + lam * D, -g)
            except np.linalg.LinAlgError:
                lam *= lam_up
                continue
            z_try = z + dz
            r_try = np.asarray(fun(to_p(z_try)), dtype=float)
            rss_try = float(r_try @ r_try) if np.all(np.isfinite(r_try)) else np.inf
            ok = rss_try < rss
            trace.append({"iter": it + 1, "rss": rss_try, "lambda": lam, "params": to_p(z_try).tolist(),
                          "accepted": bool(ok)})
            if ok:
                accepted = True
                break
            lam *= lam_up
        if not accepted:
            if np.max(np.abs(g)) < 1e-6 * max(1.0, rss):
                converged, message = True, "no further decrease possible"
                break
            raise InversionError("no damping level produced a decrease of the residual", trace)
        it += 1
        drss = (rss - rss_try) / max(rss, 1e-300)
        z, r, rss = z_try, r_try, rss_try
        lam = max(lam / lam_down, 1e-12)
        if rss == 0.0 or drss < ftol:
            converged, message = True, "relative RSS change below ftol" if rss else "zero residual"
            break
        J = _fd_jacobian(fun, z, r, to_p, fd_step)

    p = to_p(z)
    if J is not None and r.size > p.size:
        Jf = _fd_jacobian(fun, z, r, to_p, fd_step)
        J = Jf
        try:
            cov_z = np.linalg.inv(J.T @ J) * rss / (r.size - p.size)
        except np.linalg.LinAlgError:
            cov_z = None
        if cov_z is not None and log_params:
            cov = cov_z * np.outer(p, p)  # delta method back to p
        else:
            cov = cov_z
    else:
        cov = None
    return FitResult(p, rss, it, converged, message, trace, cov, J, names)


# -- fitting breakthrough data -------------------------------------------------------
PARAM_NAMES = ("k_att", "k_det", "c_max")


def breakthrough_residuals(exp: ColumnExperiment, rel_noise: float = 0.02, floor: float = 1e-3,
                           n_cells: int = 512):
    """Residual function of ``(k_att, k_det, c_max[cells/mL])`` weighted for multiplicative noise.

    Each residual is divided by ``rel_noise * max(|data|, floor * max|data|)``.
    """
    if exp.c_out is None:
        raise ValueError("experiment carries no measured outlet concentrations")
    data = np.asarray(exp.c_out, dtype=float)
    sigma = rel_noise * np.maximum(np.abs(data), floor * np.max(np.abs(data)))

    def fun(p):
        model = breakthrough_forward(adhesion_from_cells(*p), exp, n_cells)
        return (model - data) / sigma

    return fun


def fit_adhesion(exp: ColumnExperiment, p0: AdhesionParams, *, rel_noise: float = 0.02,
                 n_cells: int = 512, **lm_options) -> FitResult:
    fun = breakthrough_residuals(exp, rel_noise, n_cells=n_cells)
    start = np.array([p0.k_att, p0.k_det, c_max_cells(p0)])
    return levenberg_marquardt(fun, start, names=PARAM_NAMES, **lm_options)


def synthetic_experiment(true: AdhesionParams, exp: ColumnExperiment, rel_noise: float = 0.02,
                         seed: int = 0, n_cells: int = 512) -> ColumnExperiment:
    """Copy of ``exp`` with outlet data from the forward model and multiplicative noise."""
    rng = np.random.default_rng(seed)
    clean = breakthrough_forward(true, exp, n_cells)
    noisy = clean * (1.0 + rel_noise * rng.standard_normal(clean.size))
    return replace(exp, c_out=tuple(noisy.tolist()))


def default_sampling(exp: ColumnExperiment, pore_volumes: float = 10.0, n: int = 200) -> tuple:
    T = pore_volumes * exp.pore_volume_time
    return tuple(np.linspace(T / n, T, n).tolist())


# -- I/O ----------------------------------------------------------------------------
def read_breakthrough_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``t_seconds, c_out`` rows (header optional)."""
    path = Path(path)
    t, c = [], []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                t.append(float(row[0]))
                c.append(float(row[1]))
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: expected 't_seconds, c_out'") from None
    if not t:
        raise ValueError(f"{path}: no data rows")
    return np.array(t), np.array(c)


def write_fit(result: FitResult, exp: ColumnExperiment, out_dir, n_cells: int = 512) -> tuple[Path, Path]:
    """Write ``fit.txt`` (estimates, RSS, trace, covariance) and ``fit_curve.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    se = result.std_errors
    lines = [f"converged = {str(result.converged).lower()}", f"message = {result.message!r}",
             f"iterations = {result.iterations}", f"rss = {result.rss:.10g}"]
    for i, name in enumerate(result.names or PARAM_NAMES):
        unit = "cells/mL" if name == "c_max" else "1/s"
        err = f"  # std error {se[i]:.4g}" if se is not None else ""
        lines.append(f"{name} = {result.params[i]:.8g}  # {unit}{err}")
    if result.covariance is not None:
        lines.append("covariance =")
        lines += ["  " + " ".join(f"{v: .6e}" for v in row) for row in result.covariance]
    lines.append("trace (iter, rss, lambda, accepted, params) =")
    for tr in result.trace:
        lines.append(f"  {tr['iter']} {tr['rss']:.8g} {tr['lambda']:.3g} {int(tr['accepted'])} "
                     + " ".join(f"{v:.6g}" for v in tr["params"]))
    fit_txt = out / "fit.txt"
    fit_txt.write_text("\n".join(lines) + "\n")
    curve = breakthrough_forward(result.adhesion(), exp, n_cells)
    curve_csv = out / "fit_curve.csv"
    with curve_csv.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds", "c_out_measured", "c_out_fitted"])
        data = exp.c_out if exp.c_out is not None else [float("nan")] * len(exp.times)
        for t, d, m in zip(exp.times, data, curve):
            w.writerow([f"{t:.10g}", f"{d:.10g}", f"{m:.10g}"])
    return fit_txt, curve_csv
