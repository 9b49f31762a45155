"""Embedded Runge-Kutta-Fehlberg 4(5) integrator compiled with numba.

The right-hand side is a jitted function ``rhs(t, y, args, out)`` writing
``dy/dt`` into ``out``. The fourth-order solution is propagated and the
difference to the fifth-order one drives the step size.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# Fehlberg tableau
A2 = 1.0 / 4.0
A3 = (3.0 / 32.0, 9.0 / 32.0)
A4 = (1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0)
A5 = (439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0)
A6 = (-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0)
C = (0.0, 1.0 / 4.0, 3.0 / 8.0, 12.0 / 13.0, 1.0, 1.0 / 2.0)
B4 = (25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0)
B5 = (16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0)

OK = 0
UNDERFLOW = 1
MAX_STEPS = 2


@njit(cache=True, nogil=True)
def rkf45_step(rhs, t, y, h, args, k, y4, y5):
    """One Fehlberg step from ``(t, y)``; ``k`` is a (6, n) work array."""
    n = y.shape[0]
    tmp = np.empty(n)
    rhs(t, y, args, k[0])
    for i in range(n):
        tmp[i] = y[i] + h * A2 * k[0, i]
    rhs(t + C[1] * h, tmp, args, k[1])
    for i in range(n):
        tmp[i] = y[i] + h * (A3[0] * k[0, i] + A3[1] * k[1, i])
    rhs(t + C[2] * h, tmp, args, k[2])
    for i in range(n):
        tmp[i] = y[i] + h * (A4[0] * k[0, i] + A4[1] * k[1, i] + A4[2] * k[2, i])
    rhs(t + C[3] * h, tmp, args, k[3])
    for i in range(n):
        tmp[i] = y[i] + h * (A5[0] * k[0, i] + A5[1] * k[1, i] + A5[2] * k[2, i] + A5[3] * k[3, i])
    rhs(t + C[4] * h, tmp, args, k[4])
    for i in range(n):
        tmp[i] = y[i] + h * (A6[0] * k[0, i] + A6[1] * k[1, i] + A6[2] * k[2, i]
                             + A6[3] * k[3, i] + A6[4] * k[4, i])
    rhs(t + C[5] * h, tmp, args, k[5])
    for i in range(n):
        s4 = 0.0
        s5 = 0.0
        for j in range(6):
            s4 += B4[j] * k[j, i]
            s5 += B5[j] * k[j, i]
        y4[i] = y[i] + h * s4
        y5[i] = y[i] + h * s5


@njit(cache=True, nogil=True)
def rkf45_integrate(rhs, y0, t_end, args, rtol, atol, h0, nonneg, max_steps):
    """Integrate from 0 to ``t_end`` with adaptive steps.

    Returns ``(y, status, accepted, rejected, clipped)`` where ``clipped``
    is the total magnitude removed when negative components are reset to
    zero (only with ``nonneg``).
    """
    n = y0.shape[0]
    y = y0.copy()
    k = np.empty((6, n))
    y4 = np.empty(n)
    y5 = np.empty(n)
    t = 0.0
    h = min(h0, t_end) if h0 > 0 else t_end
    accepted = 0
    rejected = 0
    clipped = 0.0
    if t_end <= 0.0:
        return y, OK, 0, 0, 0.0
    while t < t_end:
        if accepted + rejected >= max_steps:
            return y, MAX_STEPS, accepted, rejected, clipped
        last = False
        if t + h >= t_end:
            h = t_end - t
            last = True
        rkf45_step(rhs, t, y, h, args, k, y4, y5)
        err = 0.0
        finite = True
        for i in range(n):
            sc = atol + rtol * max(abs(y[i]), abs(y4[i]))
            e = abs(y5[i] - y4[i]) / sc
            if not np.isfinite(e):
                finite = False
            if e > err:
                err = e
        if finite and err <= 1.0:
            t = t_end if last else t + h
            for i in range(n):
                v = y4[i]
                if nonneg and v < 0.0:
                    clipped += -v
                    v = 0.0
                y[i] = v
            accepted += 1
            if err == 0.0:
                fac = 5.0
            else:
                fac = min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = h * fac
        else:
            rejected += 1
            if finite:
                h = h * max(0.1, 0.9 * err ** -0.25)
            else:
                h = h * 0.1
        if h < 1e-13 * t_end and t < t_end:
            return y, UNDERFLOW, accepted, rejected, clipped
    return y, OK, accepted, rejected, clipped


@njit(cache=True)
def rkf45_fixed(rhs, y0, t_end, n_steps, args):
    """Fixed-step Fehlberg integration; returns the 4th- and 5th-order results."""
    n = y0.shape[0]
    y = y0.copy()
    z = y0.copy()
    k = np.empty((6, n))
    y4 = np.empty(n)
    y5 = np.empty(n)
    h = t_end / n_steps
    t = 0.0
    for _ in range(n_steps):
        rkf45_step(rhs, t, y, h, args, k, y4, y5)
        y[:] = y4
        rkf45_step(rhs, t, z, h, args, k, y4, y5)
        z[:] = y5
        t += h
    return y, z
