import numpy as np
import pytest
from numba import njit

from fringesim.rkf45 import OK, rkf45_fixed, rkf45_integrate


@njit
def decay(t, y, args, out):
    out[0] = -args[0] * y[0]


@njit
def zero(t, y, args, out):
    out[0] = 0.0
    out[1] = 0.0


ARGS = np.array([1.0])


def test_adaptive_matches_exponential():
    for rtol in (1e-4, 1e-7, 1e-10):
        y, status, acc, rej, _ = rkf45_integrate(decay, np.array([1.0]), 3.0, ARGS, rtol, 1e-14, 0.1, False, 100000)
        assert status == OK
        assert y[0] == pytest.approx(np.exp(-3.0), rel=100 * rtol)


def test_tightening_tolerance_costs_more_steps():
    steps = [rkf45_integrate(decay, np.array([1.0]), 3.0, ARGS, r, 1e-14, 0.1, False, 100000)[2]
             for r in (1e-4, 1e-6, 1e-8, 1e-10)]
    assert steps == sorted(steps) and steps[-1] > steps[0]


def test_observed_order():
    errs4, errs5 = [], []
    for n in (4, 8, 16, 32):
        y4, y5 = rkf45_fixed(decay, np.array([1.0]), 2.0, n, ARGS)
        errs4.append(abs(y4[0] - np.exp(-2.0)))
        errs5.append(abs(y5[0] - np.exp(-2.0)))
    p4 = np.log2(errs4[-2] / errs4[-1])
    p5 = np.log2(errs5[-2] / errs5[-1])
    assert 3.7 < p4 < 5.3
    assert p5 > 4.6


def test_zero_rhs_single_step():
    y0 = np.array([0.3, 2.0])
    y, status, acc, rej, _ = rkf45_integrate(zero, y0, 1e4, np.zeros(1), 1e-6, 1e-12, 1e4, True, 10)
    assert status == OK and acc == 1 and rej == 0
    assert np.array_equal(y, y0)


def test_nonnegative_clipping_reported():
    @njit
    def sink(t, y, args, out):
        out[0] = -1.0  # constant sink overshoots zero

    y, status, acc, rej, clipped = rkf45_integrate(sink, np.array([0.5]), 1.0, ARGS, 1e-6, 1e-12, 1.0, True, 100)
    assert y[0] == 0.0 and clipped == pytest.approx(0.5)
