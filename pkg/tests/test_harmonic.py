import numpy as np
import pytest

from rdsline.fixtures import load_fixture
from rdsline.harmonic import (
    GridFunction,
    NotConverged,
    _operator,
    harmonic_residual,
    solve_phi_window,
    to_rows,
)
from rdsline.homeo import translation
from rdsline.system import make_system
from rdsline.walk import SimParams, estimate_phi_many

SYM = make_system([translation(1), translation(-1)], ["1/2", "1/2"])
ASYM = make_system([translation(1), translation(-1)], ["2/3", "1/3"])


def test_symmetric_walk_is_the_ramp():
    phi = solve_phi_window(SYM, (-10, 10), grid_size=20)
    xs = np.arange(-10, 11)
    # exact up to rounding of the grid itself
    assert np.allclose(phi.values, (xs + 10) / 20, rtol=0, atol=1e-15)
    assert phi.iterations == 0
    assert harmonic_residual(SYM, phi) <= 1e-15


def test_asymmetric_walk_gamblers_ruin():
    phi = solve_phi_window(ASYM, (-10, 10), grid_size=20, tol=1e-6)
    want = (1 - 2.0**-10) / (1 - 2.0**-20)
    assert abs(phi(0.0) - want) <= 1e-5
    assert harmonic_residual(ASYM, phi) <= 1e-6 * 1.0001


def test_ramp_residual_under_asymmetric_walk():
    ramp = GridFunction(-10.0, 10.0, np.linspace(0, 1, 21))
    assert harmonic_residual(ASYM, ramp) == pytest.approx((2 / 3 - 1 / 3) * 1 / 20, abs=1e-15)


def test_constant_half_is_flagged():
    half = GridFunction(-10.0, 10.0, np.full(21, 0.5))
    assert not half.boundary_consistent
    P, c = _operator(SYM, -10.0, 10.0, 21)
    r = P @ half.values + c - half.values
    # rows whose images stay strictly inside are fixed by averaging
    assert np.all(r[2:-2] == 0.0)
    assert harmonic_residual(SYM, half) > 0


def test_shift_gives_one_inside():
    shift = make_system([translation(1)], ["1"])
    phi = solve_phi_window(shift, (-10, 10), grid_size=20)
    assert np.all(phi.values[1:] == 1.0)


def test_not_converged():
    with pytest.raises(NotConverged) as exc:
        solve_phi_window(load_fixture("class4"), (-50, 50), tol=1e-12, max_iters=5)
    assert exc.value.iterations == 5 and exc.value.residual > 0


def test_bad_window():
    with pytest.raises(ValueError):
        solve_phi_window(SYM, (1, -1))


def test_class4_solution_is_monotone_and_bounded():
    phi = solve_phi_window(load_fixture("class4"))
    assert np.all(np.diff(phi.values) >= -1e-12)
    assert phi.values.min() >= 0 and phi.values.max() <= 1
    assert phi.boundary_consistent
    assert harmonic_residual(load_fixture("class4"), phi) <= 1e-8
    rows = to_rows(phi)
    assert len(rows) == 2001 and rows[0] == {"x": -50.0, "phi": 0.0}


def test_window_stability():
    sys = load_fixture("class4")
    small = solve_phi_window(sys, (-50, 50))
    big = solve_phi_window(sys, (-100, 100), grid_size=4000)
    xs = np.linspace(-5, 5, 41)
    assert np.max(np.abs(small(xs) - big(xs))) <= 0.01


def test_monte_carlo_agrees_with_solver():
    sys = load_fixture("class4")
    phi = solve_phi_window(sys)
    probes = [-20.0, -5.0, 0.0, 5.0, 20.0]
    for e in estimate_phi_many(sys, probes, SimParams(trials=4000)):
        assert abs(e.phi_plus - float(phi(e.x))) <= e.ci_halfwidth + 0.02
