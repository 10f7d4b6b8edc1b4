from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdsline.homeo import (
    INVERSION_TOL,
    CustomMap,
    MapError,
    PiecewiseLinearMap,
    SinPerturbationMap,
    affine,
    compose,
    identity,
    map_from_json,
    piecewise_linear,
    translation,
)

F1 = piecewise_linear([0], [(1, 1), (2, 1)])  # x+1 below 0, 2x+1 from 0 on


def test_translation_is_valid():
    assert affine(1, 1).validate().valid


def test_kinked_map_is_valid_and_continuous():
    assert F1.validate().valid
    assert F1.eval(Fraction(0)) == 1


def test_negative_slope_rejected():
    m = PiecewiseLinearMap((Fraction(0),), ((Fraction(1), Fraction(0)), (Fraction(-1), Fraction(0))))
    report = m.validate()
    assert not report.valid
    assert any("non-positive slope" in v for v in report.violations)
    with pytest.raises(MapError):
        piecewise_linear([0], [(1, 0), (-1, 0)])


def test_discontinuity_and_unsorted_breakpoints_rejected():
    jump = PiecewiseLinearMap((Fraction(0),), ((Fraction(1), Fraction(0)), (Fraction(1), Fraction(1))))
    assert any("discontinu" in v for v in jump.validate().violations)
    unsorted = PiecewiseLinearMap(
        (Fraction(1), Fraction(0)),
        ((Fraction(1), Fraction(0)), (Fraction(1), Fraction(0)), (Fraction(1), Fraction(0))))
    assert any("sorted" in v for v in unsorted.validate().violations)


@pytest.mark.parametrize("x, want", [(0, 1), (-3, -2), (Fraction(1, 2), 2)])
def test_eval_kinked_map(x, want):
    assert F1.eval(Fraction(x)) == want


def test_identity():
    for x in (Fraction(-7, 3), Fraction(0), Fraction(10**9, 7)):
        assert identity().eval(x) == x


def test_invert_examples():
    assert translation(1).invert().eval(Fraction(5)) == 4
    assert translation(1).invert() == translation(-1)
    assert F1.invert().eval(Fraction(5)) == 2
    assert F1.invert().invert() == F1


def test_invert_roundtrip_grid():
    inv = F1.invert()
    xs = [Fraction(k, 7) for k in range(-5000, 5000)]
    assert all(inv.eval(F1.eval(x)) == x for x in xs)
    assert all(F1.eval(inv.eval(x)) == x for x in xs)


def test_compose_examples():
    assert compose(translation(1), translation(-1)) == identity()
    assert compose(F1, F1).eval(Fraction(0)) == 3
    assert F1.eval(F1.eval(Fraction(0))) == 3


def test_sin_map_inverse_tolerance():
    f = SinPerturbationMap(Fraction(1, 10), Fraction(0))
    g = f.invert()
    for y in np.linspace(-30, 30, 2001):
        # bracket width is relative to |y|; f has slope at most 1 + 2*pi/10
        assert abs(f.eval_float(g.eval_float(y)) - y) <= 2 * INVERSION_TOL * max(1.0, abs(y))
    assert f.validate().valid
    assert not SinPerturbationMap(Fraction(1, 5), Fraction(0)).validate().valid


def test_sin_map_fixes_integers_exactly():
    f = SinPerturbationMap(Fraction(1, 10), Fraction(0))
    ks = np.arange(-10**5, 10**5, dtype=float)
    assert np.array_equal(f.eval_array(ks), ks)


def test_custom_map_needs_bound_to_invert():
    m = CustomMap(lambda x: x + 0.5 * np.tanh(x))
    with pytest.raises(MapError, match="cannot bracket inverse"):
        m.invert()
    bounded = CustomMap(lambda x: x + 0.5 * np.tanh(x), displacement_bound=0.5)
    y = bounded.invert().eval_float(3.0)
    assert abs(bounded.eval_float(y) - 3.0) <= 1e-11


def test_custom_map_monotonicity_checked():
    bad = CustomMap(lambda x: -x, displacement_bound=1e9)
    assert not bad.validate().valid


def test_json_roundtrip():
    for m in (F1, affine("3/2", "-1/3"), SinPerturbationMap(Fraction(1, 10), Fraction(1, 2))):
        assert map_from_json(m.to_json()) == m


# --- random piecewise-linear maps -------------------------------------------

fractions = st.fractions(min_value=-20, max_value=20, max_denominator=12)
slopes = st.fractions(min_value=Fraction(1, 8), max_value=8, max_denominator=12)


@st.composite
def pl_maps(draw):
    bps = sorted(set(draw(st.lists(fractions, max_size=5))))
    ss = draw(st.lists(slopes, min_size=len(bps) + 1, max_size=len(bps) + 1))
    c = draw(fractions)
    pieces = [(ss[0], c)]
    for b, s in zip(bps, ss[1:]):
        a0, c0 = pieces[-1]
        pieces.append((s, a0 * b + c0 - s * b))
    return piecewise_linear(bps, pieces)


@settings(max_examples=60, deadline=None)
@given(pl_maps(), st.lists(fractions, min_size=2, max_size=20))
def test_pl_monotone_and_roundtrip(m, xs):
    xs = sorted(set(xs))
    ys = [m.eval(x) for x in xs]
    assert all(a < b for a, b in zip(ys, ys[1:]))
    inv = m.invert()
    assert all(inv.eval(y) == x for x, y in zip(xs, ys))
    assert inv.invert() == m


@settings(max_examples=60, deadline=None)
@given(pl_maps(), pl_maps(), pl_maps(), st.lists(fractions, min_size=1, max_size=10))
def test_pl_composition(f, g, h, xs):
    fg = compose(f, g)
    assert isinstance(fg, PiecewiseLinearMap)
    assert len(fg.pieces) <= len(f.pieces) + len(g.pieces)
    left, right = compose(f, compose(g, h)), compose(compose(f, g), h)
    for x in xs:
        assert fg.eval(x) == f.eval(g.eval(x))
        assert left.eval(x) == right.eval(x)


@settings(max_examples=40, deadline=None)
@given(pl_maps())
def test_float_path_matches_exact(m):
    xs = np.linspace(-25, 25, 101)
    exact = np.array([float(m.eval(Fraction(x))) for x in xs])
    assert np.allclose(m.eval_array(xs), exact, rtol=1e-12, atol=1e-12)
