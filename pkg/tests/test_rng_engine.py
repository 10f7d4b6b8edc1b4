from fractions import Fraction

import numpy as np
import pytest

from rdsline import engine, rng
from rdsline.fixtures import load_fixture

MASTER = 12345


def test_draws_are_pure_functions_of_their_coordinates():
    key = rng.stream_key(MASTER, 7)
    assert rng.draw(key, 3) == rng.draw(rng.stream_key(MASTER, 7), 3)
    assert rng.draw(key, 3) != rng.draw(key, 4)
    assert rng.draw(key, 3, rng.SALT_STOP) != rng.draw(key, 3)
    assert rng.stream_key(MASTER, 0) != rng.stream_key(MASTER + 1, 0)


def test_numba_twins_agree():
    for t in range(50):
        key = rng.stream_key(MASTER, t)
        assert int(rng.stream_key_nb(np.uint64(MASTER), t)) == key
        for n in (0, 1, 999_999):
            for salt in (rng.SALT_MAP, rng.SALT_STOP, rng.SALT_DRIFT):
                r = rng.draw(key, n, salt)
                assert int(rng.draw_nb(np.uint64(key), n, np.uint64(salt))) == r
                assert rng.to_unit_nb(np.uint64(r)) == rng.to_unit(r)


def test_to_unit_range():
    assert rng.to_unit(0) == 2.0**-53
    assert rng.to_unit(rng.MASK64) == 1.0


def test_thresholds_are_exact():
    cuts = rng.thresholds([Fraction(1, 3), Fraction(1, 3), Fraction(1, 3)])
    assert cuts == [(2**64) // 3, (2 * 2**64) // 3]
    assert rng.choose(cuts[0] - 1, cuts) == 0
    assert rng.choose(cuts[0], cuts) == 1
    assert rng.choose(cuts[1], cuts) == 2
    assert rng.thresholds([Fraction(1, 2), Fraction(1, 2)]) == [2**63]
    assert rng.thresholds([Fraction(1)]) == []


def _enc(name):
    sys = load_fixture(name)
    enc = engine.encode(sys)
    assert enc is not None
    return sys, enc


@pytest.mark.parametrize("name", ["class1", "class2", "class4", "sin"])
def test_phi_kernel_matches_python(name):
    sys, enc = _enc(name)
    x0s = np.array([-5.0, 0.0, 3.5])
    k = engine._phi_kernel(x0s, 3, 40, np.uint64(MASTER), 300, 20.0, 0.5, *enc.args())
    p = engine._py_phi(sys, list(x0s), 3, 40, MASTER, 300, 20.0, 0.5)
    assert np.array_equal(k, p)


@pytest.mark.parametrize("name", ["class2", "sin"])
def test_visit_and_runmin_kernels_match_python(name):
    sys, enc = _enc(name)
    m = np.uint64(MASTER)
    assert np.array_equal(engine._visit_kernel(0.0, 0, 30, m, 400, -1.0, 1.0, *enc.args()),
                          engine._py_visits(sys, 0.0, 0, 30, MASTER, 400, -1.0, 1.0))
    x0s = np.array([-3.0, 0.0, 4.0])
    assert np.array_equal(
        engine._runmin_kernel(x0s, 0, 30, m, 400, -2.0, 15.0, *enc.args()),
        engine._py_runmin(sys, list(x0s), 0, 30, MASTER, 400, -2.0, 15.0))


@pytest.mark.parametrize("name", ["class3", "sin"])
def test_stop_and_meta_kernels_match_python(name):
    sys, enc = _enc(name)
    m = np.uint64(MASTER)
    starts = np.linspace(-3, 3, 25)
    k = engine._stop_kernel(starts, 5, 30, m, 10_000, 5.0, *enc.args())
    p = engine._py_stop(sys, list(starts), 5, 30, MASTER, 10_000, 5.0)
    for a, b in zip(k, p):
        assert np.array_equal(a, b)
    k = engine._meta_kernel(0.0, 0, 3, m, 200, 20, 10_000, 5.0, -10.05, 0.1, 201, *enc.args())
    p = engine._py_meta(sys, 0.0, 0, 3, MASTER, 200, 20, 10_000, 5.0, -10.05, 0.1, 201)
    assert np.array_equal(k[0], p[0]) and k[1:] == p[1:]
    assert int(np.sum(k[0])) + k[2] == 3 * 180 - k[1]


def test_stop_points_reject_bad_start_count():
    with pytest.raises(ValueError):
        engine.stop_points(load_fixture("class3"), [0.0, 1.0], 5, 0, 100, 5.0)


@pytest.mark.parametrize("workers", [2, 8])
def test_results_independent_of_worker_count(workers):
    sys = load_fixture("class2")
    x0s = [-5.0, 0.0, 5.0]
    base = engine.phi_counts(sys, x0s, 997, MASTER, 500, 20.0, 0.5, workers=1)
    assert np.array_equal(engine.phi_counts(sys, x0s, 997, MASTER, 500, 20.0, 0.5,
                                            workers=workers), base)
    v1 = engine.visit_counts(sys, 0.0, 101, MASTER, 500, -1, 1, workers=1)
    assert np.array_equal(engine.visit_counts(sys, 0.0, 101, MASTER, 500, -1, 1,
                                              workers=workers), v1)
    s1 = engine.stop_points(load_fixture("class3"), 0.0, 333, MASTER, 5000, 5.0, workers=1)
    sw = engine.stop_points(load_fixture("class3"), 0.0, 333, MASTER, 5000, 5.0, workers=workers)
    for a, b in zip(s1, sw):
        assert np.array_equal(a, b)
    h1 = engine.meta_histogram(load_fixture("class3"), 0.0, 9, MASTER, 100, 5000, 5.0,
                               -10.05, 0.1, 201, workers=1, burn=10)
    hw = engine.meta_histogram(load_fixture("class3"), 0.0, 9, MASTER, 100, 5000, 5.0,
                               -10.05, 0.1, 201, workers=workers, burn=10)
    assert np.array_equal(h1[0], hw[0]) and h1[1:] == hw[1:]


def test_map_frequencies_match_probabilities():
    # one million exact selections; each count within 3 sigma
    probs = [Fraction(1, 6), Fraction(1, 3), Fraction(1, 2)]
    cuts = rng.thresholds(probs)
    key = rng.stream_key(MASTER, 0)
    n = 10**6
    counts = np.zeros(3, int)
    for s in range(n):
        counts[rng.choose(rng.draw(key, s), cuts)] += 1
    for c, p in zip(counts, probs):
        p = float(p)
        assert abs(c - n * p) <= 3 * np.sqrt(n * p * (1 - p))
