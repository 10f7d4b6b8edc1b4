import numpy as np
import pytest

from rdsline import rng
from rdsline.fixtures import load_fixture
from rdsline.homeo import translation
from rdsline.monster import MonsterSystem
from rdsline.system import inverse_system, make_system
from rdsline.walk import (
    TENDS_MINUS,
    TENDS_PLUS,
    UNDECIDED,
    SimParams,
    classify_system,
    classify_trajectory,
    estimate_phi,
    estimate_phi_many,
    recurrence_stats,
    sample_trajectory,
)

SHIFT = make_system([translation(1)], ["1"])
SYM = make_system([translation(1), translation(-1)], ["1/2", "1/2"])
ASYM = make_system([translation(1), translation(-1)], ["2/3", "1/3"])


def test_params_validation():
    for bad in ({"horizon": 0}, {"escape": 0}, {"confine_fraction": 1}, {"trials": 0},
                {"master_seed": -1}):
        with pytest.raises(ValueError):
            SimParams(**bad)


def test_shift_trajectory():
    assert list(sample_trajectory(SHIFT, 0, SimParams(horizon=5), 0)) == [1, 2, 3, 4, 5]


def test_trajectory_determinism():
    p = SimParams(horizon=200, master_seed=99)
    a = list(sample_trajectory(load_fixture("class2"), 0.5, p, 17))
    assert a == list(sample_trajectory(load_fixture("class2"), 0.5, p, 17))
    assert a != list(sample_trajectory(load_fixture("class2"), 0.5, p, 18))


def test_trajectory_map_frequencies():
    n = 10**6
    traj = np.fromiter(sample_trajectory(ASYM, 0, SimParams(horizon=n, master_seed=5), 0),
                       float, n)
    ups = int(np.sum(np.diff(np.concatenate([[0.0], traj])) > 0))
    p = 2 / 3
    assert abs(ups - n * p) <= 3 * np.sqrt(n * p * (1 - p))


def test_classify_trajectory_examples():
    p = SimParams(horizon=10**4, escape=100)
    out = classify_trajectory(sample_trajectory(SHIFT, 0, p, 0), p)
    assert out.verdict == TENDS_PLUS and out.first_exit_step == 101
    assert out.final_position > p.confine_fraction * p.escape
    assert classify_trajectory([(-1) ** n for n in range(10**4)], p).verdict == UNDECIDED
    # leaves, then comes back below M/2
    assert classify_trajectory([0, 150, 40, 60], p).verdict == UNDECIDED
    assert classify_trajectory([0, -150, -60], p).verdict == TENDS_MINUS


def test_symmetric_walk_mostly_undecided():
    est = estimate_phi(SYM, 0.0, SimParams(trials=10**4, master_seed=1))
    assert est.phi_zero >= 0.95


def test_partition_is_exact():
    for e in estimate_phi_many(load_fixture("class4"), [-5.0, 0.0, 5.0],
                               SimParams(trials=777, master_seed=3)):
        assert e.plus + e.minus + e.undecided == e.trials == 777


def test_estimate_phi_examples():
    assert abs(estimate_phi(ASYM, 0.0, SimParams(trials=2000)).phi_plus - 1) <= 0.02
    assert abs(estimate_phi(SYM, 0.0, SimParams(trials=2000)).phi_zero - 1) <= 0.05
    c4 = load_fixture("class4")
    hi, lo = estimate_phi_many(c4, [4.0, -4.0], SimParams(trials=4000))
    assert hi.phi_plus - lo.phi_plus > 2 * hi.ci_halfwidth


def test_monotonicity_band():
    ests = estimate_phi_many(load_fixture("class4"), [-20.0, -5.0, 0.0, 5.0, 20.0],
                             SimParams(trials=2000, master_seed=11))
    for a, b in zip(ests, ests[1:]):
        assert a.phi_plus <= b.phi_plus + 2 * (a.ci_halfwidth + b.ci_halfwidth)


@pytest.mark.parametrize("workers", [2, 8])
def test_estimate_worker_independent(workers):
    p = SimParams(trials=1001, master_seed=42)
    sys = load_fixture("class4")
    assert estimate_phi(sys, 3.0, p, workers=1) == estimate_phi(sys, 3.0, p, workers=workers)


def _expected_visits(n_steps: int) -> float:
    # exact occupation probabilities of the simple random walk
    size = 2 * n_steps + 3
    mid = n_steps + 1
    prob = np.zeros(size)
    prob[mid] = 1.0
    total = 0.0
    for _ in range(n_steps):
        prob = 0.5 * (np.roll(prob, 1) + np.roll(prob, -1))
        total += prob[mid - 1:mid + 2].sum()
    return total


def test_recurrence_visits_match_exact_occupation():
    oracle = _expected_visits(10**4)
    assert abs(oracle - 239.4) <= 0.25 * 239.4
    st = recurrence_stats(SYM, (-1, 1), 0.0, SimParams(horizon=10**4, trials=2000))
    assert abs(st.mean_visits - oracle) <= 0.25 * oracle
    # arcsine law: a zero in (N/2, N] with probability 1/2
    assert abs(st.fraction_late_visit - 0.5) <= 0.05


def test_recurrence_counting_convention():
    st = recurrence_stats(SHIFT, (-1, 1), 0.0, SimParams(horizon=100, trials=3))
    assert st.mean_visits == 1.0 and st.mean_visits_late == 0.0
    with pytest.raises(ValueError):
        recurrence_stats(SHIFT, (1, -1), 0.0, SimParams())


def test_monster_leaves_compacts():
    st = recurrence_stats(MonsterSystem("alternating"), (-10, 10), 0.0,
                          SimParams(horizon=10**4, trials=500))
    assert st.fraction_late_visit <= 0.01


@pytest.mark.parametrize("name, klass", [("class1", 1), ("class2", 2), ("class3", 3),
                                          ("class4", 4)])
def test_fixture_classes(name, klass):
    v = classify_system(load_fixture(name))
    assert v.klass == klass, v.refusal
    assert not v.swapped
    if klass in (1, 2):
        assert all(e.phi_plus <= v.tau for e in v.inverse)
    for label, side in (("forward", v.forward), ("inverse", v.inverse)):
        zeros = [e.phi_zero for e in side]
        if not (all(z <= v.tau for z in zeros) or all(z >= 1 - v.tau for z in zeros)):
            # slow escapers cut off by the horizon must be reported, never hidden
            assert any(n.startswith(label) and "censoring" in n for n in v.notes)
            assert all(e.minus == 0 or e.plus == 0 for e in side)
    assert v.to_json()["generator"] == rng.GENERATOR_ID


def test_inverse_of_class2_is_swapped():
    v = classify_system(inverse_system(load_fixture("class2")))
    assert v.klass == 2 and v.swapped


def test_mirrored_asymmetric_walk_flags_orientation():
    v = classify_system(make_system([translation(1), translation(-1)], ["1/3", "2/3"]))
    assert v.klass == 1 and (v.orientation_reversed or v.swapped)


def test_unshiftable_system_refused():
    v = classify_system(SHIFT)
    assert v.refused and "not shiftable" in v.refusal


def test_unreachable_threshold_looks_recurrent():
    # the finite-horizon proxy cannot see escape it never reaches; the default
    # horizon and threshold are what separate classes 1 and 3
    short = SimParams(horizon=50, escape=1000, trials=500)
    assert classify_system(ASYM, params=short).klass == 3
    assert classify_system(ASYM).klass == 1
