import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from rdsline.monster import (
    ABOVE,
    BELOW,
    INSIDE,
    MonsterSystem,
    RankState,
    apply_rank,
    check_rank_lemmas,
    float_position,
    frequency_test,
    monster_from_json,
    pooled_record_events,
    position_vs_interval,
    rank_frequencies,
    rank_from_draw,
    rank_probability,
    record_events,
    run_many,
    run_monster,
    run_monster_reference,
    sample_rank,
)

# --- high-precision oracle ---------------------------------------------------

FRAC_BITS = 1200


def _tower_ints():
    with mpmath.workprec(2000):
        return [0] + [int(mpmath.floor(mpmath.exp(mpmath.exp(k)) * mpmath.mpf(2) ** FRAC_BITS))
                      for k in range(1, 8)]


TOWER = _tower_ints()


def oracle(state: RankState, J) -> str:
    """Exact verdict: fixed-point integers with 1200 fraction bits.

    Truncating each constant moves the value by less than
    sum|c_k| * 2**-1200, far below any gap the tests can produce.
    """
    x0 = Fraction(state.x0)
    assert (x0 * 2**FRAC_BITS).denominator == 1
    val = int(x0 * 2**FRAC_BITS) + sum(c * TOWER[k] for k, c in state.coeffs.items())
    a, b = (int(Fraction(v) * 2**FRAC_BITS) for v in J)
    return BELOW if val < a else ABOVE if val > b else INSIDE


# --- ranks -------------------------------------------------------------------

def test_sample_rank_examples():
    assert sample_rank(0.3) == 3
    assert sample_rank(1.0) == 1
    assert sample_rank(0.9999999) == 1
    assert sample_rank(0.5) == 2
    with pytest.raises(ValueError):
        sample_rank(0.0)
    assert [rank_probability(k) for k in (1, 2, 3)] == [Fraction(1, 2), Fraction(1, 6),
                                                        Fraction(1, 12)]


def test_rank_from_draw_is_floor_of_inverse_uniform():
    gen = np.random.default_rng(7)
    for r in gen.integers(0, 2**63, 2000, dtype=np.uint64).tolist() + [0, 2**64 - 1]:
        u = Fraction((r >> 11) + 1, 2**53)
        assert rank_from_draw(r) == math.floor(1 / u)


def test_rank_frequencies():
    n = 10**7
    counts = rank_frequencies(n, master_seed=3, kmax=20)
    for k, c in enumerate(counts, start=1):
        p = float(rank_probability(k))
        assert abs(c - n * p) <= 4 * math.sqrt(n * p * (1 - p)), k


def test_max_rank_tail_probability():
    exact = Fraction(9, 10) ** 100
    assert float(exact) == pytest.approx(2.656e-5, rel=1e-3)
    assert float(exact) < math.exp(-10)


# --- states ------------------------------------------------------------------

def test_apply_rank_examples():
    s = apply_rank(RankState(), 2)
    assert s.coeffs == {2: 1} and s.n == 1
    assert float_position(s)[0] == pytest.approx(1618.18, abs=0.01)
    assert apply_rank(RankState(), 1).coeffs == {1: -1}
    s = apply_rank(apply_rank(RankState(), 3, "symmetric", 1), 3, "symmetric", -1)
    assert s.coeffs == {} and s.n == 2
    with pytest.raises(ValueError):
        apply_rank(RankState(), 0)


def test_position_examples():
    J = (-10.0, 10.0)
    assert position_vs_interval(RankState(), J) == INSIDE
    assert position_vs_interval(RankState(coeffs={1: -1}, n=1), J) == BELOW
    assert float_position(RankState(coeffs={1: -1}))[0] == pytest.approx(-15.154, abs=1e-3)
    stuffed = RankState(coeffs={7: 1, 6: -10**6 + 1}, n=10**6)
    assert position_vs_interval(stuffed, J) == ABOVE == oracle(stuffed, J)
    with pytest.raises(ValueError):
        position_vs_interval(RankState(), (-2e6, 0))


def _check_agreement(state, J):
    got = position_vs_interval(state, J)
    want = oracle(state, J)
    if got == want:
        return 0
    # only conservative Inside verdicts within the float error bound may differ
    assert got == INSIDE, (state, got, want)
    val, err = float_position(state)
    assert min(abs(val - J[0]), abs(val - J[1])) <= err
    return 1


def test_float_branch_agrees_with_oracle():
    gen = np.random.default_rng(11)
    J = (-10.0, 10.0)
    ties = [0, 0, 0]
    for i in range(30_000):
        K = int(gen.integers(2, 7))
        coeffs = {k: int(c) for k in range(1, K)
                  if (c := gen.integers(-1000, 1001)) != 0}
        coeffs[K] = int(gen.choice([-2, -1, 1, 2]))
        st = RankState(0.0, coeffs, sum(abs(c) for c in coeffs.values()))
        mode = i % 3
        if mode:
            # land near a boundary; mode 2 lands inside the float error band
            val, err = float_position(st)
            scale = 1e-3 * max(1, abs(val)) if mode == 1 else err
            st.x0 = float(gen.choice(J)) - val + float(gen.normal(0, scale))
        ties[mode] += _check_agreement(st, J)
    assert ties[0] == ties[1] == 0
    assert 0 < ties[2] < 10_000


def test_dominance_branch_agrees_with_oracle():
    gen = np.random.default_rng(12)
    J = (-10.0, 10.0)
    for _ in range(2000):
        top = int(gen.choice([-1, 1]))
        budget = 10**6 - 1
        coeffs = {7: top}
        # adversarial: most of the budget on rank 6 against the sign of the top
        coeffs[6] = -top * int(gen.integers(budget // 2, budget + 1))
        rest = budget - abs(coeffs[6])
        for k in range(1, 6):
            c = int(gen.integers(-rest, rest + 1)) if rest else 0
            coeffs[k] = c
            rest -= abs(c)
        coeffs = {k: c for k, c in coeffs.items() if c}
        st = RankState(float(gen.normal(0, 1e3)), coeffs, 10**6)
        assert position_vs_interval(st, J) == oracle(st, J)


# --- trajectories ------------------------------------------------------------

@pytest.mark.parametrize("variant", ["alternating", "symmetric", "perturbed"])
def test_kernel_matches_reference(variant):
    for seed in (0, 1, 2):
        a = run_monster(variant, 3000, seed)
        b = run_monster_reference(variant, 3000, seed)
        assert np.array_equal(a.ranks, b.ranks)
        assert np.array_equal(a.inside_steps, b.inside_steps)
        assert a.final.coeffs == b.final.coeffs
        assert a.final.x0 == b.final.x0 and a.late_inside == b.late_inside


def test_trace_invariants():
    t = run_monster("alternating", 10**5, 5)
    assert np.all(np.diff(t.running_max) >= 0)
    assert np.all(np.diff(t.record_steps) > 0)
    assert t.final.mass <= t.final.n == 10**5
    ks, counts = np.unique(t.ranks, return_counts=True)
    for k, c in zip(ks.tolist(), counts.tolist()):
        assert t.final.coeffs.get(k, 0) == (-1) ** k * c
    s = run_monster("symmetric", 10**5, 5)
    ks, counts = np.unique(s.ranks, return_counts=True)
    for k, c in zip(ks.tolist(), counts.tolist()):
        ck = s.final.coeffs.get(k, 0)
        assert abs(ck) <= c and (c - ck) % 2 == 0


def test_perturbation_drift_is_bounded():
    t = run_monster(MonsterSystem("perturbed", 0.5), 10**4, 1)
    assert abs(t.final.x0) <= 0.5 * 10**4
    assert t.final.x0 != 0.0


def test_deterministic_given_seed():
    a, b = run_monster("symmetric", 10**4, 9), run_monster("symmetric", 10**4, 9)
    assert np.array_equal(a.ranks, b.ranks) and a.summary() == b.summary()


@pytest.mark.parametrize("variant", ["alternating", "symmetric"])
def test_visits_stop_early(variant):
    traces = run_many(variant, 10**5, range(20))
    assert [t.seed for t in traces] == list(range(20))
    assert sum(t.last_inside <= 10**3 for t in traces) >= 19


def test_run_argument_checks():
    with pytest.raises(ValueError):
        run_monster("alternating", 0)
    with pytest.raises(ValueError):
        run_monster("nope", 10)
    with pytest.raises(ValueError):
        MonsterSystem("perturbed", 2.0)


def test_json_roundtrip():
    m = MonsterSystem("perturbed", 0.25, "p")
    assert monster_from_json(m.to_json()) == m


# --- rank lemmas -------------------------------------------------------------

def test_record_events_by_hand():
    rec, eq, dbl = record_events(np.array([1, 1, 3, 2, 3, 7, 1, 20]))
    # record 1 -> next >=1 is 1 (equal); record 3 -> 3 (equal); record 7 -> 20 (double)
    assert rec.tolist() == [1, 3, 7]
    assert eq.tolist() == [True, True, False]
    assert dbl.tolist() == [False, False, True]


def test_lemma_report_stabilizes():
    rep = check_rank_lemmas(run_monster("symmetric", 10**6, 4))
    assert rep.last_n_K_below_sqrt < 10**4
    assert rep.records >= 10 and rep.equal_hits <= rep.record_events
    with pytest.raises(ValueError):
        check_rank_lemmas(run_monster("symmetric", 10, 4, record=False))


def test_pooled_record_event_frequencies():
    rec, eq, dbl = pooled_record_events(21, 2000, 10**4)
    assert rec.size >= 10**4
    out = frequency_test(rec, eq, dbl)
    assert abs(out["z_equal"]) <= 4 and abs(out["z_double"]) <= 4
