"""Infinitely generated systems with tower-exponential displacements.

Rank ``k >= 1`` is drawn with probability ``1/(k(k+1))`` and moves the point
by ``E_k = exp(exp(k))``: with sign ``(-1)^k`` in the alternating variant,
with a fair random sign in the symmetric one.  The perturbed variant is the
alternating one plus a bounded per-step drift of at most ``delta``.

Positions are never evaluated in floating point once a rank of 7 or more is
present: a state is the base point ``x0`` plus integer coefficients per
rank, and the top nonzero rank decides the side because
``E_K / E_{K-1} = exp(e^K - e^(K-1)) >= exp(693)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numba as nb
import numpy as np
from numba import types
from numba.typed import Dict

from . import engine, rng

ALTERNATING = "alternating"
SYMMETRIC = "symmetric"
PERTURBED = "perturbed"
VARIANTS = (ALTERNATING, SYMMETRIC, PERTURBED)
_CODES = {ALTERNATING: 0, SYMMETRIC: 1, PERTURBED: 2}

BELOW, INSIDE, ABOVE = "Below", "Inside", "Above"

DOMINANCE_RANK = 7
FLOAT_RANKS = DOMINANCE_RANK - 1
EPS = 2.0**-52
# log of the smallest dominance ratio E_7 / E_6
LOG_DOMINANCE = math.exp(DOMINANCE_RANK) - math.exp(DOMINANCE_RANK - 1)
MAX_STEPS = 10**8

_E = np.array([0.0] + [math.exp(math.exp(k)) for k in range(1, FLOAT_RANKS + 1)])
# relative error of each float E_k: exp(k) carries ~e^k ulps into the outer exp
_E_REL = np.array([0.0] + [(math.exp(k) + 2.0) * EPS for k in range(1, FLOAT_RANKS + 1)])


@dataclass(frozen=True)
class MonsterSystem:
    variant: str = ALTERNATING
    delta: float = 1.0
    label: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not (0 <= self.delta <= 1):
            raise ValueError("perturbation bound must lie in [0, 1]")

    def to_json(self) -> dict:
        out = {"kind": "monster", "variant": self.variant}
        if self.variant == PERTURBED:
            out["delta"] = self.delta
        if self.label:
            out["label"] = self.label
        return out


def monster_from_json(obj: dict) -> MonsterSystem:
    if obj.get("kind") != "monster":
        raise ValueError("not a monster system")
    return MonsterSystem(obj["variant"], float(obj.get("delta", 1.0)), obj.get("label", ""))


def rank_probability(k: int) -> Fraction:
    return Fraction(1, k * (k + 1))


def sample_rank(u: float) -> int:
    """k = floor(1/u), so that P(k >= m) = P(u <= 1/m) = 1/m."""
    if not (0 < u <= 1):
        raise ValueError("u must lie in (0, 1]")
    return int(Fraction(u) ** -1 // 1)


def rank_from_draw(r: int) -> int:
    """Rank for a 64-bit draw, exact: u = m / 2^53 with m = (r >> 11) + 1."""
    return (1 << 53) // ((r >> 11) + 1)


def sign_from_draw(r: int, k: int, variant: str) -> int:
    if variant == SYMMETRIC:
        return 1 if r & 1 == 0 else -1
    return -1 if k & 1 else 1


@dataclass
class RankState:
    x0: float = 0.0
    coeffs: dict[int, int] = field(default_factory=dict)
    n: int = 0

    def copy(self) -> "RankState":
        return RankState(self.x0, dict(self.coeffs), self.n)

    @property
    def max_rank(self) -> int:
        return max((k for k, c in self.coeffs.items() if c), default=0)

    @property
    def mass(self) -> int:
        return sum(abs(c) for c in self.coeffs.values())

    def to_json(self) -> dict:
        return {"x0": self.x0, "n": self.n,
                "coeffs": {str(k): c for k, c in sorted(self.coeffs.items()) if c}}


def apply_rank(state: RankState, k: int, variant: str = ALTERNATING, sign: int = 1,
               drift: float = 0.0) -> RankState:
    """Return the state after one application of rank ``k``."""
    if k < 1:
        raise ValueError("rank must be >= 1")
    if variant == SYMMETRIC:
        if sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        s = sign
    else:
        s = -1 if k & 1 else 1
    out = state.copy()
    c = out.coeffs.get(k, 0) + s
    if c:
        out.coeffs[k] = c
    else:
        out.coeffs.pop(k, None)
    out.x0 += drift
    out.n += 1
    return out


def float_position(state: RankState) -> tuple[float, float]:
    """Float value and a rigorous absolute error bound, for max rank <= 6.

    The summation order matches the compiled trajectory loop exactly.
    """
    if state.max_rank > FLOAT_RANKS:
        raise ValueError("float evaluation only below the dominance rank")
    val = state.x0
    mag = abs(state.x0)
    err = 0.0
    terms = 1
    for k in range(1, FLOAT_RANKS + 1):
        c = state.coeffs.get(k, 0)
        if c:
            t = c * _E[k]
            val += t
            err += abs(t) * _E_REL[k]
            mag += abs(t)
            terms += 1
    # rounding of the products and the running sum
    err += mag * (terms + 1) * EPS
    return float(val), float(err)


def position_vs_interval(state: RankState, J: tuple[float, float] = (-10.0, 10.0)) -> str:
    a, b = float(J[0]), float(J[1])
    if not (abs(a) <= 1e6 and abs(b) <= 1e6 and a <= b):
        raise ValueError("interval must satisfy a <= b and |a|, |b| <= 1e6")
    K = state.max_rank
    if K >= DOMINANCE_RANK:
        # lower ranks, base point and J total at most (n + |x0| + 1e6) E_{K-1};
        # e^K - e^(K-1) grows with K, so its value at K = 7 bounds all cases
        slack = max(state.n, 1) + abs(state.x0) + 1e6
        assert math.log(slack) < LOG_DOMINANCE, "dominance bound violated"
        return ABOVE if state.coeffs[K] > 0 else BELOW
    val, err = float_position(state)
    if val < a - err:
        return BELOW
    if val > b + err:
        return ABOVE
    return INSIDE


# ---------------------------------------------------------------------------
# compiled trajectory

_ONE53 = np.uint64(1) << np.uint64(53)


@nb.njit(cache=True, nogil=True)
def _max_big(big):
    m = 0
    for k in big:
        if big[k] != 0 and k > m:
            m = k
    return m


@nb.njit(cache=True, nogil=True)
def _run_kernel(code, steps, master, trial, ja, jb, delta, record, E, E_rel):
    key = rng.stream_key_nb(master, trial)
    salt_map = np.uint64(0)
    salt_drift = np.uint64(rng.SALT_DRIFT)
    c = np.zeros(FLOAT_RANKS + 1, np.int64)
    big = Dict.empty(key_type=types.int64, value_type=types.int64)
    top = 0
    x0 = 0.0
    ks = np.zeros(steps if record else 0, np.int64)
    inside = np.zeros(16, np.int64)
    n_inside = 0
    late = 0
    half = steps // 2
    for n in range(1, steps + 1):
        r = rng.draw_nb(key, n, salt_map)
        k = np.int64(_ONE53 // ((r >> np.uint64(11)) + np.uint64(1)))
        if code == 1:
            s = 1 if (r & np.uint64(1)) == 0 else -1
        else:
            s = -1 if (k & 1) == 1 else 1
        if record:
            ks[n - 1] = k
        if k <= FLOAT_RANKS:
            c[k] += s
        else:
            v = big.get(k, 0) + s
            if v == 0:
                big.pop(k)
                if k == top:
                    top = _max_big(big)
            else:
                big[k] = v
                if k > top:
                    top = k
        if code == 2:
            x0 += delta * (2.0 * rng.to_unit_nb(rng.draw_nb(key, n, salt_drift)) - 1.0)
        if top >= DOMINANCE_RANK:
            continue
        val = x0
        mag = abs(x0)
        err = 0.0
        terms = 1
        for j in range(1, FLOAT_RANKS + 1):
            if c[j] != 0:
                t = c[j] * E[j]
                val += t
                err += abs(t) * E_rel[j]
                mag += abs(t)
                terms += 1
        err += mag * (terms + 1) * EPS
        if val >= ja - err and val <= jb + err:
            if n_inside == inside.shape[0]:
                grown = np.zeros(2 * inside.shape[0], np.int64)
                grown[:n_inside] = inside
                inside = grown
            inside[n_inside] = n
            n_inside += 1
            if n > half:
                late += 1
    keys = np.zeros(len(big), np.int64)
    vals = np.zeros(len(big), np.int64)
    i = 0
    for k in big:
        keys[i] = k
        vals[i] = big[k]
        i += 1
    return ks, inside[:n_inside], late, c, keys, vals, x0


@nb.njit(cache=True, nogil=True)
def _rank_events_kernel(master, trial_lo, trial_hi, steps):
    """Record events of rank-only sequences.

    For every record rank k that is followed, within the run, by a rank
    >= k, returns k, whether that next rank equals k, and whether it is
    >= 2k.
    """
    cap = 64
    rec = np.zeros(cap, np.int64)
    eq = np.zeros(cap, np.bool_)
    dbl = np.zeros(cap, np.bool_)
    m = 0
    salt = np.uint64(0)
    for t in range(trial_lo, trial_hi):
        key = rng.stream_key_nb(master, t)
        cur = 0
        waiting = False
        for n in range(1, steps + 1):
            r = rng.draw_nb(key, n, salt)
            k = np.int64(_ONE53 // ((r >> np.uint64(11)) + np.uint64(1)))
            if waiting and k >= cur:
                if m == cap:
                    cap *= 2
                    rec2 = np.zeros(cap, np.int64)
                    eq2 = np.zeros(cap, np.bool_)
                    dbl2 = np.zeros(cap, np.bool_)
                    rec2[:m] = rec[:m]
                    eq2[:m] = eq[:m]
                    dbl2[:m] = dbl[:m]
                    rec, eq, dbl = rec2, eq2, dbl2
                rec[m] = cur
                eq[m] = k == cur
                dbl[m] = k >= 2 * cur
                m += 1
                # a repeat of the record rank is not a new record
                waiting = k > cur
                if k > cur:
                    cur = k
            elif k > cur:
                cur = k
                waiting = True
    return rec[:m], eq[:m], dbl[:m]


@dataclass
class RankTrace:
    variant: str
    seed: int
    trial: int
    steps: int
    J: tuple[float, float]
    ranks: np.ndarray
    inside_steps: np.ndarray
    late_inside: int
    final: RankState

    @property
    def running_max(self) -> np.ndarray:
        return np.maximum.accumulate(self.ranks) if self.ranks.size else self.ranks

    @property
    def record_steps(self) -> np.ndarray:
        """1-based steps n_j where a new highest rank appears."""
        k = self.ranks
        if k.size == 0:
            return np.zeros(0, np.int64)
        prev = np.concatenate([[0], np.maximum.accumulate(k)[:-1]])
        return np.flatnonzero(k > prev) + 1

    @property
    def last_inside(self) -> int:
        return int(self.inside_steps[-1]) if self.inside_steps.size else 0

    def summary(self) -> dict:
        return {
            "variant": self.variant, "seed": self.seed, "trial": self.trial,
            "steps": self.steps, "J": list(self.J),
            "inside_events": int(self.inside_steps.size),
            "last_inside_step": self.last_inside,
            "max_rank": int(self.ranks.max()) if self.ranks.size else 0,
            "records": int(self.record_steps.size),
        }


def _check_run_args(system, steps, J):
    if isinstance(system, str):
        system = MonsterSystem(system)
    if not (1 <= steps <= MAX_STEPS):
        raise ValueError(f"steps must lie in [1, {MAX_STEPS}]")
    a, b = float(J[0]), float(J[1])
    if not (abs(a) <= 1e6 and abs(b) <= 1e6 and a <= b):
        raise ValueError("interval must satisfy a <= b and |a|, |b| <= 1e6")
    # the compiled loop relies on the dominance bound for every feasible n
    assert math.log(steps + steps * system.delta + 1e6) < LOG_DOMINANCE
    return system, a, b


def run_monster(system: MonsterSystem | str, steps: int, master_seed: int = 0,
                J: tuple[float, float] = (-10.0, 10.0), trial: int = 0,
                record: bool = True) -> RankTrace:
    """Simulate one trajectory from x0 = 0 for ``steps`` steps."""
    system, a, b = _check_run_args(system, steps, J)
    ks, inside, late, c, keys, vals, x0 = _run_kernel(
        _CODES[system.variant], int(steps), np.uint64(master_seed), int(trial), a, b,
        float(system.delta), record, _E, _E_REL)
    coeffs = {k: int(c[k]) for k in range(1, FLOAT_RANKS + 1) if c[k]}
    coeffs.update({int(k): int(v) for k, v in zip(keys, vals) if v})
    final = RankState(float(x0), dict(sorted(coeffs.items())), int(steps))
    return RankTrace(system.variant, int(master_seed), int(trial), int(steps), (a, b),
                     ks, inside, int(late), final)


def run_monster_reference(system: MonsterSystem | str, steps: int, master_seed: int = 0,
                          J: tuple[float, float] = (-10.0, 10.0), trial: int = 0) -> RankTrace:
    """Pure-Python trajectory through apply_rank and position_vs_interval."""
    system, a, b = _check_run_args(system, steps, J)
    key = rng.stream_key(int(master_seed), int(trial))
    state = RankState()
    ks, inside = [], []
    for n in range(1, steps + 1):
        r = rng.draw(key, n)
        k = rank_from_draw(r)
        drift = 0.0
        if system.variant == PERTURBED:
            drift = system.delta * (2.0 * rng.to_unit(rng.draw(key, n, rng.SALT_DRIFT)) - 1.0)
        state = apply_rank(state, k, system.variant, sign_from_draw(r, k, system.variant), drift)
        ks.append(k)
        if position_vs_interval(state, (a, b)) == INSIDE:
            inside.append(n)
    late = sum(1 for n in inside if n > steps // 2)
    return RankTrace(system.variant, int(master_seed), int(trial), int(steps), (a, b),
                     np.array(ks, np.int64), np.array(inside, np.int64), late, state)


def monster_visit_counts(system: MonsterSystem, params, J: tuple[float, float],
                         workers: int | None = None) -> np.ndarray:
    """Per trial: [Inside steps, Inside steps after N/2], as in walk.visit_counts."""
    system, a, b = _check_run_args(system, int(params.horizon), J)

    def run(lo, hi):
        out = np.zeros((hi - lo, 2), np.int64)
        for t in range(lo, hi):
            _, inside, late, *_ = _run_kernel(
                _CODES[system.variant], int(params.horizon), np.uint64(params.master_seed), t,
                a, b, float(system.delta), False, _E, _E_REL)
            out[t - lo] = inside.size, late
        return out

    return np.concatenate(engine.fan_out(int(params.trials), workers, run))


def run_many(system: MonsterSystem | str, steps: int, seeds, J=(-10.0, 10.0),
             workers: int | None = None) -> list[RankTrace]:
    """One trajectory per master seed; traces come back in seed order."""
    seeds = [int(s) for s in seeds]

    def run(lo, hi):
        return [run_monster(system, steps, s, J) for s in seeds[lo:hi]]

    return [t for part in engine.fan_out(len(seeds), workers, run) for t in part]


# ---------------------------------------------------------------------------
# rank lemmas

@dataclass
class LemmaReport:
    variant: str
    steps: int
    last_n_K_below_sqrt: int
    last_j_repeat: int
    last_j_slow_record: int
    records: int
    record_events: int
    equal_hits: int
    double_hits: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def record_events(ranks: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(record rank, next rank >= it was equal, next rank >= it was >= twice it)."""
    rec, eq, dbl = [], [], []
    cur = 0
    waiting = False
    for k in ranks.tolist():
        if waiting and k >= cur:
            rec.append(cur)
            eq.append(k == cur)
            dbl.append(k >= 2 * cur)
            waiting = k > cur
            cur = max(cur, k)
        elif k > cur:
            cur = k
            waiting = True
    return np.array(rec, np.int64), np.array(eq, bool), np.array(dbl, bool)


def check_rank_lemmas(trace: RankTrace) -> LemmaReport:
    k = trace.ranks
    if k.size == 0:
        raise ValueError("trace was run without recording ranks")
    n = np.arange(1, k.size + 1)
    K = np.maximum.accumulate(k)
    low = np.flatnonzero(K <= np.sqrt(n))
    last_sqrt = int(n[low[-1]]) if low.size else 0
    recs = trace.record_steps
    j_of_n = np.searchsorted(recs, n, side="right")  # records up to and including n
    is_rec = np.zeros(k.size, bool)
    is_rec[recs - 1] = True
    rep = np.flatnonzero((k == K) & ~is_rec)
    last_rep = int(j_of_n[rep[-1]]) if rep.size else 0
    j = np.arange(1, recs.size + 1)
    slow = np.flatnonzero(k[recs - 1] <= 2.0 ** (j / 3.0))
    last_slow = int(j[slow[-1]]) if slow.size else 0
    rec, eq, dbl = record_events(k)
    return LemmaReport(trace.variant, trace.steps, last_sqrt, last_rep, last_slow,
                       int(recs.size), int(rec.size), int(eq.sum()), int(dbl.sum()))


def pooled_record_events(master_seed: int, runs: int, steps: int,
                         workers: int | None = None):
    """Record events from ``runs`` rank-only sequences of ``steps`` draws each."""
    parts = engine.fan_out(runs, workers, lambda lo, hi: _rank_events_kernel(
        np.uint64(master_seed), lo, hi, int(steps)))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def frequency_test(rec: np.ndarray, eq: np.ndarray, dbl: np.ndarray) -> dict:
    """z-scores of the equal-rank and doubling events against 1/(k+1) and 1/2."""
    p = 1.0 / (rec.astype(float) + 1.0)
    z_eq = (eq.sum() - p.sum()) / math.sqrt((p * (1 - p)).sum())
    z_dbl = (dbl.sum() - 0.5 * rec.size) / math.sqrt(0.25 * rec.size)
    return {"events": int(rec.size), "equal_observed": int(eq.sum()),
            "equal_expected": float(p.sum()), "z_equal": float(z_eq),
            "double_observed": int(dbl.sum()), "z_double": float(z_dbl)}


def rank_frequencies(n_samples: int, master_seed: int = 0, kmax: int = 20) -> np.ndarray:
    """Counts of ranks 1..kmax among ``n_samples`` draws of one stream."""
    return _rank_counts(np.uint64(master_seed), int(n_samples), int(kmax))


@nb.njit(cache=True, nogil=True)
def _rank_counts(master, n_samples, kmax):
    key = rng.stream_key_nb(master, 0)
    out = np.zeros(kmax + 1, np.int64)
    for n in range(1, n_samples + 1):
        r = rng.draw_nb(key, n, np.uint64(0))
        k = np.int64(_ONE53 // ((r >> np.uint64(11)) + np.uint64(1)))
        if k <= kmax:
            out[k] += 1
    return out[1:]
