"""Monte Carlo trajectories, escape probabilities, and the four-class verdict."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.stats import norm

from . import engine, rng
from .system import RandomSystem, check_shiftability, inverse_system

TENDS_PLUS = "TendsPlus"
TENDS_MINUS = "TendsMinus"
UNDECIDED = "Undecided"

DEFAULT_PROBES = (-20.0, -5.0, 0.0, 5.0, 20.0)
DEFAULT_TAU = 0.1
DEFAULT_CI_LEVEL = 0.95


@dataclass(frozen=True)
class SimParams:
    horizon: int = 10_000
    escape: float = 1000.0
    confine_fraction: float = 0.5
    trials: int = 2000
    master_seed: int = 0

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        if not self.escape > 0:
            raise ValueError("escape threshold must be positive")
        if not 0 < self.confine_fraction < 1:
            raise ValueError("confine_fraction must lie in (0, 1)")
        if int(self.trials) < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    def replace(self, **changes) -> "SimParams":
        return SimParams(**{**asdict(self), **changes})


@dataclass(frozen=True)
class TrajectoryOutcome:
    verdict: str
    first_exit_step: int | None
    final_position: float


@dataclass(frozen=True)
class PhiEstimate:
    x: float
    plus: int
    minus: int
    undecided: int
    ci_level: float = DEFAULT_CI_LEVEL

    @property
    def trials(self) -> int:
        return self.plus + self.minus + self.undecided

    @property
    def phi_plus(self) -> float:
        return self.plus / self.trials

    @property
    def phi_minus(self) -> float:
        return self.minus / self.trials

    @property
    def phi_zero(self) -> float:
        return self.undecided / self.trials

    @property
    def ci_halfwidth(self) -> float:
        """Normal-approximation half-width, worst case over the three proportions."""
        z = norm.ppf(0.5 + self.ci_level / 2)
        var = max(p * (1 - p) for p in (self.phi_plus, self.phi_minus, self.phi_zero))
        return float(z * math.sqrt(var / self.trials))

    @property
    def decided(self) -> int:
        return self.plus + self.minus

    def resolved_plus(self) -> float:
        """Share of TendsPlus among trajectories that escaped either way."""
        return self.plus / self.decided if self.decided else float("nan")

    def resolved_ci(self) -> float:
        if not self.decided:
            return float("inf")
        z = norm.ppf(0.5 + self.ci_level / 2)
        p = self.resolved_plus()
        return float(z * math.sqrt(p * (1 - p) / self.decided))

    def to_row(self) -> dict:
        return {
            "x": self.x,
            "phi_plus": self.phi_plus,
            "phi_minus": self.phi_minus,
            "phi_zero": self.phi_zero,
            "ci": self.ci_halfwidth,
            "trials": self.trials,
        }


def sample_trajectory(sys: RandomSystem, x0: float, params: SimParams,
                      trial_index: int) -> Iterator[float]:
    """Yield F_1(x0), ..., F_N(x0) for the stream of ``trial_index``."""
    cuts = rng.thresholds(sys.probs)
    key = rng.stream_key(int(params.master_seed), int(trial_index))
    x = float(x0)
    for n in range(1, int(params.horizon) + 1):
        x = engine.step(sys, cuts, x, rng.draw(key, n))
        yield x


def classify_trajectory(traj: Iterable[float], params: SimParams) -> TrajectoryOutcome:
    """Finite-horizon proxy for the limit of a trajectory.

    TendsPlus iff the path exceeds M and afterwards never drops below
    ``confine_fraction * M``; TendsMinus is the mirror image.
    """
    m = params.escape
    low = params.confine_fraction * m
    plus = minus = False
    first_exit = None
    x = float("nan")
    for n, x in enumerate(traj, start=1):
        if x > m:
            plus = True
        elif x < low:
            plus = False
        if x < -m:
            minus = True
        elif x > -low:
            minus = False
        if first_exit is None and abs(x) > m:
            first_exit = n
    verdict = TENDS_PLUS if plus else TENDS_MINUS if minus else UNDECIDED
    return TrajectoryOutcome(verdict, first_exit, x)


def estimate_phi(sys: RandomSystem, x: float, params: SimParams, workers: int | None = None,
                 ci_level: float = DEFAULT_CI_LEVEL) -> PhiEstimate:
    return estimate_phi_many(sys, [x], params, workers, ci_level)[0]


def estimate_phi_many(sys: RandomSystem, xs: Sequence[float], params: SimParams,
                      workers: int | None = None,
                      ci_level: float = DEFAULT_CI_LEVEL) -> list[PhiEstimate]:
    """Estimates at several points sharing the same trial streams."""
    counts = engine.phi_counts(sys, [float(x) for x in xs], int(params.trials),
                               int(params.master_seed), int(params.horizon),
                               float(params.escape), float(params.confine_fraction), workers)
    return [PhiEstimate(float(x), int(c[0]), int(c[1]), int(c[2]), ci_level)
            for x, c in zip(xs, counts)]


@dataclass(frozen=True)
class RecurrenceStats:
    interval: tuple[float, float]
    x0: float
    trials: int
    horizon: int
    mean_visits: float
    mean_visits_late: float
    fraction_late_visit: float

    def to_json(self) -> dict:
        return asdict(self)


def recurrence_stats(sys, interval: tuple[float, float], x0: float, params: SimParams,
                     workers: int | None = None) -> RecurrenceStats:
    """Visits of F_n(x0), n >= 1, to the closed interval J, split at N/2."""
    a, b = float(interval[0]), float(interval[1])
    if not (math.isfinite(a) and math.isfinite(b) and a <= b):
        raise ValueError("interval must be bounded")
    from .monster import MonsterSystem, monster_visit_counts

    if isinstance(sys, MonsterSystem):
        v = monster_visit_counts(sys, params, (a, b), workers)
    else:
        v = engine.visit_counts(sys, float(x0), int(params.trials), int(params.master_seed),
                                int(params.horizon), a, b, workers)
    return RecurrenceStats(
        (a, b), float(x0), int(params.trials), int(params.horizon),
        float(v[:, 0].mean()), float(v[:, 1].mean()), float((v[:, 1] > 0).mean()),
    )


# ---------------------------------------------------------------------------
# classification


@dataclass
class SideSummary:
    """Behaviour of one system (forward or inverse) read off its probe estimates."""

    regime: str  # "escaping", "recurrent", or "unclear"
    tendency: str | None = None  # "plus", "minus", "split" when escaping
    notes: list[str] = field(default_factory=list)


def summarize_side(ests: Sequence[PhiEstimate], tau: float) -> SideSummary:
    """Apply the zero-one laws to finite-horizon estimates.

    The undecided share at a finite horizon overstates the oscillating
    share: slow trajectories that will escape later are still counted as
    undecided.  A point whose undecided share is at most tau therefore
    certifies that phi_0 < 1 there, and the dichotomy phi_0 in {0, 1}
    forces phi_0 = 0 everywhere.  The escaping side is then read from the
    split among trajectories that did escape.
    """
    zeros = [e.phi_zero for e in ests]
    if min(zeros) >= 1 - tau:
        return SideSummary("recurrent")
    if min(zeros) > tau:
        return SideSummary("unclear", notes=[
            f"undecided share {min(zeros):.3f} at best probe is neither <= {tau} nor >= {1 - tau};"
            " horizon too short or escape threshold too large"])
    slow = [e.x for e in ests if e.phi_zero >= 1 - tau]
    if slow:
        return SideSummary("unclear", notes=[
            f"mixed zero-one pattern: probes {slow} look recurrent while others escape"])
    summary = SideSummary("escaping")
    lagging = [f"{e.x:g}:{e.phi_zero:.3f}" for e in ests if e.phi_zero > tau]
    if lagging:
        summary.notes.append(
            "undecided share above tau at " + ", ".join(lagging)
            + " (treated as censoring: these points escape more slowly)")
    shares = [e.resolved_plus() for e in ests]
    if min(shares) >= 1 - tau:
        summary.tendency = "plus"
    elif max(shares) <= tau:
        summary.tendency = "minus"
    else:
        summary.tendency = "split"
    return summary


@dataclass
class ClassVerdict:
    klass: int | None
    orientation_reversed: bool
    swapped: bool
    forward: list[PhiEstimate]
    inverse: list[PhiEstimate]
    tau: float
    refusal: str | None = None
    notes: list[str] = field(default_factory=list)
    params: SimParams | None = None

    @property
    def refused(self) -> bool:
        return self.klass is None

    def to_json(self) -> dict:
        return {
            "class": self.klass,
            "orientation_reversed": self.orientation_reversed,
            "swapped": self.swapped,
            "refusal": self.refusal,
            "tau_class": self.tau,
            "notes": list(self.notes),
            "forward": [e.to_row() for e in self.forward],
            "inverse": [e.to_row() for e in self.inverse],
            "params": asdict(self.params) if self.params else None,
            "generator": rng.GENERATOR_ID,
        }


def _nonconstant(ests: Sequence[PhiEstimate]) -> bool:
    lo = min(ests, key=lambda e: e.phi_plus)
    hi = max(ests, key=lambda e: e.phi_plus)
    return hi.phi_plus - lo.phi_plus > 2 * (hi.ci_halfwidth + lo.ci_halfwidth)


def decide_class(fwd: SideSummary, inv: SideSummary, fwd_est, inv_est):
    """Map the two side summaries to (class, orientation_reversed, swapped) or a refusal text."""
    def pair(a: SideSummary, b: SideSummary, a_est):
        # a is the side playing "forward"; returns (class, orientation) or None
        if a.regime != "escaping":
            return None
        if a.tendency in ("plus", "minus"):
            flip = a.tendency == "minus"
            if b.regime == "recurrent":
                return 2, flip
            if b.regime == "escaping":
                want = "plus" if flip else "minus"
                if b.tendency == want:
                    return 1, flip
            return None
        if b.regime == "recurrent" and _nonconstant(a_est):
            return 4, False
        return None

    for swapped, (a, b, a_est) in enumerate(((fwd, inv, fwd_est), (inv, fwd, inv_est))):
        got = pair(a, b, a_est)
        if got is not None:
            return got[0], got[1], bool(swapped), None
    if fwd.regime == "recurrent" and inv.regime == "recurrent":
        return 3, False, False, None
    reasons = [f"forward: {fwd.regime}/{fwd.tendency}", f"inverse: {inv.regime}/{inv.tendency}"]
    reasons += fwd.notes + inv.notes
    if fwd.regime == "escaping" and inv.regime == "escaping" and "split" in (
            fwd.tendency, inv.tendency):
        reasons.append("both sides escape with a split side: matches no class")
    return None, False, False, "no class matches the estimates (" + "; ".join(reasons) + ")"


def classify_system(sys: RandomSystem, probe_points: Sequence[float] = DEFAULT_PROBES,
                    params: SimParams | None = None, tau: float = DEFAULT_TAU,
                    ci_level: float = DEFAULT_CI_LEVEL,
                    workers: int | None = None) -> ClassVerdict:
    params = params or SimParams()
    shift = check_shiftability(sys)
    if not shift.shiftable:
        return ClassVerdict(None, False, False, [], [], tau,
                            refusal=f"system is not shiftable: {shift.witness}", params=params)
    probes = [float(p) for p in probe_points]
    fwd_est = estimate_phi_many(sys, probes, params, workers, ci_level)
    inv_est = estimate_phi_many(inverse_system(sys), probes, params, workers, ci_level)
    fwd, inv = summarize_side(fwd_est, tau), summarize_side(inv_est, tau)
    klass, flip, swapped, refusal = decide_class(fwd, inv, fwd_est, inv_est)
    notes = [f"forward: {n}" for n in fwd.notes] + [f"inverse: {n}" for n in inv.notes]
    if shift.shiftability_method != "proved":
        notes.append("shiftability checked on a window only")
    return ClassVerdict(klass, flip, swapped, fwd_est, inv_est, tau, refusal, notes, params)
