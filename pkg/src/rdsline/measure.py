"""Stationary measures on the line, stored as sampled distribution functions.

A :class:`GridMeasure` keeps ``Phi(x_j)`` on a grid over a window ``[a, b]``.
When the left tail is finite, ``Phi(x) = nu((-inf, x])``.  When a tail is
infinite, ``Phi`` is only defined up to an additive constant and the
``anchor`` field records where it vanishes.  Between grid points ``Phi`` is
interpolated linearly, or for histogram measures (``interpolation="step"``)
each bin's mass sits at its centre and ``Phi`` jumps there.  Outside the
window ``Phi`` is extended flat, which is the convention for finite tails.

A measure is stationary for a system ``{f_i, p_i}`` when
``nu = sum_i p_i (f_i)_* nu``, which in distribution-function form reads
``Phi(x) = sum_i p_i Phi(f_i^{-1}(x))`` (up to a constant when both tails
are infinite).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from . import engine, rng
from .system import RandomSystem, inverse_system
from .walk import ClassVerdict, SimParams, classify_system, estimate_phi_many

FINITE = "finite"
INFINITE = "infinite"

PROBABILITY_TOL = 1e-9
CASE4_TOL = 0.02
CASE2_TOL = 0.03
CASE3_TOL = 0.03
NO_STOP_LIMIT = 0.01
ATOM_FACTOR = 5.0
DEFAULT_BIN_WIDTH = 0.1
DEFAULT_LADDER = (5, 10, 20)
DEFAULT_CYCLES = 100_000


class Refusal(RuntimeError):
    """The requested construction does not apply to this system."""


class WindowTooSmall(ValueError):
    pass


@dataclass
class GridMeasure:
    grid: np.ndarray
    cdf: np.ndarray
    left_tail: str = FINITE
    right_tail: str = FINITE
    left_mass: float | None = 0.0
    right_mass: float | None = 0.0
    normalization: str = "total mass 1"
    anchor: float | None = None
    stationary_for: str = ""
    residual: float | None = None
    tolerance: float | None = None
    notes: list[str] = field(default_factory=list)
    interpolation: str = "linear"

    def __post_init__(self):
        if self.interpolation not in ("linear", "step"):
            raise ValueError("interpolation must be 'linear' or 'step'")
        self.grid = np.asarray(self.grid, float)
        self.cdf = np.asarray(self.cdf, float)
        if self.grid.shape != self.cdf.shape or self.grid.size < 2:
            raise ValueError("grid and cdf must have the same length >= 2")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(np.diff(self.cdf) < 0):
            raise ValueError("distribution function must be non-decreasing")
        for side, tail, mass in (("left", self.left_tail, self.left_mass),
                                 ("right", self.right_tail, self.right_mass)):
            if tail not in (FINITE, INFINITE):
                raise ValueError(f"{side} tail must be 'finite' or 'infinite'")
            if tail == FINITE and (mass is None or mass < 0):
                raise ValueError(f"{side} tail mass must be recorded and non-negative")

    @property
    def window(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    @property
    def is_probability(self) -> bool:
        return self.left_tail == FINITE and self.right_tail == FINITE

    @property
    def total_mass(self) -> float:
        if not self.is_probability:
            return math.inf
        return float(self.cdf[-1] + self.right_mass)

    def __call__(self, x):
        x = np.asarray(x, float)
        if self.interpolation == "step":
            i = np.searchsorted(self.grid, x, side="right") - 1
            return self.cdf[np.clip(i, 0, None)]
        return np.interp(x, self.grid, self.cdf)

    @property
    def check_points(self) -> np.ndarray:
        """Interior points where the residual is evaluated."""
        if self.interpolation == "step":
            # between atoms, where Phi is flat
            return 0.5 * (self.grid[1:-1] + self.grid[2:])
        return self.grid[1:-1]

    def mass(self, lo: float, hi: float) -> float:
        """Mass of (lo, hi] under the interpolated distribution function."""
        return float(self(hi) - self(lo))

    def header(self) -> dict:
        return {
            "window": list(self.window),
            "points": int(self.grid.size),
            "left_tail": self.left_tail,
            "right_tail": self.right_tail,
            "left_mass": self.left_mass,
            "right_mass": self.right_mass,
            "normalization": self.normalization,
            "anchor": self.anchor,
            "stationary_for": self.stationary_for,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "interpolation": self.interpolation,
            "notes": list(self.notes),
        }

    def to_rows(self) -> list[dict]:
        return [{"x": float(x), "cdf": float(v)} for x, v in zip(self.grid, self.cdf)]


@dataclass(frozen=True)
class StoppingFunction:
    """Tent equal to 1 on [-L, L], 0 outside [-L-1, L+1], linear in between."""

    plateau: float

    def __post_init__(self):
        if not self.plateau > 0:
            raise ValueError("plateau half-width must be positive")

    @property
    def support(self) -> tuple[float, float]:
        return -self.plateau - 1.0, self.plateau + 1.0

    def __call__(self, x):
        x = np.asarray(x, float)
        return np.clip(self.plateau + 1.0 - np.abs(x), 0.0, 1.0)


def _inverse_images(sys: RandomSystem, xs: np.ndarray) -> list[np.ndarray]:
    out = []
    for m in sys.maps:
        inv = m.invert()
        out.append(inv.eval_array(xs))
    return out


def stationarity_residual(nu: GridMeasure, sys: RandomSystem,
                          region: tuple[float, float] | None = None) -> float:
    """sup |Phi(x) - sum_i p_i Phi(f_i^{-1}(x))| over the interior check points.

    ``region`` restricts the supremum to grid points strictly inside it.
    With both tails infinite, both sides are compared after subtracting
    their values at the grid point nearest the anchor.
    """
    a, b = nu.window
    xs = nu.check_points
    if region is not None:
        xs = xs[(xs > region[0]) & (xs < region[1])]
    if xs.size == 0:
        raise WindowTooSmall("window too small: no interior grid points in region")
    pre = _inverse_images(sys, xs)
    for y in pre:
        if nu.left_tail == INFINITE and np.any(y < a):
            raise WindowTooSmall(
                f"window too small: an inverse image {float(y.min()):.6g} falls in the "
                "infinite left tail")
        if nu.right_tail == INFINITE and np.any(y > b):
            raise WindowTooSmall(
                f"window too small: an inverse image {float(y.max()):.6g} falls in the "
                "infinite right tail")
    push = sum(float(p) * nu(y) for p, y in zip(sys.probs, pre))
    r = nu(xs) - push
    if nu.left_tail == INFINITE and nu.right_tail == INFINITE:
        ref = nu.anchor if nu.anchor is not None else 0.5 * (a + b)
        i = int(np.argmin(np.abs(xs - ref)))
        r = r - r[i]
    return float(np.max(np.abs(r)))


CLASSIFY_TRIALS = 2000


def _require_class(sys, expected, params, verdict, workers):
    if verdict is None:
        # the class check runs at its own sample size, not the construction's
        verdict = classify_system(sys, params=params.replace(trials=CLASSIFY_TRIALS),
                                  workers=workers)
    if verdict.klass != expected:
        why = verdict.refusal or f"system is class {verdict.klass}"
        raise Refusal(f"construction needs a class-{expected} system; {why}")
    return verdict


def build_case4_measure(fwd_sys: RandomSystem, params: SimParams | None = None,
                        window: tuple[float, float] = (-20.0, 20.0), step: float = 1.0,
                        verdict: ClassVerdict | None = None,
                        workers: int | None = None) -> GridMeasure:
    """Probability measure stationary for the inverse of a class-4 system.

    The distribution function is the forward probability of tending to
    +infinity, estimated at every grid point from the same trial streams and
    then made monotone by isotonic regression.  Pass ``verdict`` to reuse a
    classification.
    """
    params = params or SimParams()
    verdict = _require_class(fwd_sys, 4, params, verdict, workers)
    escaping, target = fwd_sys, inverse_system(fwd_sys)
    if verdict.swapped:
        escaping, target = target, fwd_sys
    a, b = float(window[0]), float(window[1])
    n = int(round((b - a) / step)) + 1
    xs = np.linspace(a, b, n)
    est = estimate_phi_many(escaping, xs, params, workers)
    raw = np.array([e.phi_plus for e in est])
    cdf = np.clip(isotonic_regression(raw).x, 0.0, 1.0)
    cdf = np.maximum.accumulate(cdf)
    nu = GridMeasure(xs, cdf, FINITE, FINITE, float(cdf[0]), float(1.0 - cdf[-1]),
                     "total mass 1", None, target.label or "inverse system",
                     tolerance=CASE4_TOL)
    nu.notes.append(f"isotonic adjustment max {float(np.max(np.abs(cdf - raw))):.3g}")
    undecided = max(e.phi_zero for e in est)
    if undecided > 0:
        nu.notes.append(f"max undecided fraction {undecided:.4f}")
    nu.residual = stationarity_residual(nu, target)
    assert abs(nu.total_mass - 1.0) <= PROBABILITY_TOL
    return nu


def build_case2_semi(fwd_sys: RandomSystem, y: float = -20.0,
                     params: SimParams | None = None, b: float | None = None,
                     step: float = 1.0, region_top: float = 20.0,
                     verdict: ClassVerdict | None = None,
                     workers: int | None = None) -> GridMeasure:
    """Semi-infinite measure for the inverse of a class-2 system escaping to +inf.

    ``psi(x)`` is the probability that the forward trajectory from ``x``
    goes below ``y`` before escaping above the threshold; it equals 1 for
    ``x < y``.  The measure satisfies ``nu([x, inf)) = psi(x) / psi(0)``,
    stored as ``Phi = 1 - psi / psi(0)`` so ``Phi(0) = 0``.
    """
    params = params or SimParams()
    verdict = _require_class(fwd_sys, 2, params, verdict, workers)
    if verdict.swapped or verdict.orientation_reversed:
        raise Refusal("construction needs the forward side to tend to +infinity; "
                      "pass the inverse or reflected system instead")
    y = float(y)
    if not y < 0:
        raise ValueError("level y must be negative so that psi(0) is the normalizer")
    if b is None:
        b = 2.0 * region_top + 2.0
    lo = y - 2.0
    n = int(round((b - lo) / step)) + 1
    xs = np.linspace(lo, b, n)
    if not np.any(xs == 0.0):
        raise ValueError("grid must contain 0; choose y and step accordingly")
    counts = engine.runmin_counts(fwd_sys, xs, int(params.trials), int(params.master_seed),
                                  int(params.horizon), y, float(params.escape), workers)
    trials = int(params.trials)
    psi = counts[:, 0] / trials
    psi[xs < y] = 1.0
    i0 = int(np.flatnonzero(xs == 0.0)[0])
    if psi[i0] == 0:
        raise Refusal(f"no trajectory from 0 went below {y}; increase trials")
    # monotone in x for increasing maps; enforce it on the estimate
    psi = np.clip(isotonic_regression(psi, increasing=False).x, 0.0, 1.0)
    psi[xs < y] = 1.0
    cdf = 1.0 - psi / psi[i0]
    cdf[i0] = 0.0
    cdf = np.maximum.accumulate(cdf)
    nu = GridMeasure(xs, cdf, INFINITE, FINITE, None, float(psi[-1] / psi[i0]),
                     "nu([0, inf)) = 1", 0.0, inverse_system(fwd_sys).label or "inverse system",
                     tolerance=CASE2_TOL)
    nu.notes.append(f"psi(0) = {psi[i0]:.6g}")
    nu.notes.append(f"unresolved at horizon: max fraction {float(counts[:, 1].max()) / trials:.4g}")
    nu.residual = stationarity_residual(nu, inverse_system(fwd_sys), (y, region_top))
    return nu


@dataclass
class StopSample:
    points: np.ndarray
    steps: np.ndarray
    stopped: np.ndarray

    @property
    def no_stop_fraction(self) -> float:
        return float(1.0 - self.stopped.mean())


def stopped_distribution(sys: RandomSystem, psi: StoppingFunction, x: float | Sequence[float],
                         params: SimParams | None = None,
                         workers: int | None = None) -> StopSample:
    """Stop points of the process halted at each visited point z w.p. psi(z).

    The start point itself is tested first, so a start on the plateau stops
    at step 0.  Raises :class:`Refusal` if 1% or more of the runs fail to
    stop within the horizon.
    """
    params = params or SimParams()
    pts, steps, ok = engine.stop_points(sys, x, int(params.trials), int(params.master_seed),
                                        int(params.horizon), psi.plateau, workers)
    sample = StopSample(pts, steps, ok)
    if sample.no_stop_fraction >= NO_STOP_LIMIT:
        raise Refusal(f"no stop within horizon in {sample.no_stop_fraction:.2%} of runs")
    return sample


@dataclass
class LevelEstimate:
    psi: StoppingFunction
    edges: np.ndarray
    mass: np.ndarray  # normalized so that J = [-1, 1] has mass 1
    samples: int
    failures: int
    outside: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def atoms(self, factor: float = ATOM_FACTOR) -> list[float]:
        m = self.mass
        out = []
        for i in range(m.size):
            nb = [m[j] for j in (i - 1, i + 1) if 0 <= j < m.size]
            avg = sum(nb) / len(nb)
            if m[i] > 0 and m[i] > factor * avg:
                out.append(float(self.centers[i]))
        return out

    def to_json(self) -> dict:
        return {"plateau": self.psi.plateau, "samples": self.samples,
                "failures": self.failures, "outside": self.outside,
                "centers": [float(c) for c in self.centers],
                "mass": [float(v) for v in self.mass]}


def _integer_edges(half_width: float, width: float) -> np.ndarray:
    # bins centred on multiples of width; integers sit at bin centres
    k = int(math.ceil(half_width / width - 1e-9))
    return (np.arange(-k, k + 2) - 0.5) * width


def _level(sys, psi, x0, params, width, cycles, burn, workers) -> LevelEstimate:
    edges = _integer_edges(psi.plateau + 1.0, width)
    hist, failures, outside = engine.meta_histogram(
        sys, x0, int(params.trials), int(params.master_seed), cycles, int(params.horizon),
        psi.plateau, edges[0], width, edges.size - 1, workers, burn)
    centers = 0.5 * (edges[:-1] + edges[1:])
    in_j = (centers >= -1.0 - 1e-9) & (centers <= 1.0 + 1e-9)
    norm = hist[in_j].sum()
    if norm == 0:
        raise Refusal(f"meta-chain never stopped in [-1, 1] at plateau {psi.plateau}")
    total = hist.sum() + failures
    if total and failures / total >= NO_STOP_LIMIT:
        raise Refusal(f"no stop within horizon in {failures / total:.2%} of cycles "
                      f"at plateau {psi.plateau}")
    return LevelEstimate(psi, edges, hist / norm, int(hist.sum()), failures, outside)


@dataclass
class RadonResult:
    measure: GridMeasure
    levels: list[LevelEstimate]
    consistency: list[dict]
    consistent: bool
    atoms: list[float]

    def to_json(self) -> dict:
        return {"measure": self.measure.header(), "consistency": self.consistency,
                "consistent": self.consistent, "atoms": self.atoms,
                "levels": [lv.to_json() for lv in self.levels]}


def build_case3_radon(sys: RandomSystem, ladder: Sequence[StoppingFunction] | None = None,
                      params: SimParams | None = None, x0: float = 0.0,
                      width: float = DEFAULT_BIN_WIDTH, cycles: int = DEFAULT_CYCLES,
                      burn: int = 1000, consistency_tol: float = 0.1,
                      workers: int | None = None) -> RadonResult:
    """Radon stationary measure from the stop-kernel chains of a tent ladder.

    Each level runs ``params.trials`` chains for ``cycles`` cycles (the first
    ``burn`` discarded) and histograms the stop points.  Consecutive levels
    must agree after multiplying the outer one by the inner tent: the
    relative L1 gap on the inner support must not exceed ``consistency_tol``.
    The largest level is returned, with its residual measured on the
    previous level's plateau.
    """
    params = params or SimParams(trials=64)
    ladder = list(ladder or [StoppingFunction(L) for L in DEFAULT_LADDER])
    for inner, outer in zip(ladder, ladder[1:]):
        if inner.support[1] > outer.plateau or inner.support[0] < -outer.plateau:
            raise ValueError("ladder supports must sit inside the next plateau")
    levels = [_level(sys, psi, x0, params, width, cycles, burn, workers) for psi in ladder]
    checks = []
    for inner, outer in zip(levels, levels[1:]):
        sel = inner.mass > 0
        k = outer.edges.size - 1
        # align the inner bins inside the outer histogram
        off = int(round((inner.edges[0] - outer.edges[0]) / width))
        outer_part = outer.mass[off:off + inner.mass.size] * inner.psi(inner.centers)
        gap = float(np.abs(outer_part - inner.mass).sum() / inner.mass.sum())
        assert 0 <= off and off + inner.mass.size <= k
        checks.append({"inner": inner.psi.plateau, "outer": outer.psi.plateau,
                       "relative_l1_gap": gap, "ok": bool(gap <= consistency_tol),
                       "bins": int(sel.sum())})
    top = levels[-1]
    grid = np.concatenate([[top.edges[0]], top.centers])
    cdf = np.concatenate([[0.0], np.cumsum(top.mass)])
    nu = GridMeasure(grid, cdf, INFINITE, INFINITE, None, None, "nu([-1, 1]) = 1", 0.0,
                     sys.label or "system", tolerance=CASE3_TOL, interpolation="step")
    # anchor: Phi(0) = 0
    nu.cdf = nu.cdf - float(nu(0.0))
    inner_plateau = ladder[-2].plateau if len(ladder) > 1 else top.psi.plateau - 1.0
    nu.residual = stationarity_residual(nu, sys, (-inner_plateau, inner_plateau))
    nu.notes.append(f"residual region (-{inner_plateau}, {inner_plateau})")
    ok = all(c["ok"] for c in checks)
    if not ok:
        nu.notes.append("cross-level inconsistency beyond tolerance; increase cycles")
    return RadonResult(nu, levels, checks, ok, top.atoms())


def integer_bin_masses(level: LevelEstimate, lo: int, hi: int) -> dict[int, float]:
    """Mass of the bin centred on each integer in [lo, hi]."""
    out = {}
    for k in range(lo, hi + 1):
        i = int(np.argmin(np.abs(level.centers - k)))
        out[k] = float(level.mass[i])
    return out


def mass_near_integers(level: LevelEstimate, radius: float = 0.05,
                       plateau: float | None = None) -> float:
    """Share of the plateau mass in bins whose centre is within ``radius`` of an integer."""
    L = level.psi.plateau if plateau is None else plateau
    c = level.centers
    on = (c >= -L - 1e-9) & (c <= L + 1e-9)
    near = np.abs(c - np.round(c)) <= radius - 0.5 * (level.edges[1] - level.edges[0]) + 1e-9
    total = level.mass[on].sum()
    return float(level.mass[on & near].sum() / total) if total else float("nan")


def counting_measure(lo: int, hi: int) -> GridMeasure:
    """Counting measure on the integers of [lo, hi], both tails infinite."""
    xs = np.arange(lo, hi + 1, dtype=float)
    return GridMeasure(xs, xs.copy(), INFINITE, INFINITE, None, None,
                       "nu([0, 1)) = 1", 0.0, "translation-invariant systems on Z")


def uniform_probability(lo: float = 0.0, hi: float = 1.0, points: int = 101,
                        pad: float = 3.0) -> GridMeasure:
    xs = np.linspace(lo - pad, hi + pad, points + int(2 * pad * (points - 1) / (hi - lo)))
    cdf = np.clip((xs - lo) / (hi - lo), 0.0, 1.0)
    return GridMeasure(xs, cdf, FINITE, FINITE, 0.0, 0.0, "total mass 1")


def measure_report(nu: GridMeasure, params: SimParams | None = None) -> dict:
    out = nu.header()
    if params is not None:
        out["params"] = {k: getattr(params, k) for k in params.__dataclass_fields__}
    out["generator"] = rng.GENERATOR_ID
    return out
