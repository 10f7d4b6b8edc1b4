"""Orientation-preserving homeomorphisms of the real line.

Piecewise-linear maps (affine maps are the zero-breakpoint case) carry
rational coefficients so that evaluation, inversion and composition are
exact.  Each map also exposes a float fast path used by the trajectory
engine.  Two numeric kinds cover maps that are not piecewise linear:
``x + shift + a*sin(2*pi*x)`` and an arbitrary strictly increasing callable.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence, Union

import numpy as np

Number = Union[int, float, Fraction]

INVERSION_TOL = 1e-12

KIND_PL = "piecewise-linear"
KIND_AFFINE = "affine"
KIND_SIN = "sin-perturbation"
KIND_CUSTOM = "custom-monotone"


class MapError(ValueError):
    """Raised when a map violates the homeomorphism invariants."""


def as_fraction(value) -> Fraction:
    """Parse ints, Fractions, and "p/q" strings exactly.

    Floats are accepted only when they are finite; they convert to the exact
    binary value they hold.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite coefficient {value!r}")
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as a rational")


def fraction_str(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    violations: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.valid


class MonotoneMap:
    """Common surface of every map kind."""

    kind: str = ""
    exact: bool = False

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        raise NotImplementedError

    def eval_float(self, x: float) -> float:
        return float(self.eval(float(x)))

    def invert(self) -> "MonotoneMap":
        raise NotImplementedError

    def validate(self) -> ValidationReport:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=True)
class PiecewiseLinearMap(MonotoneMap):
    """Continuous piecewise-linear map with rational coefficients.

    ``pieces[i] = (slope, intercept)`` applies on ``[breakpoints[i-1],
    breakpoints[i])``; the first and last pieces extend to -inf and +inf.
    Construction does not validate; call :meth:`validate` (or use
    :func:`piecewise_linear`, which does).
    """

    breakpoints: tuple[Fraction, ...]
    pieces: tuple[tuple[Fraction, Fraction], ...]
    _bp_float: tuple[float, ...] = field(init=False, repr=False, compare=False)
    _pc_float: tuple[tuple[float, float], ...] = field(init=False, repr=False, compare=False)

    exact = True

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(as_fraction(b) for b in self.breakpoints))
        object.__setattr__(
            self, "pieces", tuple((as_fraction(s), as_fraction(c)) for s, c in self.pieces)
        )
        object.__setattr__(self, "_bp_float", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(
            self, "_pc_float", tuple((float(s), float(c)) for s, c in self.pieces)
        )

    @property
    def kind(self) -> str:  # type: ignore[override]
        return KIND_AFFINE if not self.breakpoints else KIND_PL

    def validate(self) -> ValidationReport:
        problems = []
        if len(self.pieces) != len(self.breakpoints) + 1:
            problems.append(
                f"piece count {len(self.pieces)} != breakpoint count + 1 "
                f"({len(self.breakpoints) + 1})"
            )
        for a, b in zip(self.breakpoints, self.breakpoints[1:]):
            if not a < b:
                problems.append(f"unsorted breakpoints: {a} before {b}")
        for i, (s, _) in enumerate(self.pieces):
            if s <= 0:
                problems.append(f"non-positive slope {s} on piece {i}")
        if len(self.pieces) == len(self.breakpoints) + 1:
            for i, b in enumerate(self.breakpoints):
                (s0, c0), (s1, c1) = self.pieces[i], self.pieces[i + 1]
                left, right = s0 * b + c0, s1 * b + c1
                if left != right:
                    problems.append(f"discontinuity at breakpoint {b}: {left} vs {right}")
        return ValidationReport(not problems, tuple(problems))

    def _piece_index(self, x) -> int:
        if isinstance(x, Fraction) or isinstance(x, int):
            return bisect.bisect_right(self.breakpoints, x)
        return bisect.bisect_right(self._bp_float, x)

    def eval(self, x):
        """Exact for int/Fraction input, float arithmetic for floats."""
        if isinstance(x, (int, Fraction)) and not isinstance(x, bool):
            s, c = self.pieces[bisect.bisect_right(self.breakpoints, x)]
            return s * x + c
        return self.eval_float(x)

    def eval_float(self, x: float) -> float:
        s, c = self._pc_float[bisect.bisect_right(self._bp_float, x)]
        return s * x + c

    def eval_array(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(np.asarray(self._bp_float), x, side="right")
        pc = np.asarray(self._pc_float).reshape(-1, 2)
        return pc[idx, 0] * x + pc[idx, 1]

    def invert(self) -> "PiecewiseLinearMap":
        bps = tuple(s * b + c for b, (s, c) in zip(self.breakpoints, self.pieces))
        pieces = tuple((1 / s, -c / s) for s, c in self.pieces)
        return PiecewiseLinearMap(bps, pieces)

    def displacement_pieces(self):
        """Yield ``(lo, hi, slope - 1, intercept)``: f(x) - x on each piece."""
        edges = (None,) + self.breakpoints + (None,)
        for i, (s, c) in enumerate(self.pieces):
            yield edges[i], edges[i + 1], s - 1, c

    def to_json(self) -> dict:
        if not self.breakpoints:
            s, c = self.pieces[0]
            return {"kind": KIND_AFFINE, "slope": fraction_str(s), "intercept": fraction_str(c)}
        return {
            "kind": KIND_PL,
            "breakpoints": [fraction_str(b) for b in self.breakpoints],
            "pieces": [[fraction_str(s), fraction_str(c)] for s, c in self.pieces],
        }

    def __repr__(self) -> str:
        parts = []
        edges = ("-inf",) + tuple(fraction_str(b) for b in self.breakpoints) + ("inf",)
        for i, (s, c) in enumerate(self.pieces):
            parts.append(f"[{edges[i]},{edges[i + 1]}): {fraction_str(s)}x+{fraction_str(c)}")
        return f"PL({'; '.join(parts)})"


def _merge_pieces(breakpoints, pieces) -> PiecewiseLinearMap:
    """Drop breakpoints where adjacent pieces coincide (canonical form)."""
    out_bp: list[Fraction] = []
    out_pc = [pieces[0]]
    for b, pc in zip(breakpoints, pieces[1:]):
        if pc == out_pc[-1]:
            continue
        out_bp.append(b)
        out_pc.append(pc)
    return PiecewiseLinearMap(tuple(out_bp), tuple(out_pc))


def piecewise_linear(breakpoints: Sequence, pieces: Sequence) -> PiecewiseLinearMap:
    m = PiecewiseLinearMap(tuple(breakpoints), tuple(tuple(p) for p in pieces))
    report = m.validate()
    if not report:
        raise MapError("; ".join(report.violations))
    return m


def affine(slope=1, intercept=0) -> PiecewiseLinearMap:
    return piecewise_linear((), ((slope, intercept),))


def translation(shift) -> PiecewiseLinearMap:
    return affine(1, shift)


def identity() -> PiecewiseLinearMap:
    return affine(1, 0)


def _reduce(x: float) -> float:
    # sin(2*pi*x) is 1-periodic; reducing first keeps integers exact fixed points
    return x - math.floor(x + 0.5)


@dataclass(frozen=True)
class SinPerturbationMap(MonotoneMap):
    """``x -> x + shift + amplitude * sin(2*pi*x)`` with ``|2*pi*amplitude| < 1``."""

    amplitude: Fraction
    shift: Fraction = Fraction(0)
    inverse_of: "SinPerturbationMap | None" = field(default=None, compare=False, repr=False)

    kind = KIND_SIN
    exact = False

    def __post_init__(self):
        object.__setattr__(self, "amplitude", as_fraction(self.amplitude))
        object.__setattr__(self, "shift", as_fraction(self.shift))

    def validate(self) -> ValidationReport:
        if abs(2 * math.pi * float(self.amplitude)) >= 1:
            return ValidationReport(
                False, (f"non-positive slope: |2*pi*amplitude| = "
                        f"{abs(2 * math.pi * float(self.amplitude)):.6g} >= 1",)
            )
        return ValidationReport(True)

    @property
    def displacement_bound(self) -> float:
        return abs(float(self.shift)) + abs(float(self.amplitude))

    def eval(self, x):
        return self.eval_float(float(x))

    def eval_float(self, x: float) -> float:
        return x + float(self.shift) + float(self.amplitude) * math.sin(2 * math.pi * _reduce(x))

    def eval_array(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x + float(self.shift) + float(self.amplitude) * np.sin(
            2 * np.pi * (x - np.floor(x + 0.5)))

    def invert(self) -> "NumericInverse":
        return NumericInverse(self, self.displacement_bound)

    def to_json(self) -> dict:
        return {
            "kind": KIND_SIN,
            "amplitude": fraction_str(self.amplitude),
            "shift": fraction_str(self.shift),
        }


@dataclass(frozen=True)
class CustomMap(MonotoneMap):
    """A user-supplied strictly increasing bijection.

    ``displacement_bound`` D must satisfy ``|f(x) - x| <= D`` for all x; it
    is what makes the inverse bracketable.  Without it the map can be
    evaluated but not inverted.
    """

    func: Callable[[float], float]
    displacement_bound: float | None = None
    name: str = "custom"

    kind = KIND_CUSTOM
    exact = False

    def validate(self, grid: Sequence[float] | None = None) -> ValidationReport:
        xs = np.linspace(-100, 100, 2001) if grid is None else np.asarray(grid, float)
        ys = np.array([self.func(float(x)) for x in xs])
        problems = []
        if not np.all(np.isfinite(ys)):
            problems.append("non-finite value on sample grid")
        elif np.any(np.diff(ys) <= 0):
            i = int(np.argmax(np.diff(ys) <= 0))
            problems.append(
                f"non-positive slope: f({xs[i]:.6g})={ys[i]:.6g} >= f({xs[i + 1]:.6g})={ys[i + 1]:.6g}"
            )
        if self.displacement_bound is not None and np.any(
            np.abs(ys - xs) > self.displacement_bound + 1e-12
        ):
            problems.append("declared displacement bound violated on sample grid")
        return ValidationReport(not problems, tuple(problems))

    def eval(self, x):
        return float(self.func(float(x)))

    def eval_float(self, x: float) -> float:
        return float(self.func(x))

    def eval_array(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.func(float(v)) for v in np.ravel(x)]).reshape(np.shape(x))

    def invert(self) -> "NumericInverse":
        if self.displacement_bound is None:
            raise MapError(f"cannot bracket inverse of {self.name}: no displacement bound declared")
        return NumericInverse(self, float(self.displacement_bound))

    def to_json(self) -> dict:
        raise MapError("custom maps cannot be serialized")


def bisect_inverse(f: Callable[[float], float], y: float, bound: float,
                   tol: float = INVERSION_TOL) -> float:
    """Solve f(x) = y for increasing f with |f(x) - x| <= bound.

    The bracket starts at width 1 around y and doubles until it straddles
    the root or reaches the declared bound.  Bisection stops once the
    bracket is narrower than ``tol * max(1, |y|)``.
    """
    width = 1.0
    while True:
        w = min(width, bound) if bound > 0 else 0.0
        lo, hi = y - w, y + w
        if f(lo) <= y <= f(hi):
            break
        if w >= bound:
            # |f(x) - x| <= bound guarantees this bracket; guard against bad input
            lo, hi = y - bound - 1.0, y + bound + 1.0
            if not f(lo) <= y <= f(hi):
                raise MapError(f"cannot bracket inverse at y={y!r}")
            break
        width *= 2.0
    scale = max(1.0, abs(y))
    while hi - lo > tol * scale:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class NumericInverse(MonotoneMap):
    """Inverse of a numeric map, evaluated by bisection."""

    base: MonotoneMap
    bound: float

    exact = False

    @property
    def kind(self) -> str:  # type: ignore[override]
        return self.base.kind

    def validate(self) -> ValidationReport:
        return self.base.validate()

    def eval(self, x):
        return self.eval_float(float(x))

    def eval_float(self, x: float) -> float:
        return bisect_inverse(self.base.eval_float, x, self.bound)

    def eval_array(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.eval_float(float(v)) for v in np.ravel(x)]).reshape(np.shape(x))

    def invert(self) -> MonotoneMap:
        return self.base

    def to_json(self) -> dict:
        return {"kind": "inverse", "of": self.base.to_json()}


def validate(m: MonotoneMap) -> ValidationReport:
    return m.validate()


def eval_map(m: MonotoneMap, x):
    return m.eval(x)


def invert(m: MonotoneMap) -> MonotoneMap:
    return m.invert()


@dataclass(frozen=True)
class ComposedMap(MonotoneMap):
    """f o g for maps that are not both piecewise linear."""

    outer: MonotoneMap
    inner: MonotoneMap

    exact = False

    @property
    def kind(self) -> str:  # type: ignore[override]
        return KIND_CUSTOM

    def validate(self) -> ValidationReport:
        r1, r2 = self.outer.validate(), self.inner.validate()
        return ValidationReport(r1.valid and r2.valid, r1.violations + r2.violations)

    def eval(self, x):
        return self.outer.eval(self.inner.eval(x))

    def eval_float(self, x: float) -> float:
        return self.outer.eval_float(self.inner.eval_float(x))

    def eval_array(self, x):
        return self.outer.eval_array(self.inner.eval_array(x))

    def invert(self) -> MonotoneMap:
        return ComposedMap(self.inner.invert(), self.outer.invert())

    def to_json(self) -> dict:
        raise MapError("composed numeric maps cannot be serialized")


def compose(f: MonotoneMap, g: MonotoneMap) -> MonotoneMap:
    """Return f o g.  Exact (and again piecewise linear) for PL inputs."""
    if not (isinstance(f, PiecewiseLinearMap) and isinstance(g, PiecewiseLinearMap)):
        return ComposedMap(f, g)
    g_inv = g.invert()
    cuts = sorted(set(g.breakpoints) | {g_inv.eval(b) for b in f.breakpoints})
    # pick a sample point inside each cell to read off the active pieces
    samples = []
    if not cuts:
        samples.append(Fraction(0))
    else:
        samples.append(cuts[0] - 1)
        samples.extend(cuts)  # pieces are left-closed, so the cut itself is inside the next cell
    pieces = []
    for t in samples:
        sg, cg = g.pieces[bisect.bisect_right(g.breakpoints, t)]
        gt = sg * t + cg
        sf, cf = f.pieces[bisect.bisect_right(f.breakpoints, gt)]
        pieces.append((sf * sg, sf * cg + cf))
    return _merge_pieces(tuple(cuts), tuple(pieces))


def map_from_json(obj: dict) -> MonotoneMap:
    kind = obj.get("kind")
    if kind == KIND_AFFINE:
        return affine(obj.get("slope", "1"), obj.get("intercept", "0"))
    if kind == KIND_PL:
        return piecewise_linear(obj["breakpoints"], obj["pieces"])
    if kind == KIND_SIN:
        m = SinPerturbationMap(obj["amplitude"], obj.get("shift", "0"))
        report = m.validate()
        if not report:
            raise MapError("; ".join(report.violations))
        return m
    raise MapError(f"unknown or non-serializable map kind {kind!r}")
