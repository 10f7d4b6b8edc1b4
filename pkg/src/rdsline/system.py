"""Finite random systems of homeomorphisms and their standing hypotheses."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .homeo import (
    MapError,
    MonotoneMap,
    PiecewiseLinearMap,
    as_fraction,
    fraction_str,
    map_from_json,
)


class SystemError_(ValueError):
    """Invalid random system (bad probabilities or maps)."""


@dataclass(frozen=True)
class RandomSystem:
    maps: tuple[MonotoneMap, ...]
    probs: tuple[Fraction, ...]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "probs", tuple(as_fraction(p) for p in self.probs))

    def __len__(self) -> int:
        return len(self.maps)

    @property
    def exact(self) -> bool:
        return all(m.exact for m in self.maps)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "maps": [m.to_json() for m in self.maps],
            "probs": [fraction_str(p) for p in self.probs],
        }


def make_system(maps: Sequence[MonotoneMap], probs: Sequence, label: str = "") -> RandomSystem:
    """Build a system and refuse it unless :func:`validate_system` accepts it."""
    sys = RandomSystem(tuple(maps), tuple(probs), label)
    report = validate_system(sys)
    if not report.valid:
        raise SystemError_("; ".join(report.errors))
    return sys


def system_from_json(obj: dict) -> RandomSystem:
    maps = []
    for i, m in enumerate(obj["maps"]):
        try:
            maps.append(map_from_json(m))
        except (MapError, KeyError, ValueError, ZeroDivisionError) as exc:
            raise SystemError_(f"map {i}: {exc}") from exc
    return make_system(maps, [as_fraction(p) for p in obj["probs"]], obj.get("label", ""))


@dataclass
class SystemReport:
    valid: bool = True
    errors: list[str] = field(default_factory=list)
    shiftable: bool | None = None
    shiftability_method: str = ""  # "proved" or "checked on window"
    witness: dict | None = None
    compact_displacement: bool | None = None
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "valid": self.valid,
            "errors": list(self.errors),
            "shiftable": self.shiftable,
            "shiftability_method": self.shiftability_method,
            "witness": self.witness,
            "compact_displacement": self.compact_displacement,
            "notes": list(self.notes),
        }


def validate_system(sys: RandomSystem) -> SystemReport:
    report = SystemReport()
    if not sys.maps:
        report.errors.append("system has no maps")
    if len(sys.maps) != len(sys.probs):
        report.errors.append(f"{len(sys.maps)} maps but {len(sys.probs)} probabilities")
    for i, p in enumerate(sys.probs):
        if p <= 0:
            report.errors.append(f"probability {i} is {fraction_str(p)}, must be positive")
    total = sum(sys.probs, Fraction(0))
    if total != 1:
        report.errors.append(f"probabilities sum to {fraction_str(total)} != 1")
    for i, m in enumerate(sys.maps):
        r = m.validate()
        if not r.valid:
            report.errors.append(f"map {i} invalid: " + "; ".join(r.violations))
    report.valid = not report.errors
    # finitely many continuous maps always have bounded one-step images
    report.compact_displacement = report.valid
    return report


def inverse_system(sys: RandomSystem) -> RandomSystem:
    label = sys.label[:-len(" (inverse)")] if sys.label.endswith(" (inverse)") else (
        f"{sys.label} (inverse)" if sys.label else "inverse")
    return RandomSystem(tuple(m.invert() for m in sys.maps), sys.probs, label)


def _pl_sign_cells(m: PiecewiseLinearMap):
    """Partition R into cells on which sign(f(x) - x) is constant.

    Yields ``(lo, hi, sign)`` with ``None`` for infinite ends; cells are
    open intervals or single points (``lo == hi``).
    """
    cuts = set(m.breakpoints)
    for lo, hi, a, c in m.displacement_pieces():
        if a != 0:
            root = -c / a
            if (lo is None or root > lo) and (hi is None or root < hi):
                cuts.add(root)
    cuts = sorted(cuts)
    def sign_at(t):
        v = m.eval(t) - t
        return (v > 0) - (v < 0)
    edges = [None] + cuts + [None]
    for lo, hi in zip(edges, edges[1:]):
        if lo is None and hi is None:
            t = Fraction(0)
        elif lo is None:
            t = hi - 1
        elif hi is None:
            t = lo + 1
        else:
            t = (lo + hi) / 2
        yield lo, hi, sign_at(t)
    for c in cuts:
        yield c, c, sign_at(c)


def check_shiftability(sys: RandomSystem, window: tuple[float, float] = (-1000.0, 1000.0),
                       grid_points: int = 20001) -> SystemReport:
    """Decide whether every x has some map moving it right and some moving it left.

    For piecewise-linear systems the answer is exact: f(x) - x is piecewise
    linear, so its sign is constant on finitely many cells, and a point fails
    iff it lies in a cell where no map moves it right (or left).  Other kinds
    are scanned on ``window`` and reported as "checked on window".
    """
    report = validate_system(sys)
    if not report.valid:
        report.shiftable = False
        report.notes.append("system invalid; shiftability not assessed")
        return report
    if all(isinstance(m, PiecewiseLinearMap) for m in sys.maps):
        report.shiftability_method = "proved"
        cuts: set[Fraction] = set()
        cell_maps = [list(_pl_sign_cells(m)) for m in sys.maps]
        for cells in cell_maps:
            for lo, hi, _ in cells:
                if lo is not None:
                    cuts.add(lo)
                if hi is not None:
                    cuts.add(hi)
        cuts_sorted = sorted(cuts)
        probes: list[Fraction] = list(cuts_sorted)
        edges = [None] + cuts_sorted + [None]
        for lo, hi in zip(edges, edges[1:]):
            if lo is None and hi is None:
                probes.append(Fraction(0))
            elif lo is None:
                probes.append(hi - 1)
            elif hi is None:
                probes.append(lo + 1)
            else:
                probes.append((lo + hi) / 2)
        for t in sorted(probes):
            moves = [m.eval(t) - t for m in sys.maps]
            right = any(v > 0 for v in moves)
            left = any(v < 0 for v in moves)
            if not (right and left):
                report.shiftable = False
                report.witness = {
                    "x": fraction_str(t),
                    "certificate": "no map moves x strictly "
                    + ("right" if not right else "left"),
                    "displacements": [fraction_str(v) for v in moves],
                }
                return report
        report.shiftable = True
        report.witness = {"cells_checked": len(probes)}
        return report

    report.shiftability_method = "checked on window"
    xs = np.linspace(window[0], window[1], grid_points)
    moves = np.vstack([m.eval_array(xs) - xs for m in sys.maps])
    right = (moves > 0).any(axis=0)
    left = (moves < 0).any(axis=0)
    bad = ~(right & left)
    if bad.any():
        i = int(np.argmax(bad))
        report.shiftable = False
        report.witness = {
            "x": float(xs[i]),
            "certificate": "no map moves x strictly " + ("right" if not right[i] else "left"),
            "displacements": [float(v) for v in moves[:, i]],
        }
    else:
        report.shiftable = True
        report.witness = {"window": [window[0], window[1]], "grid_points": grid_points}
        report.notes.append(
            "global hypothesis not proved for numeric maps; verdict holds on the sampled window only"
        )
    return report
