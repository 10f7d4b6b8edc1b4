"""Compiled trajectory loops.

A system whose maps are piecewise linear, sin perturbations, or inverses of
sin perturbations is flattened into arrays and run by numba kernels.  Any
other system falls back to Python loops built on the same random draws and
the same float evaluation, so both routes return identical results.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numba as nb
import numpy as np

from . import rng
from .homeo import INVERSION_TOL, NumericInverse, PiecewiseLinearMap, SinPerturbationMap
from .system import RandomSystem

KIND_LINEAR = 0  # slope*x + intercept + amp*sin(2*pi*x) on each piece
KIND_SIN_INVERSE = 1  # bisection inverse of x + shift + amp*sin(2*pi*x)

PLUS, MINUS, UNDECIDED = 0, 1, 2

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Encoded:
    kind: np.ndarray  # int64[k]
    bp: np.ndarray  # float64[total breakpoints]
    bp_off: np.ndarray  # int64[k]
    bp_cnt: np.ndarray  # int64[k]
    pc_off: np.ndarray  # int64[k]
    slope: np.ndarray  # float64[total pieces]
    icpt: np.ndarray  # float64[total pieces]
    amp: np.ndarray  # float64[k]
    shift: np.ndarray  # float64[k]
    bound: np.ndarray  # float64[k]
    cuts: np.ndarray  # uint64[k-1]

    def args(self):
        return (self.kind, self.bp, self.bp_off, self.bp_cnt, self.pc_off, self.slope,
                self.icpt, self.amp, self.shift, self.bound, self.cuts)


def encode(sys: RandomSystem) -> Encoded | None:
    kinds, bps, bp_off, bp_cnt, pc_off, slopes, icpts, amps, shifts, bounds = (
        [], [], [], [], [], [], [], [], [], [])
    for m in sys.maps:
        bp_off.append(len(bps))
        pc_off.append(len(slopes))
        if isinstance(m, PiecewiseLinearMap):
            kinds.append(KIND_LINEAR)
            bps.extend(m._bp_float)
            bp_cnt.append(len(m._bp_float))
            for s, c in m._pc_float:
                slopes.append(s)
                icpts.append(c)
            amps.append(0.0)
            shifts.append(0.0)
            bounds.append(0.0)
        elif isinstance(m, SinPerturbationMap):
            kinds.append(KIND_LINEAR)
            bp_cnt.append(0)
            slopes.append(1.0)
            icpts.append(float(m.shift))
            amps.append(float(m.amplitude))
            shifts.append(float(m.shift))
            bounds.append(m.displacement_bound)
        elif isinstance(m, NumericInverse) and isinstance(m.base, SinPerturbationMap):
            kinds.append(KIND_SIN_INVERSE)
            bp_cnt.append(0)
            slopes.append(1.0)
            icpts.append(0.0)
            amps.append(float(m.base.amplitude))
            shifts.append(float(m.base.shift))
            bounds.append(float(m.bound))
        else:
            return None
    return Encoded(
        np.asarray(kinds, np.int64), np.asarray(bps, np.float64), np.asarray(bp_off, np.int64),
        np.asarray(bp_cnt, np.int64), np.asarray(pc_off, np.int64),
        np.asarray(slopes, np.float64), np.asarray(icpts, np.float64),
        np.asarray(amps, np.float64), np.asarray(shifts, np.float64),
        np.asarray(bounds, np.float64), np.asarray(rng.thresholds(sys.probs), np.uint64),
    )


@nb.njit(cache=True, nogil=True)
def _sin_forward(x, shift, amp):
    return x + shift + amp * math.sin(TWO_PI * (x - math.floor(x + 0.5)))


@nb.njit(cache=True, nogil=True)
def _sin_inverse(y, shift, amp, bound):
    # mirrors homeo.bisect_inverse
    width = 1.0
    while True:
        w = min(width, bound) if bound > 0 else 0.0
        lo = y - w
        hi = y + w
        if _sin_forward(lo, shift, amp) <= y and y <= _sin_forward(hi, shift, amp):
            break
        if w >= bound:
            lo = y - bound - 1.0
            hi = y + bound + 1.0
            break
        width *= 2.0
    scale = max(1.0, abs(y))
    while hi - lo > 1e-12 * scale:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _sin_forward(mid, shift, amp) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@nb.njit(cache=True, nogil=True)
def _apply(k, x, kind, bp, bp_off, bp_cnt, pc_off, slope, icpt, amp, shift, bound):
    if kind[k] == KIND_SIN_INVERSE:
        return _sin_inverse(x, shift[k], amp[k], bound[k])
    j = 0
    off = bp_off[k]
    for i in range(bp_cnt[k]):
        if x >= bp[off + i]:
            j = i + 1
        else:
            break
    p = pc_off[k] + j
    y = slope[p] * x + icpt[p]
    if amp[k] != 0.0:
        y = y + amp[k] * math.sin(TWO_PI * (x - math.floor(x + 0.5)))
    return y


@nb.njit(cache=True, nogil=True)
def _phi_kernel(x0s, trial_lo, trial_hi, master, horizon, escape, cfrac,
                kind, bp, bp_off, bp_cnt, pc_off, slope, icpt, amp, shift, bound, cuts):
    counts = np.zeros((x0s.shape[0], 3), np.int64)
    low = cfrac * escape
    salt = np.uint64(0)
    for t in range(trial_lo, trial_hi):
        key = rng.stream_key_nb(master, t)
        for i in range(x0s.shape[0]):
            x = x0s[i]
            plus = False
            minus = False
            for n in range(1, horizon + 1):
                r = rng.draw_nb(key, n, salt)
                k = rng.choose_nb(r, cuts)
                # inlined copy of _apply (numba call overhead dominates otherwise)
                if kind[k] == KIND_SIN_INVERSE:
                    x = _sin_inverse(x, shift[k], amp[k], bound[k])
                else:
                    j = 0
                    off = bp_off[k]
                    for ib in range(bp_cnt[k]):
                        if x >= bp[off + ib]:
                            j = ib + 1
                        else:
                            break
                    y = slope[pc_off[k] + j] * x + icpt[pc_off[k] + j]
                    if amp[k] != 0.0:
                        y = y + amp[k] * math.sin(TWO_PI * (x - math.floor(x + 0.5)))
                    x = y
                if x > escape:
                    plus = True
                elif x < low:
                    plus = False
                if x < -escape:
                    minus = True
                elif x > -low:
                    minus = False
                if x == np.inf or x == -np.inf:
                    break  # absorbing for every encodable kind
            if plus:
                counts[i, PLUS] += 1
            elif minus:
                counts[i, MINUS] += 1
            else:
                counts[i, UNDECIDED] += 1
    return counts


@nb.njit(cache=True, nogil=True)
def _visit_kernel(x0, trial_lo, trial_hi, master, horizon, ja, jb,
                  kind, bp, bp_off, bp_cnt, pc_off, slope, icpt, amp, shift, bound, cuts):
    out = np.zeros((trial_hi - trial_lo, 2), np.int64)
    half = horizon // 2
    salt = np.uint64(0)
    for t in range(trial_lo, trial_hi):
        key = rng.stream_key_nb(master, t)
        x = x0
        for n in range(1, horizon + 1):
            r = rng.draw_nb(key, n, salt)
            k = rng.choose_nb(r, cuts)
            # inlined copy of _apply (numba call overhead dominates otherwise)
            if kind[k] == KIND_SIN_INVERSE:
                x = _sin_inverse(x, shift[k], amp[k], bound[k])
            else:
                j = 0
                off = bp_off[k]
                for ib in range(bp_cnt[k]):
                    if x >= bp[off + ib]:
                        j = ib + 1
                    else:
                        break
                y = slope[pc_off[k] + j] * x + icpt[pc_off[k] + j]
                if amp[k] != 0.0:
                    y = y + amp[k] * math.sin(TWO_PI * (x - math.floor(x + 0.5)))
                x = y
            if ja <= x and x <= jb:
                out[t - trial_lo, 0] += 1
                if n > half:
                    out[t - trial_lo, 1] += 1
    return out


@nb.njit(cache=True, nogil=True)
def _runmin_kernel(x0s, trial_lo, trial_hi, master, horizon, level, escape,
                   kind, bp, bp_off, bp_cnt, pc_off, slope, icpt, amp, shift, bound, cuts):
    # counts[:, 0] = min went below level; counts[:, 1] = unresolved at horizon
    counts = np.zeros((x0s.shape[0], 2), np.int64)
    salt = np.uint64(0)
    for t in range(trial_lo, trial_hi):
        key = rng.stream_key_nb(master, t)
        for i in range(x0s.shape[0]):
            x = x0s[i]
            if x < level:
                counts[i, 0] += 1
                continue
            hit = False
            escaped = False
            for n in range(1, horizon + 1):
                r = rng.draw_nb(key, n, salt)
                k = rng.choose_nb(r, cuts)
                # inlined copy of _apply (numba call overhead dominates otherwise)
                if kind[k] == KIND_SIN_INVERSE:
                    x = _sin_inverse(x, shift[k], amp[k], bound[k])
                else:
                    j = 0
                    off = bp_off[k]
                    for ib in range(bp_cnt[k]):
                        if x >= bp[off + ib]:
                            j = ib + 1
                        else:
                            break
                    y = slope[pc_off[k] + j] * x + icpt[pc_off[k] + j]
                    if amp[k] != 0.0:
                        y = y + amp[k] * math.sin(TWO_PI * (x - math.floor(x + 0.5)))
                    x = y
                if x < level:
                    hit = True
                    break
                if x > escape:
                    escaped = True
                    break
            if hit:
                counts[i, 0] += 1
            elif not escaped:
                counts[i, 1] += 1
    return counts


@nb.njit(cache=True, nogil=True, inline="always")
def _tent(x, plateau):
    v = plateau + 1.0 - abs(x)
    if v >= 1.0:
        return 1.0
    if v <= 0.0:
        return 0.0
    return v


@nb.njit(cache=True, nogil=True)
def _stop_run(x, key, step0, horizon, plateau, check_first,
              kind, bp, bp_off, bp_cnt, pc_off, slope, icpt, amp, shift, bound, cuts):
    """Run the stopped process; returns (stop point, steps used, stopped flag)."""
    salt_stop = np.uint64(rng.SALT_STOP)
    salt_map = np.uint64(0)
    n = step0
    if check_first:
        u = rng.to_unit_nb(rng.draw_nb(key, n, salt_stop))
        if u <= _tent(x, plateau):
            return x, 0, True
    for m in range(1, horizon + 1):
        n += 1
        r = rng.draw_nb(key, n, salt_map)
        k = rng.choose_nb(r, cuts)
        # inlined copy of _apply (numba call overhead dominates otherwise)
        if kind[k] == KIND_SIN_INVERSE:
            x = _sin_inverse(x, shift[k], amp[k], bound[k])
        else:
            j = 0
            off = bp_off[k]
            for ib in range(bp_cnt[k]):
                if x >= bp[off + ib]:
                    j = ib + 1
                else:
                    break
            y = slope[pc_off[k] + j] * x + icpt[pc_off[k] + j]
            if amp[k] != 0.0:
                y = y + amp[k] * math.sin(TWO_PI * (x - math.floor(x + 0.5)))
            x = y
        u = rng.to_unit_nb(rng.draw_nb(key, n, salt_stop))
        if u <= _tent(x, plateau):
            return x, m, True
    return x, horizon, False


@nb.njit(cache=True, nogil=True)
def _stop_kernel(x0s, trial_lo, trial_hi, master, horizon, plateau,
                 kind, bp, bp_off, bp_cnt, pc_off, slope, icpt, amp, shift, bound, cuts):
    # x0s holds one start per trial block entry, or a single shared start
    pts = np.empty(trial_hi - trial_lo, np.float64)
    steps = np.empty(trial_hi - trial_lo, np.int64)
    ok = np.empty(trial_hi - trial_lo, np.bool_)
    for t in range(trial_lo, trial_hi):
        key = rng.stream_key_nb(master, t)
        x0 = x0s[0] if x0s.shape[0] == 1 else x0s[t - trial_lo]
        x, s, stopped = _stop_run(x0, key, 0, horizon, plateau, True, kind, bp, bp_off,
                                  bp_cnt, pc_off, slope, icpt, amp, shift, bound, cuts)
        pts[t - trial_lo] = x
        steps[t - trial_lo] = s
        ok[t - trial_lo] = stopped
    return pts, steps, ok


@nb.njit(cache=True, nogil=True)
def _meta_kernel(x0, trial_lo, trial_hi, master, cycles, burn, horizon, plateau, edge0, width,
                 nbins, kind, bp, bp_off, bp_cnt, pc_off, slope, icpt, amp, shift, bound, cuts):
    """Cesaro occupation of the stop-kernel chain.

    Each cycle moves once from the previous stop point, then runs the
    stopped process.  A cycle that does not stop within ``horizon`` is
    discarded and the chain resumes from the previous stop point.  The
    first ``burn`` cycles are not recorded.
    """
    hist = np.zeros(nbins, np.int64)
    failures = 0
    outside = 0
    for t in range(trial_lo, trial_hi):
        key = rng.stream_key_nb(master, t)
        z = x0
        n = 0
        for c in range(cycles):
            x, s, stopped = _stop_run(z, key, n, horizon, plateau, False, kind, bp, bp_off,
                                      bp_cnt, pc_off, slope, icpt, amp, shift, bound, cuts)
            n += s
            if not stopped:
                failures += 1
                continue
            z = x
            if c < burn:
                continue
            b = int(math.floor((z - edge0) / width))
            if 0 <= b and b < nbins:
                hist[b] += 1
            else:
                outside += 1
    return hist, failures, outside


# ---------------------------------------------------------------------------
# Python route (any map kind)

def step(sys: RandomSystem, cuts: list[int], x: float, r: int) -> float:
    return sys.maps[rng.choose(r, cuts)].eval_float(x)


def _py_phi(sys, x0s, lo, hi, master, horizon, escape, cfrac):
    cuts = rng.thresholds(sys.probs)
    counts = np.zeros((len(x0s), 3), np.int64)
    low = cfrac * escape
    for t in range(lo, hi):
        key = rng.stream_key(master, t)
        for i, x in enumerate(x0s):
            plus = minus = False
            for n in range(1, horizon + 1):
                x = step(sys, cuts, x, rng.draw(key, n))
                if x > escape:
                    plus = True
                elif x < low:
                    plus = False
                if x < -escape:
                    minus = True
                elif x > -low:
                    minus = False
                if math.isinf(x):
                    break
            counts[i, PLUS if plus else MINUS if minus else UNDECIDED] += 1
    return counts


def _py_visits(sys, x0, lo, hi, master, horizon, ja, jb):
    cuts = rng.thresholds(sys.probs)
    out = np.zeros((hi - lo, 2), np.int64)
    for t in range(lo, hi):
        key = rng.stream_key(master, t)
        x = x0
        for n in range(1, horizon + 1):
            x = step(sys, cuts, x, rng.draw(key, n))
            if ja <= x <= jb:
                out[t - lo, 0] += 1
                if n > horizon // 2:
                    out[t - lo, 1] += 1
    return out


def _py_runmin(sys, x0s, lo, hi, master, horizon, level, escape):
    cuts = rng.thresholds(sys.probs)
    counts = np.zeros((len(x0s), 2), np.int64)
    for t in range(lo, hi):
        key = rng.stream_key(master, t)
        for i, x in enumerate(x0s):
            if x < level:
                counts[i, 0] += 1
                continue
            hit = escaped = False
            for n in range(1, horizon + 1):
                x = step(sys, cuts, x, rng.draw(key, n))
                if x < level:
                    hit = True
                    break
                if x > escape:
                    escaped = True
                    break
            if hit:
                counts[i, 0] += 1
            elif not escaped:
                counts[i, 1] += 1
    return counts


def tent(x: float, plateau: float) -> float:
    return min(1.0, max(0.0, plateau + 1.0 - abs(x)))


def _py_stop_run(sys, cuts, x, key, step0, horizon, plateau, check_first):
    n = step0
    if check_first and rng.to_unit(rng.draw(key, n, rng.SALT_STOP)) <= tent(x, plateau):
        return x, 0, True
    for m in range(1, horizon + 1):
        n += 1
        x = step(sys, cuts, x, rng.draw(key, n))
        if rng.to_unit(rng.draw(key, n, rng.SALT_STOP)) <= tent(x, plateau):
            return x, m, True
    return x, horizon, False


def _py_stop(sys, x0s, lo, hi, master, horizon, plateau):
    cuts = rng.thresholds(sys.probs)
    pts, steps, ok = [], [], []
    for t in range(lo, hi):
        x0 = x0s[0] if len(x0s) == 1 else x0s[t - lo]
        x, s, stopped = _py_stop_run(sys, cuts, x0, rng.stream_key(master, t), 0, horizon,
                                     plateau, True)
        pts.append(x)
        steps.append(s)
        ok.append(stopped)
    return np.array(pts, float), np.array(steps, np.int64), np.array(ok, bool)


def _py_meta(sys, x0, lo, hi, master, cycles, burn, horizon, plateau, edge0, width, nbins):
    cuts = rng.thresholds(sys.probs)
    hist = np.zeros(nbins, np.int64)
    failures = outside = 0
    for t in range(lo, hi):
        key = rng.stream_key(master, t)
        z, n = x0, 0
        for c in range(cycles):
            x, s, stopped = _py_stop_run(sys, cuts, z, key, n, horizon, plateau, False)
            n += s
            if not stopped:
                failures += 1
                continue
            z = x
            if c < burn:
                continue
            b = math.floor((z - edge0) / width)
            if 0 <= b < nbins:
                hist[b] += 1
            else:
                outside += 1
    return hist, failures, outside


# ---------------------------------------------------------------------------
# fan-out

def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("RDSLINE_WORKERS", "1")))
    except ValueError:
        return 1


def fan_out(trials: int, workers: int | None, fn: Callable[[int, int], object]) -> list:
    """Run ``fn(lo, hi)`` over contiguous trial blocks; results in block order.

    Block boundaries depend on ``workers`` but every trial's randomness
    depends only on its index, so reductions by sum or concatenation are
    identical for any worker count.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    workers = min(workers, max(1, trials))
    bounds = np.linspace(0, trials, workers + 1).round().astype(int)
    blocks = [(int(a), int(b)) for a, b in zip(bounds, bounds[1:]) if b > a]
    if len(blocks) <= 1:
        return [fn(a, b) for a, b in blocks] or [fn(0, 0)]
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        return list(pool.map(lambda ab: fn(*ab), blocks))


def phi_counts(sys, x0s, trials, master, horizon, escape, cfrac, workers=None, trial_offset=0):
    x0s = np.asarray(x0s, np.float64)
    enc = encode(sys)
    master = np.uint64(master)

    def run(lo, hi):
        lo, hi = lo + trial_offset, hi + trial_offset
        if enc is not None:
            return _phi_kernel(x0s, lo, hi, master, horizon, escape, cfrac, *enc.args())
        return _py_phi(sys, [float(v) for v in x0s], lo, hi, int(master), horizon, escape, cfrac)

    return sum(fan_out(trials, workers, run))


def visit_counts(sys, x0, trials, master, horizon, ja, jb, workers=None):
    enc = encode(sys)
    master = np.uint64(master)

    def run(lo, hi):
        if enc is not None:
            return _visit_kernel(float(x0), lo, hi, master, horizon, float(ja), float(jb),
                                 *enc.args())
        return _py_visits(sys, float(x0), lo, hi, int(master), horizon, float(ja), float(jb))

    return np.concatenate(fan_out(trials, workers, run))


def runmin_counts(sys, x0s, trials, master, horizon, level, escape, workers=None):
    x0s = np.asarray(x0s, np.float64)
    enc = encode(sys)
    master = np.uint64(master)

    def run(lo, hi):
        if enc is not None:
            return _runmin_kernel(x0s, lo, hi, master, horizon, float(level), float(escape),
                                  *enc.args())
        return _py_runmin(sys, [float(v) for v in x0s], lo, hi, int(master), horizon,
                          float(level), float(escape))

    return sum(fan_out(trials, workers, run))


def stop_points(sys, x0, trials, master, horizon, plateau, workers=None):
    """Stop points of ``trials`` runs; ``x0`` is a scalar or one start per trial."""
    enc = encode(sys)
    master = np.uint64(master)
    starts = np.atleast_1d(np.asarray(x0, np.float64))
    if starts.shape[0] not in (1, trials):
        raise ValueError("need one start point or one per trial")

    def run(lo, hi):
        xs = starts if starts.shape[0] == 1 else starts[lo:hi]
        if enc is not None:
            return _stop_kernel(xs, lo, hi, master, horizon, float(plateau), *enc.args())
        return _py_stop(sys, list(xs), lo, hi, int(master), horizon, float(plateau))

    parts = fan_out(trials, workers, run)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def meta_histogram(sys, x0, trials, master, cycles, horizon, plateau, edge0, width, nbins,
                   workers=None, burn=0):
    enc = encode(sys)
    master = np.uint64(master)

    def run(lo, hi):
        if enc is not None:
            return _meta_kernel(float(x0), lo, hi, master, cycles, burn, horizon,
                                float(plateau), float(edge0), float(width), nbins, *enc.args())
        return _py_meta(sys, float(x0), lo, hi, int(master), cycles, burn, horizon,
                        float(plateau), float(edge0), float(width), nbins)

    parts = fan_out(trials, workers, run)
    hist = sum(np.asarray(p[0]) for p in parts)
    return hist, sum(int(p[1]) for p in parts), sum(int(p[2]) for p in parts)
