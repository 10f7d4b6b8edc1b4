"""Counter-based random streams.

Every random number is a pure function of ``(master_seed, trial_index,
step, salt)``: the per-trial stream key is the SplitMix64 output for
``master_seed + (trial_index + 1) * GOLDEN`` and the n-th draw of a stream
is the SplitMix64 output for ``key ^ salt + n * GOLDEN``.  Results therefore
do not depend on how trials are split across workers.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numba as nb
import numpy as np

GENERATOR_ID = "splitmix64-counter/v1"

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

# independent sub-streams of one trial
SALT_MAP = 0
SALT_STOP = 0x5DEECE66D1F2B3A7
SALT_DRIFT = 0x2545F4914F6CDD1D

_GOLDEN = np.uint64(GOLDEN)
_MIX1 = np.uint64(MIX1)
_MIX2 = np.uint64(MIX2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def stream_key(master_seed: int, trial_index: int) -> int:
    return mix64(master_seed + (trial_index + 1) * GOLDEN)


def draw(key: int, step: int, salt: int = SALT_MAP) -> int:
    return mix64((key ^ salt) + step * GOLDEN)


def to_unit(r: int) -> float:
    """Uniform in (0, 1] from the top 53 bits."""
    return ((r >> 11) + 1) * 2.0**-53


def thresholds(probs: Sequence[Fraction]) -> list[int]:
    """Integer cut points for exact map selection.

    Map i is chosen iff ``T[i-1] <= r < T[i]`` for a uniform 64-bit r; the
    last map takes everything at or above ``T[-1]``.  T[i] is
    ``floor(2**64 * (p_0 + ... + p_i))`` computed in rational arithmetic.
    """
    cum = Fraction(0)
    out = []
    for p in probs[:-1]:
        cum += Fraction(p)
        out.append(min((cum.numerator << 64) // cum.denominator, MASK64))
    return out


def choose(r: int, cuts: Sequence[int]) -> int:
    for i, t in enumerate(cuts):
        if r < t:
            return i
    return len(cuts)


@nb.njit(nb.uint64(nb.uint64), cache=True, nogil=True)
def mix64_nb(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@nb.njit(nb.uint64(nb.uint64, nb.int64), cache=True, nogil=True)
def stream_key_nb(master_seed, trial_index):
    return mix64_nb(master_seed + nb.uint64(trial_index + 1) * _GOLDEN)


@nb.njit(nb.uint64(nb.uint64, nb.int64, nb.uint64), cache=True, nogil=True)
def draw_nb(key, step, salt):
    return mix64_nb((key ^ salt) + nb.uint64(step) * _GOLDEN)


@nb.njit(nb.float64(nb.uint64), cache=True, nogil=True)
def to_unit_nb(r):
    return np.float64((r >> _S11) + _ONE) * 1.1102230246251565e-16


@nb.njit(cache=True, nogil=True, inline="always")
def choose_nb(r, cuts):
    for i in range(cuts.shape[0]):
        if r < cuts[i]:
            return i
    return cuts.shape[0]
