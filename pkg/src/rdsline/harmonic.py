"""Windowed hitting probabilities as a deterministic cross-check.

On a window [a, b] with value 0 at and below a and 1 at and above b, the
bounded solution of phi(x) = sum_i p_i phi(f_i(x)) is the probability of
reaching [b, inf) before (-inf, a].  It is computed by Jacobi sweeps of the
averaging operator, starting from the linear ramp.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .system import RandomSystem


class NotConverged(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"not converged: residual {residual:.3e} after {iterations} sweeps")
        self.residual = residual
        self.iterations = iterations


@dataclass
class GridFunction:
    a: float
    b: float
    values: np.ndarray
    residual: float = float("nan")
    iterations: int = 0

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.a, self.b, len(self.values))

    @property
    def boundary_consistent(self) -> bool:
        return self.values[0] == 0.0 and self.values[-1] == 1.0

    def __call__(self, x):
        """Linear interpolation inside the window, 0/1 outside."""
        x = np.asarray(x, float)
        out = np.interp(x, self.grid, self.values)
        out = np.where(x < self.a, 0.0, out)
        return np.where(x > self.b, 1.0, out)


def _operator(sys: RandomSystem, a: float, b: float, n_points: int) -> tuple[sp.csr_matrix, np.ndarray]:
    """Averaging operator restricted to interior points, plus its constant part.

    ``(P @ v + c)[j]`` is ``sum_i p_i v(f_i(x_j))`` for interior ``x_j``, with
    linear interpolation on the grid and the 0/1 convention outside.
    """
    xs = np.linspace(a, b, n_points)
    h = (b - a) / (n_points - 1)
    interior = np.arange(1, n_points - 1)
    rows, cols, vals = [], [], []
    const = np.zeros(n_points)
    for m, p in zip(sys.maps, sys.probs):
        p = float(p)
        y = m.eval_array(xs[interior])
        above = y >= b
        const[interior[above]] += p
        inside = (y > a) & ~above
        t = (y[inside] - a) / h
        lo = np.floor(t).astype(int)
        lo = np.clip(lo, 0, n_points - 2)
        w = t - lo
        # snap near-integer offsets so grid-aligned maps give exact weights
        snap = np.abs(w - np.round(w)) < 1e-9
        lo = np.where(snap & (np.round(w) == 1), lo + 1, lo)
        w = np.where(snap, 0.0, w)
        r = interior[inside]
        rows.extend([r, r])
        cols.extend([lo, np.minimum(lo + 1, n_points - 1)])
        vals.extend([p * (1 - w), p * w])
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_points, n_points),
    )
    P.sum_duplicates()
    P.eliminate_zeros()
    return P, const


def harmonic_residual(sys: RandomSystem, phi: GridFunction) -> float:
    """sup over interior grid points of |phi(x) - sum_i p_i phi(f_i(x))|."""
    P, c = _operator(sys, phi.a, phi.b, len(phi.values))
    r = (P @ phi.values + c - phi.values)[1:-1]
    return float(np.max(np.abs(r))) if r.size else 0.0


def solve_phi_window(sys: RandomSystem, window: tuple[float, float] = (-50.0, 50.0),
                     grid_size: int = 2000, tol: float = 1e-8,
                     max_iters: int = 1_000_000) -> GridFunction:
    """Probability of exiting the window at the top, on G+1 uniform points.

    ``grid_size`` is the number of intervals G.  Raises :class:`NotConverged`
    if the sup-norm residual is still above ``tol`` after ``max_iters``
    sweeps.
    """
    a, b = float(window[0]), float(window[1])
    if not (np.isfinite(a) and np.isfinite(b) and a < b):
        raise ValueError("window must be bounded with a < b")
    n = int(grid_size) + 1
    P, c = _operator(sys, a, b, n)
    v = np.linspace(0.0, 1.0, n)
    prev = np.inf
    for it in range(1, max_iters + 1):
        new = P @ v + c
        new[0], new[-1] = 0.0, 1.0
        res = float(np.max(np.abs(new[1:-1] - v[1:-1]))) if n > 2 else 0.0
        # sweeps contract the residual in sup norm (rows are substochastic)
        assert res <= prev * (1 + 1e-12) + 1e-15, "residual increased"
        assert new.min() >= -1e-12 and new.max() <= 1 + 1e-12, "left [0, 1]"
        prev = res
        if res <= tol:
            # return the iterate whose residual was measured
            phi = GridFunction(a, b, v, res, it - 1)
            break
        v = new
    else:
        raise NotConverged(prev, max_iters)
    if np.any(np.diff(phi.values) < -1e-12):
        raise AssertionError("solution is not monotone")
    return phi


def to_rows(phi: GridFunction) -> list[dict]:
    return [{"x": float(x), "phi": float(v)} for x, v in zip(phi.grid, phi.values)]
