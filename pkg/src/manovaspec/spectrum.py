"""Bulk density via Stieltjes inversion and support detection.

The density of the deterministic equivalent law at lam is approximated by
Im m0(lam + i*eps) / pi on a fine grid (eps defaults to 1e-8), and the
support is read off as the maximal grid runs where that density clears a
small threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InconsistencyError, NonConvergenceError, SingularSystemError
from .fixed_point import continue_real_axis, solve_at

__all__ = [
    "SpectralDensity",
    "SupportSet",
    "density_on_grid",
    "detect_support",
    "estimate_support_range",
    "default_density_grid",
]

DEFAULT_EPSILON = 1e-8
DEFAULT_THRESHOLD = 1e-5
DEFAULT_MIN_GAP = 3
MAX_CLAMP = 1e-6


@dataclass(frozen=True)
class SpectralDensity:
    """Nonnegative density values on an ascending grid.

    Failed grid points carry NaN in `density` and True in `missing`.
    `max_clamp` records the largest negative value clipped to zero, and
    `mass_estimate` the trapezoid integral over the converged points
    (atoms, e.g. at zero for rank-deficient estimators, are invisible to
    the absolutely continuous part and show up as a mass deficit).
    """

    grid: np.ndarray
    density: np.ndarray
    epsilon: float
    mass_estimate: float
    max_clamp: float
    missing: np.ndarray

    @property
    def mass_deficit(self):
        return 1.0 - self.mass_estimate


@dataclass(frozen=True)
class SupportSet:
    """Disjoint ascending closed intervals [lo, hi] plus the downstream padding."""

    intervals: tuple
    delta: float = 0.1

    def __post_init__(self):
        iv = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in iv:
            if hi < lo:
                raise ValueError(f"support interval [{lo}, {hi}] is inverted")
        for (_, hi), (lo, _) in zip(iv, iv[1:]):
            if lo <= hi:
                raise ValueError("support intervals must be disjoint and ascending")
        object.__setattr__(self, "intervals", iv)

    def distance(self, x):
        """Distance from x to the support (0 inside an interval)."""
        x = float(x)
        d = np.inf
        for lo, hi in self.intervals:
            if lo <= x <= hi:
                return 0.0
            d = min(d, abs(x - lo), abs(x - hi))
        return d

    def is_outside(self, x, delta=None):
        delta = self.delta if delta is None else delta
        return self.distance(x) > delta

    @property
    def lo(self):
        return self.intervals[0][0] if self.intervals else np.nan

    @property
    def hi(self):
        return self.intervals[-1][1] if self.intervals else np.nan


def density_on_grid(problem, grid, epsilon=DEFAULT_EPSILON, tol=None, on_error="mark"):
    """Density of the bulk law on an ascending grid at height epsilon.

    States come from a single warm-started continuation pass at
    z = lam + i*epsilon.  Points where the solver fails are marked
    missing, never interpolated.  Negative roundoff values are clamped at
    zero; a clamp beyond 1e-6 means the solver returned a non-physical
    state and raises.
    """
    grid = np.asarray(grid, dtype=float)
    track = continue_real_axis(grid, problem, epsilon=epsilon, tol=tol, on_error=on_error)
    dens = np.full(grid.shape, np.nan)
    missing = np.ones(grid.shape, dtype=bool)
    max_clamp = 0.0
    for i, st in enumerate(track.states):
        if st is None:
            continue
        val = st.m0.imag / np.pi
        if val < 0:
            max_clamp = max(max_clamp, -val)
            val = 0.0
        dens[i] = val
        missing[i] = False
    if max_clamp > MAX_CLAMP:
        raise InconsistencyError(
            f"density clamp {max_clamp:.3e} exceeds {MAX_CLAMP:g}; "
            "Im m0 should be nonnegative up to roundoff"
        )
    ok = ~missing
    mass = float(np.trapezoid(dens[ok], grid[ok])) if np.count_nonzero(ok) > 1 else 0.0
    return SpectralDensity(
        grid=grid, density=dens, epsilon=float(epsilon),
        mass_estimate=mass, max_clamp=float(max_clamp), missing=missing,
    )


def detect_support(sd, threshold=DEFAULT_THRESHOLD, min_gap=DEFAULT_MIN_GAP, delta=0.1):
    """Support intervals as maximal above-threshold runs of the density.

    Runs separated by fewer than `min_gap` grid points are merged, and
    each interval is padded outward by one grid step.  Missing points
    count as below threshold.  An empty result is legal (no detectable
    absolutely continuous mass on the grid).
    """
    grid = sd.grid
    above = np.where(np.nan_to_num(sd.density, nan=0.0) > threshold)[0]
    if above.size == 0:
        return SupportSet(intervals=(), delta=delta)
    runs = []
    start = prev = above[0]
    for idx in above[1:]:
        if idx - prev < min_gap:
            prev = idx
            continue
        runs.append((start, prev))
        start = prev = idx
    runs.append((start, prev))
    step = float(np.median(np.diff(grid))) if grid.size > 1 else 0.0
    intervals = [(grid[i0] - step, grid[i1] + step) for i0, i1 in runs]
    merged = [intervals[0]]
    for lo, hi in intervals[1:]:
        if lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
        else:
            merged.append((lo, hi))
    return SupportSet(intervals=tuple(merged), delta=delta)


def _moment_bracket(problem):
    """Mean +/- 6 std bracket for the bulk from numeric first/second moments.

    The Stieltjes expansion m0(z) = -1/z - m1/z^2 - m2/z^3 - ... is probed
    at two large imaginary arguments to extract m1 and m2.
    """
    y1 = 200.0 * np.sqrt(problem.scale)
    y2 = 2.0 * y1
    vals = []
    for y in (y1, y2):
        st = solve_at(1j * y, problem)
        z = 1j * y
        vals.append(z * z * (st.m0 + 1.0 / z))  # = -m1 - m2/z + O(1/z^2)
    f1, f2 = vals
    # f(z) = -m1 - m2/z: two-point fit
    m2 = (f1 - f2) / (1.0 / (1j * y2) - 1.0 / (1j * y1))
    m1 = -(f1 + m2 / (1j * y1))
    mean, var = float(m1.real), max(float(m2.real) - float(m1.real) ** 2, 0.0)
    std = np.sqrt(var)
    return mean, std


def _looks_inside(lam, problem, height=1e-6, floor=1e-4):
    try:
        st = None
        for h in np.geomspace(1.0, height, 7):  # descend; cold starts stall near the axis
            init = None if st is None else (st.a, st.b)
            st = solve_at(lam + 1j * h, problem, init=init)
    except (NonConvergenceError, SingularSystemError):
        return True  # a stalled solve this close to the axis means support
    return st.m0.imag / np.pi > floor


def estimate_support_range(problem, pad=1.0, probes=81):
    """Rough [lo, hi] enclosure of the bulk support, found numerically.

    A moment-based bracket is probed just above the axis for points of
    visible density; the outermost inside points are then bracketed
    against outside points by bisection.  The returned range is padded
    and intended for building density grids, not as a support estimate.
    """
    mean, std = _moment_bracket(problem)
    if std == 0.0:
        return mean - pad, mean + pad
    lo, hi = mean - 6.0 * std, mean + 6.0 * std
    for _ in range(8):
        grid = np.linspace(lo, hi, probes)
        inside = np.array([_looks_inside(x, problem) for x in grid])
        if not np.any(inside):
            # intervals may be narrower than the probe spacing
            if probes > 2000:
                return mean - pad, mean + pad
            probes *= 3
            continue
        if inside[0]:
            lo -= 3.0 * std
            continue
        if inside[-1]:
            hi += 3.0 * std
            continue
        break
    idx = np.where(inside)[0]
    left_out, left_in = grid[idx[0] - 1], grid[idx[0]]
    right_in, right_out = grid[idx[-1]], grid[idx[-1] + 1]
    for _ in range(10):
        mid = 0.5 * (left_out + left_in)
        if _looks_inside(mid, problem):
            left_in = mid
        else:
            left_out = mid
        mid = 0.5 * (right_in + right_out)
        if _looks_inside(mid, problem):
            right_in = mid
        else:
            right_out = mid
    return float(left_out - pad), float(right_out + pad)


def default_density_grid(problem, step=0.01, pad=1.0):
    """Ascending grid covering the estimated bulk range at the given step.

    The grid is offset by half a step when a point would land exactly on
    zero: rank-deficient estimators put an atom there whose Lorentzian
    regularization would swamp the trapezoid mass estimate.
    """
    lo, hi = estimate_support_range(problem, pad=pad)
    grid = np.arange(lo, hi + step, step)
    if np.any(np.isclose(grid, 0.0, atol=step * 1e-6)):
        grid = grid + 0.5 * step
    return grid
