"""Outlier-location equation: evaluate, scan, and refine its roots.

For off-support lam the matrix

    T(lam) = Id + Gamma (lam Id + b.S)^{-1} Gamma^T diag_l(b)

is real of size l_+ x l_+ (b evaluated at the converged fixed point), and
the predicted outlier multiset consists of the off-support roots of
det T(lam) = 0.  Sign changes along a scan grid are refined by bisection;
near-zero dips of |det T| without a sign change are flagged as candidate
even-multiplicity roots rather than certified.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularSystemError
from .fixed_point import continue_real_axis, solve_at

__all__ = [
    "OutlierEquationValue",
    "OutlierRoot",
    "PredictedOutlierSet",
    "evaluate_T",
    "scan_det",
    "find_roots",
    "build_scan_grid",
    "predict_outliers",
]

SINGULAR_DIP_TOL = 1e-6
DEFAULT_REFINE_TOL = 1e-9
DEFAULT_DELTA = 0.1
FINE_STEP = 0.01
COARSE_STEP = 0.05
FINE_MARGIN = 5.0
IMAG_RESIDUE_TOL = 1e-8


@dataclass(frozen=True)
class OutlierEquationValue:
    """T(lam), its determinant, and its smallest singular value."""

    lam: float
    matrix: np.ndarray
    det: float
    smallest_singular: float
    state: object  # fixed-point state used (warm-start handle)


@dataclass(frozen=True)
class OutlierRoot:
    lam: float
    multiplicity: int
    flag: str = ""  # "", "inside_delta", "even_candidate"


@dataclass(frozen=True)
class PredictedOutlierSet:
    """Ascending predicted outlier locations plus scan metadata."""

    roots: tuple
    delta: float
    grid: np.ndarray

    @property
    def locations(self):
        return np.array([r.lam for r in self.roots])

    @property
    def total_multiplicity(self):
        return sum(r.multiplicity for r in self.roots)

    def simple_roots(self):
        return tuple(r for r in self.roots if r.multiplicity == 1 and r.flag != "even_candidate")


def _diag_l(values, signal):
    """Expand per-component values onto the stacked spike rows."""
    return np.repeat(np.asarray(values), signal.l_r)


def _support_between(support, x0, x1):
    """True when a support interval intersects the open interval (x0, x1)."""
    if support is None:
        return (x1 - x0) > 10.0 * COARSE_STEP
    return any(hi > x0 and lo < x1 for lo, hi in support.intervals)


def resolvent_quadform(lam, b, problem, signal):
    """Gamma (lam Id + b.S)^{-1} Gamma^T for real off-support lam."""
    G = signal.stacked
    if G.shape[0] == 0:
        return np.zeros((0, 0))
    if problem.noise_diag is not None:
        d = lam + b @ problem.noise_diag
        if np.any(d == 0):
            raise SingularSystemError(lam)
        return (G / d) @ G.T
    M = problem.noise_matrix(b, lam)
    try:
        X = np.linalg.solve(M, G.T)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(lam) from exc
    return G @ X


def evaluate_T(lam, problem, signal, track=None, state=None, tol=None):
    """Evaluate the outlier matrix at one off-support point.

    The sample-side weights come from the supplied state, the nearest
    track state (warm start plus a fresh solve), or a cold path-followed
    solve when neither is given.
    """
    lam = float(lam)
    if state is None:
        if track is not None:
            near = track.state_at(lam)
            state = solve_at(lam, problem, init=(near.a.real, near.b.real), tol=tol)
        else:
            from .fixed_point import solve_real_point

            state = solve_real_point(lam, problem, tol=tol)
    b = state.b
    imag = float(np.max(np.abs(b.imag))) if np.iscomplexobj(b) else 0.0
    if imag > IMAG_RESIDUE_TOL:
        raise SingularSystemError(
            lam, f"sample-side weights have imaginary residue {imag:.3e} at lam={lam}; "
            "point is not off-support",
        )
    b = b.real
    Q = resolvent_quadform(lam, b, problem, signal)
    T = np.eye(signal.l_plus) + Q * _diag_l(b, signal)[None, :]
    det = float(np.linalg.det(T))
    smin = float(np.linalg.svd(T, compute_uv=False)[-1]) if signal.l_plus else np.inf
    return OutlierEquationValue(
        lam=lam, matrix=T, det=det, smallest_singular=smin, state=state
    )


def build_scan_grid(problem, signal, support, delta=DEFAULT_DELTA,
                    fine_step=FINE_STEP, coarse_step=COARSE_STEP,
                    fine_margin=FINE_MARGIN, span=None):
    """Off-support scan grid: fine near the support, coarse in the far field.

    The domain is [support_min - span, support_max + span] with
    span = max(5, 2 * ||Sigma|| estimate), which safely covers the root
    magnitude bound; points within delta of the support are dropped.
    """
    if signal.l_plus == 0:
        return np.array([])
    if span is None:
        if problem.noise_diag is not None:
            noise_norm = float(np.max(np.abs(problem.noise_diag))) if problem.noise_diag.size else 0.0
        else:
            noise_norm = max(np.linalg.norm(S, 2) for S in problem.noise_dense)
        signal_norm = float(np.linalg.norm(signal.stacked @ signal.stacked.T, 2)) \
            if signal.l_plus else 0.0
        span = max(5.0, 2.0 * (noise_norm + signal_norm))
    if support.intervals:
        lo, hi = support.lo - span, support.hi + span
        fine_lo, fine_hi = support.lo - fine_margin, support.hi + fine_margin
    else:
        lo, hi = -span, span
        fine_lo, fine_hi = lo, hi

    def far_field(start, stop, direction):
        # geometrically widening steps: far from the support the
        # determinant is smooth, and the per-root bisection restores all
        # the accuracy; 1% growth keeps same-side roots separable
        pts = []
        x, step = start, coarse_step
        while (x < stop) if direction > 0 else (x > stop):
            pts.append(x)
            x += direction * step
            step *= 1.01
        return np.array(pts)

    pieces = [np.arange(fine_lo, fine_hi, fine_step)]
    if lo < fine_lo:
        pieces.append(far_field(fine_lo, lo, -1.0))
    if fine_hi < hi:
        pieces.append(far_field(fine_hi, hi, +1.0))
    grid = np.unique(np.concatenate(pieces))
    keep = np.array([support.is_outside(x, delta) for x in grid], dtype=bool)
    return grid[keep]


def scan_det(grid, problem, signal, support=None, delta=DEFAULT_DELTA, tol=None):
    """Evaluate det T along an off-support grid with warm-started continuation.

    The grid is filtered against the support (padding delta) and split
    into contiguous segments, each path-followed independently.  Failed
    points are recorded as None.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size and support is not None:
        keep = np.array([support.is_outside(x, delta) for x in grid], dtype=bool)
        grid = grid[keep]
    if grid.size == 0:
        return []
    # split wherever a support interval sits between consecutive points:
    # the continuation branch must not be extrapolated across the bulk
    breaks = [0]
    for i in range(grid.size - 1):
        if _support_between(support, grid[i], grid[i + 1]):
            breaks.append(i + 1)
    breaks.append(grid.size)
    values = []
    for s0, s1 in zip(breaks, breaks[1:]):
        seg = grid[s0:s1]
        track = continue_real_axis(seg, problem, tol=tol, on_error="mark")
        for lam, st in zip(track.grid, track.states):
            if st is None:
                values.append(None)
                continue
            try:
                values.append(evaluate_T(lam, problem, signal, state=st, tol=tol))
            except SingularSystemError:
                values.append(None)
    return values


def _bisect_root(lo_val, hi_val, problem, signal, refine_tol, tol=None):
    """Bisection on det T between two bracketing scan values."""
    lo, hi = lo_val, hi_val
    state = lo.state
    while hi.lam - lo.lam > refine_tol:
        mid = 0.5 * (lo.lam + hi.lam)
        st = solve_at(mid, problem, init=(state.a.real, state.b.real), tol=tol)
        val = evaluate_T(mid, problem, signal, state=st, tol=tol)
        state = st
        if np.sign(val.det) == np.sign(lo.det):
            lo = val
        else:
            hi = val
    return 0.5 * (lo.lam + hi.lam)


def find_roots(scan, problem, signal, refine_tol=DEFAULT_REFINE_TOL,
               support=None, delta=DEFAULT_DELTA, tol=None):
    """Refine the scan into the predicted outlier multiset.

    Sign-change brackets are bisected to width refine_tol (multiplicity
    one).  Local minima of |det T| whose smallest singular value dips
    below 1e-6 without a sign change are reported as multiplicity-2
    candidates with a flag, not certified roots.
    """
    vals = [v for v in scan if v is not None]
    roots = []
    grid = np.array([v.lam for v in vals])
    for left, right in zip(vals, vals[1:]):
        if _support_between(support, left.lam, right.lam):
            continue  # different off-support segment
        if np.sign(left.det) * np.sign(right.det) < 0:
            lam = _bisect_root(left, right, problem, signal, refine_tol, tol=tol)
            roots.append((lam, 1, ""))
    for i in range(1, len(vals) - 1):
        prev_, cur, next_ = vals[i - 1], vals[i], vals[i + 1]
        if _support_between(support, prev_.lam, next_.lam):
            continue
        if (abs(cur.det) < abs(prev_.det) and abs(cur.det) < abs(next_.det)
                and np.sign(prev_.det) == np.sign(next_.det) == np.sign(cur.det)
                and cur.smallest_singular < SINGULAR_DIP_TOL):
            roots.append((cur.lam, 2, "even_candidate"))
    out = []
    for lam, mult, flag in sorted(roots):
        if support is not None and not flag and not support.is_outside(lam, delta):
            flag = "inside_delta"
        out.append(OutlierRoot(lam=lam, multiplicity=mult, flag=flag))
    total = sum(r.multiplicity for r in out)
    if total > 2 * signal.l_plus:
        warnings.warn(
            f"found total root multiplicity {total} > 2 l_+ = {2 * signal.l_plus}; "
            "scan may be fragmenting roots",
            stacklevel=2,
        )
    return PredictedOutlierSet(roots=tuple(out), delta=delta, grid=grid)


def predict_outliers(problem, signal, support, delta=DEFAULT_DELTA,
                     refine_tol=DEFAULT_REFINE_TOL, grid=None, tol=None):
    """Scan plus refinement in one call; returns (roots, scan values)."""
    if grid is None:
        grid = build_scan_grid(problem, signal, support, delta=delta)
    scan = scan_det(grid, problem, signal, support=support, delta=delta, tol=tol)
    roots = find_roots(scan, problem, signal, refine_tol=refine_tol,
                       support=support, delta=delta, tol=tol)
    return roots, scan
