"""Closed-form large-signal expansions and their exact-pipeline cross-checks.

The design/noise constants

    c_r = sum_t Tr[(U_r^T B U_t)(U_t^T B U_r)] * Tr S_t

drive the leading-order behavior of the sample-side weights,
b_r(lam) = -1{r = target} - c_r/lam + O(1/lam^2), and with them the
two-spike vignette: eigenvalue bias mu_1 + c_1 + c_2 mu_2 rho^2 / mu_1,
aliased eigenvalue pair +/- sqrt(c_2 mu_2), and the eigenvector bias
(c_2 mu_2 / mu_1^2) rho sqrt(1 - rho^2) along the residualized second
spike direction.  Each expansion is exposed both as a formula and as a
checker that compares it against the exact root/eigenvector machinery.

Note the printed form of the constant in the source derivation carries a
transpose that is dimensionally inconsistent; the implementation follows
the variant forced by the appendix derivation (see compute_c).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "ExpansionConstants",
    "compute_c",
    "bias_expansion",
    "alias_expansion",
    "eigenvector_bias_expansion",
    "w_direction",
    "ExpansionCheck",
    "check_bias",
    "check_alias",
    "check_eigenvector_bias",
]


@dataclass(frozen=True)
class ExpansionConstants:
    """Design constants plus the two-spike vignette parameters."""

    c: np.ndarray
    mu: tuple
    rho: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.c)):
            raise ConfigError(f"non-finite expansion constants: {self.c}")
        if abs(self.rho) > 1.0 + 1e-12:
            raise ConfigError(f"|rho| = {abs(self.rho)} > 1")


def compute_c(design, noise):
    """The k design constants c_r.

    c_r = sum_t Tr[(U_r^T B U_t)(U_t^T B U_r)] * Tr S_t; equivalently
    sum_t (n_r n_t)^{-1} Tr(F_rt F_tr) Tr S_t in block-matrix form.
    """
    traces = noise.traces
    c = np.zeros(design.k)
    BU = [design.B @ U for U in design.U_r]
    for r in range(design.k):
        for t in range(design.k):
            block = design.U_r[r].T @ BU[t]  # U_r^T B U_t
            c[r] += np.sum(block * block) * traces[t]
    return c


def bias_expansion(mu1, mu2, rho, c1, c2):
    """Large-signal location of the leading root: mu_1 + c_1 + c_2 mu_2 rho^2 / mu_1."""
    if mu1 <= 0:
        raise ConfigError(f"mu1 must be positive, got {mu1}")
    return float(mu1 + c1 + c2 * mu2 * rho**2 / mu1)


def alias_expansion(mu2, c2):
    """Aliased root pair (+sqrt(c_2 mu_2), -sqrt(c_2 mu_2))."""
    prod = c2 * mu2
    if prod < 0:
        raise ConfigError(f"c2 * mu2 = {prod} < 0 has no real aliased pair")
    root = float(np.sqrt(prod))
    return (root, -root)


def eigenvector_bias_expansion(mu1, mu2, rho, c2):
    """Leading-order overlap of the sample eigenvector with the residual direction."""
    if mu1 <= 0:
        raise ConfigError(f"mu1 must be positive, got {mu1}")
    if abs(rho) >= 1.0:
        raise ConfigError(f"|rho| = {abs(rho)} >= 1: residual direction degenerates")
    return float((c2 * mu2 / mu1**2) * rho * np.sqrt(1.0 - rho**2))


def w_direction(mu1, mu2, rho):
    """Spike-space coefficients w with Gamma^T w the unit residual of v2 against v1."""
    if abs(rho) >= 1.0 or mu1 <= 0 or mu2 <= 0:
        raise ConfigError("w direction needs mu1, mu2 > 0 and |rho| < 1")
    return np.array([-rho * np.sqrt(mu2), np.sqrt(mu1)]) / np.sqrt(mu1 * mu2 * (1.0 - rho**2))


@dataclass(frozen=True)
class ExpansionCheck:
    """Expansion value vs the exact pipeline, with the relative gap."""

    expansion: float
    exact: float
    rel_gap: float


def _exact_two_spike(design, noise, v1, v2, mu1, mu2, delta=0.1, tol=None, support=None):
    """Exact roots and track for the two-spike vignette (shared by checkers)."""
    from .fixed_point import build_problem
    from .model import SignalModel
    from .outliers import predict_outliers
    from .spectrum import default_density_grid, density_on_grid, detect_support

    problem = build_problem(design, noise)
    signal = SignalModel.from_spikes(
        design.k, design.p,
        [(1, np.sqrt(mu1) * np.asarray(v1)), (2, np.sqrt(mu2) * np.asarray(v2))],
    )
    if support is None:
        grid = default_density_grid(problem)
        support = detect_support(density_on_grid(problem, grid), delta=delta)
    roots, scan = predict_outliers(problem, signal, support, delta=delta, tol=tol)
    return problem, signal, support, roots


def check_bias(design, noise, v1, v2, mu1, mu2, delta=0.1, support=None):
    """Largest exact root vs the bias expansion."""
    c = compute_c(design, noise)
    rho = float(np.dot(v1, v2))
    problem, signal, support, roots = _exact_two_spike(
        design, noise, v1, v2, mu1, mu2, delta, support=support)
    if not roots.roots:
        raise ConfigError("no exact outlier root found; spikes too weak for the comparison")
    exact = float(roots.locations.max())
    approx = bias_expansion(mu1, mu2, rho, c[0], c[1])
    return ExpansionCheck(approx, exact, abs(exact - approx) / abs(exact))


def check_alias(design, noise, v2, mu2, delta=0.1, support=None):
    """Exact aliased pair (component-2 spike only) vs +/- sqrt(c_2 mu_2)."""
    c = compute_c(design, noise)
    p = design.p
    zero_row = np.zeros(p)
    problem, signal, support, roots = _exact_two_spike(
        design, noise, zero_row, v2, 0.0, mu2, delta, support=support
    )
    locs = np.array([r.lam for r in roots.simple_roots()])
    if locs.size != 2:
        raise ConfigError(f"expected an aliased pair, found {locs.size} roots at {locs}")
    plus, minus = alias_expansion(mu2, c[1])
    exact_plus, exact_minus = float(locs.max()), float(locs.min())
    gap = max(abs(exact_plus - plus) / abs(plus), abs(exact_minus - minus) / abs(minus))
    return ExpansionCheck(plus, exact_plus, gap)


def check_eigenvector_bias(design, noise, v1, v2, mu1, mu2, delta=0.1, support=None):
    """Exact w^T (alpha^{-1/2} u) at the leading root vs the expansion."""
    from .eigenvectors import predict_alignment
    from .fixed_point import continue_real_axis

    c = compute_c(design, noise)
    rho = float(np.dot(v1, v2))
    problem, signal, support, roots = _exact_two_spike(
        design, noise, v1, v2, mu1, mu2, delta, support=support)
    if not roots.roots:
        raise ConfigError("no exact outlier root found")
    top = max(roots.roots, key=lambda r: r.lam)
    lam = top.lam
    track = continue_real_axis(
        np.array([lam - 0.02, lam - 0.01, lam, lam + 0.01, lam + 0.02]), problem
    )
    pred = predict_alignment(top, problem, signal, track,
                             other_roots=roots.roots, delta=delta, support=support)
    w = w_direction(mu1, mu2, rho)
    exact = float(w @ pred.predicted_projection)
    approx = eigenvector_bias_expansion(mu1, mu2, rho, c[1])
    denom = max(abs(exact), 1e-300)
    return ExpansionCheck(approx, exact, abs(exact - approx) / denom)
