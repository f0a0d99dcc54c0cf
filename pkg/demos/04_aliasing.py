"""Aliased outliers: signal in one component leaks into another's estimator.

The estimator targets the within-pair component, but the only signal
lives in the residual component (strength mu_2).  The estimator still
shows a PAIR of outliers at roughly +/- sqrt(c_2 mu_2) whose predicted
eigenvectors are orthogonal to every within-pair spike direction: pure
artifacts of the design, not evidence of within-pair structure.
"""

import numpy as np

from manovaspec import (
    NoiseModel,
    SignalModel,
    alias_expansion,
    build_one_way_layout,
    build_problem,
    compute_c,
    default_density_grid,
    density_on_grid,
    detect_support,
    predict_outliers,
    sample_paper_noise,
)

n_pairs, p = 200, 800
design = build_one_way_layout(n_pairs, p)
noise = NoiseModel(sigma_ring=(
    0.1 * sample_paper_noise(p, 4, seed=101),
    0.1 * sample_paper_noise(p, 4, seed=202),
))
problem = build_problem(design, noise)
support = detect_support(
    density_on_grid(problem, default_density_grid(problem)), delta=0.1
)
c = compute_c(design, noise)
print("bulk support:", [(round(a, 3), round(b, 3)) for a, b in support.intervals])
print("c2 =", round(c[1], 5))

print(f"\n{'mu_2':>8} {'predicted pair':>24} {'+/- sqrt(c2 mu2)':>20}")
for mu2 in (50.0, 100.0, 400.0):
    sig = SignalModel.from_spikes(2, p, [(2, np.sqrt(mu2) * np.eye(p)[3])])
    roots, _ = predict_outliers(problem, sig, support, delta=0.1)
    locs = roots.locations
    plus, minus = alias_expansion(mu2, c[1])
    print(f"{mu2:>8.0f} {np.round(locs, 4)!s:>24} {f'{plus:+.4f} / {minus:+.4f}':>20}")
