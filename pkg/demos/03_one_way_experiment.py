"""The full one-way-layout experiment at reduced scale.

A balanced paired design (n = 2 n_1 samples, p traits) with exponential
noise spectra, a rank-3 signal in the within-pair component and a rank-2
signal in the residual component.  The script predicts the bulk density,
the six outlier locations, and the eigenvector alignments, then verifies
them against a seeded Monte Carlo sweep.  Flip SCALE up to reproduce the
full-size experiment (n_pairs=800, p=3200) if you have the patience.
"""

import numpy as np

from manovaspec import (
    ContinuationTrack,
    NoiseModel,
    SignalModel,
    SimulationConfig,
    build_one_way_layout,
    build_problem,
    compute_c,
    default_density_grid,
    density_on_grid,
    detect_support,
    predict_alignment,
    predict_outliers,
    run_experiment,
    sample_paper_noise,
    validate_manova,
)

SCALE = 1  # 1 -> n=400, p=800; 4 -> the full-size experiment

n_pairs, p = 200 * SCALE, 800 * SCALE
design = build_one_way_layout(n_pairs, p)
print("design:", f"n={design.n}, n_1={design.n_r[0]}, n_2={design.n_r[1]}, p={p}")
print("moment conditions:", validate_manova(design, 1).values)

noise = NoiseModel(sigma_ring=(
    sample_paper_noise(p, 4, seed=101),
    sample_paper_noise(p, 4, seed=202),
))
e = np.eye(p)
w = (e[0] + e[1] + e[2]) / np.sqrt(3.0)
signal = SignalModel.from_spikes(2, p, [
    (1, np.sqrt(32.0) * e[0]),
    (1, np.sqrt(16.0) * e[1]),
    (1, np.sqrt(8.0) * e[2]),
    (2, np.sqrt(32.0) * w),
    (2, np.sqrt(64.0) * e[3]),
])

problem = build_problem(design, noise)
grid = default_density_grid(problem)
sd = density_on_grid(problem, grid)
support = detect_support(sd, delta=0.1)
print("\nbulk support:", [(round(a, 3), round(b, 3)) for a, b in support.intervals])
print("a.c. mass:", round(sd.mass_estimate, 4),
      " (the remaining mass is the atom at zero: p > n)")

c = compute_c(design, noise)
print("design constants c:", np.round(c, 4))

roots, scan = predict_outliers(problem, signal, support, delta=0.1)
print("\npredicted outliers (six expected: four positive, two negative):")
for r in roots.roots:
    print(f"  lambda = {r.lam:10.4f}  multiplicity {r.multiplicity}  {r.flag}")

track = ContinuationTrack(
    grid=np.array([v.lam for v in scan if v is not None]),
    states=[v.state for v in scan if v is not None],
    epsilon=0.0, lipschitz=0.0,
)
alignments = [
    predict_alignment(r, problem, signal, track, other_roots=roots.roots,
                      support=support)
    for r in roots.simple_roots()
]

print("\npredicted spike-space projections (rows of Gamma: 32e1,16e2,8e3 | 32w,64e4):")
for al in alignments:
    print(f"  lambda = {al.lam:10.4f}: ", np.round(al.predicted_projection, 3))

cfg = SimulationConfig(design=design, noise=noise, signal=signal,
                       replicates=50 // SCALE**2 or 10, seed=7)
summary, report = run_experiment(cfg, support=support, roots=roots,
                                 alignments=alignments)

print(f"\nMonte Carlo ({cfg.replicates} replicates):")
print(f"{'predicted':>12} {'empirical mean':>16} {'std err':>10} {'rel gap':>10}")
for lam, m, se, g in zip(report.predicted, report.empirical_mean,
                         report.empirical_se, report.rel_gap):
    print(f"{lam:>12.4f} {m:>16.4f} {se:>10.4f} {g:>10.4%}")
print("ordered distance of mean multisets:", round(report.ordered_dist_of_means, 4))
print("cardinality match fraction:", report.match_fraction)
