"""Outlier phase transition for a rank-one spike in a sample covariance.

Sweeps the spike strength mu through the detachment threshold sqrt(gamma)
and prints the predicted outlier location and spike-space alignment next
to the classical closed forms: location (1+mu)(1 + gamma/mu) and squared
cosine (1 - gamma/mu^2)/(1 + gamma/mu) above the transition, nothing
below it.
"""

import numpy as np

from manovaspec import (
    ContinuationTrack,
    ModelDesign,
    NoiseModel,
    SignalModel,
    build_problem,
    density_on_grid,
    detect_support,
    predict_alignment,
    predict_outliers,
)

n, p = 128, 64
gamma = p / n

design = ModelDesign.create(U_r=[np.eye(n)], B=np.eye(n) / n, p=p)
noise = NoiseModel(sigma_ring=(np.eye(p),))
problem = build_problem(design, noise)

grid = np.arange(0.0001, 3.3, 0.01)
support = detect_support(density_on_grid(problem, grid))
print(f"bulk support: [{support.lo:.4f}, {support.hi:.4f}],  "
      f"transition at mu = sqrt(gamma) = {np.sqrt(gamma):.4f}\n")

print(f"{'mu':>6} {'root (predicted)':>18} {'root (closed form)':>20} "
      f"{'cos^2 (pred)':>14} {'cos^2 (cf)':>12}")
for mu in (0.25, 0.5, 0.71, 1.0, 2.0, 4.0, 8.0):
    v = np.zeros(p)
    v[0] = np.sqrt(mu)
    sig = SignalModel.from_spikes(1, p, [(1, v)])
    roots, scan = predict_outliers(problem, sig, support, delta=0.05)
    if not roots.roots:
        print(f"{mu:>6.2f} {'-- subcritical --':>18}")
        continue
    track = ContinuationTrack(
        grid=np.array([x.lam for x in scan if x is not None]),
        states=[x.state for x in scan if x is not None],
        epsilon=0.0, lipschitz=0.0,
    )
    root = roots.roots[-1]
    pred = predict_alignment(root, problem, sig, track, other_roots=roots.roots)
    ell = 1.0 + mu
    cf_root = ell * (1 + gamma / (ell - 1)) if mu > np.sqrt(gamma) else float("nan")
    cf_cos2 = (1 - gamma / mu**2) / (1 + gamma / mu) if mu > np.sqrt(gamma) else float("nan")
    cos2 = pred.predicted_projection[0] ** 2 / mu
    print(f"{mu:>6.2f} {root.lam:>18.8f} {cf_root:>20.8f} {cos2:>14.6f} {cf_cos2:>12.6f}")
