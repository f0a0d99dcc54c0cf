import numpy as np
import pytest

from manovaspec import (
    SignalModel,
    build_problem,
    build_scan_grid,
    evaluate_T,
    find_roots,
    predict_outliers,
    scan_det,
)

from conftest import make_small_one_way, paper_signal
from oracles import bbp_root, mp_b, mp_edges

GAMMA = 0.5
P_MP = 32


def spike(p, mu, j=0):
    v = np.zeros(p)
    v[j] = np.sqrt(mu)
    return v


class TestEvaluateT:
    def test_empty_signal_det_is_one(self, mp_problem, mp_support):
        sig = SignalModel.empty(1, P_MP)
        val = evaluate_T(5.0, mp_problem, sig)
        assert val.matrix.shape == (0, 0)
        assert val.det == 1.0

    def test_bbp_scalar_reduction(self, mp_problem, mp_support):
        # T = 1 + b mu / (lam + b) for an isotropic rank-one spike
        mu = 4.0
        sig = SignalModel.from_spikes(1, P_MP, [(1, spike(P_MP, mu))])
        for lam in (4.0, 5.0, 6.0, 7.0):
            val = evaluate_T(lam, mp_problem, sig)
            b = mp_b(lam, GAMMA)
            assert val.det == pytest.approx(1.0 + b * mu / (lam + b), abs=1e-10)

    def test_det_matches_eigenvalue_product(self, small_one_way, small_one_way_support):
        design, noise, prob = small_one_way
        sig = paper_signal(design.p)
        lam = small_one_way_support.hi + 2.0
        val = evaluate_T(lam, prob, sig)
        prod = float(np.prod(np.linalg.eigvals(val.matrix)).real)
        assert val.det == pytest.approx(prod, rel=1e-8)

    def test_full_covariance_equivalence(self):
        # det T(lam) = 0 iff det(lam Id + b . Sigma) = 0 with the full spiked
        # covariances; verified here as simultaneous sign changes (isotropic noise)
        from manovaspec import (
            NoiseModel, build_one_way_layout, default_density_grid,
            density_on_grid, detect_support,
        )
        p = 80
        design = build_one_way_layout(20, p)
        noise = NoiseModel(sigma_ring=(np.eye(p), 0.5 * np.eye(p)))
        prob = build_problem(design, noise)
        sup = detect_support(density_on_grid(prob, default_density_grid(prob)), delta=0.1)
        e = np.eye(p)
        sig = SignalModel.from_spikes(2, p, [(1, 3.0 * e[0]), (2, 4.0 * e[1])])
        Sig1 = 9.0 * np.outer(e[0], e[0]) + np.eye(p)
        Sig2 = 16.0 * np.outer(e[1], e[1]) + 0.5 * np.eye(p)
        grid = np.arange(sup.hi + 0.15, sup.hi + 8.0, 0.01)
        scan = scan_det(grid, prob, sig, support=sup, delta=0.1)
        signs_T, signs_full = [], []
        for val in scan:
            assert val is not None
            signs_T.append(np.sign(val.det))
            b = val.state.b.real
            full = val.lam * np.eye(p) + b[0] * Sig1 + b[1] * Sig2
            sgn, _ = np.linalg.slogdet(full)
            signs_full.append(sgn)
        changes_T = [i for i in range(1, len(signs_T)) if signs_T[i] != signs_T[i - 1]]
        changes_full = [i for i in range(1, len(signs_full)) if signs_full[i] != signs_full[i - 1]]
        assert changes_T == changes_full
        assert len(changes_T) >= 1


class TestScanAndRoots:
    def test_bbp_supercritical_single_root(self, mp_problem, mp_support):
        sig = SignalModel.from_spikes(1, P_MP, [(1, spike(P_MP, 4.0))])
        roots, scan = predict_outliers(mp_problem, sig, mp_support, delta=0.1)
        assert len(roots.roots) == 1
        root = roots.roots[0]
        assert root.multiplicity == 1
        assert root.lam == pytest.approx(bbp_root(4.0, GAMMA), abs=1e-6)
        # sign change only to the right of the bulk
        assert root.lam > mp_edges(GAMMA)[1]

    def test_bbp_subcritical_no_roots(self, mp_problem, mp_support):
        sig = SignalModel.from_spikes(1, P_MP, [(1, spike(P_MP, 0.5))])
        roots, _ = predict_outliers(mp_problem, sig, mp_support, delta=0.1)
        assert roots.roots == ()

    def test_empty_signal_empty_set(self, mp_problem, mp_support):
        sig = SignalModel.empty(1, P_MP)
        roots, scan = predict_outliers(mp_problem, sig, mp_support, delta=0.1)
        assert roots.roots == ()
        assert scan == []

    def test_two_spikes_two_roots(self, mp_problem, mp_support):
        sig = SignalModel.from_spikes(
            1, P_MP, [(1, spike(P_MP, 4.0, j=0)), (1, spike(P_MP, 9.0, j=1))]
        )
        roots, _ = predict_outliers(mp_problem, sig, mp_support, delta=0.1)
        locs = roots.locations
        assert locs.size == 2
        assert locs[0] == pytest.approx(bbp_root(4.0, GAMMA), abs=1e-6)
        assert locs[1] == pytest.approx(bbp_root(9.0, GAMMA), abs=1e-6)

    def test_roots_stable_under_grid_halving(self, mp_problem, mp_support):
        sig = SignalModel.from_spikes(1, P_MP, [(1, spike(P_MP, 4.0))])
        g1 = build_scan_grid(mp_problem, sig, mp_support, fine_step=0.02, coarse_step=0.1)
        g2 = build_scan_grid(mp_problem, sig, mp_support, fine_step=0.01, coarse_step=0.05)
        r1, _ = predict_outliers(mp_problem, sig, mp_support, grid=g1)
        r2, _ = predict_outliers(mp_problem, sig, mp_support, grid=g2)
        assert len(r1.roots) == len(r2.roots) == 1
        assert abs(r1.roots[0].lam - r2.roots[0].lam) <= 0.04

    def test_singular_value_dips_at_simple_root(self, mp_problem, mp_support):
        sig = SignalModel.from_spikes(1, P_MP, [(1, spike(P_MP, 4.0))])
        roots, _ = predict_outliers(mp_problem, sig, mp_support)
        val = evaluate_T(roots.roots[0].lam, mp_problem, sig)
        assert val.smallest_singular < 1e-7

    def test_kernel_gap_at_paper_roots(self, small_one_way, small_one_way_support):
        design, noise, prob = small_one_way
        sig = paper_signal(design.p)
        roots, _ = predict_outliers(prob, sig, small_one_way_support, delta=0.1)
        for r in roots.roots:
            val = evaluate_T(r.lam, prob, sig)
            s = np.linalg.svd(val.matrix, compute_uv=False)
            assert s[-1] < 1e-7
            assert s[-2] > 10.0 * s[-1]

    def test_paper_pattern_four_positive_two_negative(self, small_one_way,
                                                      small_one_way_support):
        design, noise, prob = small_one_way
        sig = paper_signal(design.p)
        roots, _ = predict_outliers(prob, sig, small_one_way_support, delta=0.1)
        locs = roots.locations
        assert (locs > 0).sum() == 4
        assert (locs < 0).sum() == 2

    def test_scan_respects_support_collar(self, mp_problem, mp_support):
        sig = SignalModel.from_spikes(1, P_MP, [(1, spike(P_MP, 4.0))])
        grid = build_scan_grid(mp_problem, sig, mp_support, delta=0.1)
        for lam in grid:
            assert mp_support.is_outside(lam, 0.1)

    def test_aliased_roots_opposite_signs(self):
        # component-2 spike only: an aliased pair around +/- sqrt(c2 mu2)
        from manovaspec import compute_c, default_density_grid, density_on_grid, detect_support
        design, noise = make_small_one_way(n_pairs=50, p=200, noise_scale=0.1)
        prob = build_problem(design, noise)
        sup = detect_support(density_on_grid(prob, default_density_grid(prob)), delta=0.1)
        p = design.p
        mu2 = 100.0
        sig = SignalModel.from_spikes(2, p, [(1, np.zeros(p)), (2, spike(p, mu2, j=3))])
        roots, _ = predict_outliers(prob, sig, sup, delta=0.1)
        locs = roots.locations
        assert locs.size == 2
        assert locs[0] < 0 < locs[1]
        c = compute_c(design, noise)
        target = np.sqrt(c[1] * mu2)
        assert abs(abs(locs[0]) - target) / target < 0.05
        assert abs(locs[1] - target) / target < 0.05
