import numpy as np
import pytest

from manovaspec import (
    ConfigError,
    ModelDesign,
    NoiseModel,
    SignalModel,
    build_one_way_layout,
    compute_interaction_matrix,
    isotropic_approximation,
    sample_paper_noise,
    validate_manova,
)


class TestOneWayLayout:
    def test_tiny_construction(self):
        d = build_one_way_layout(2, 4)
        assert d.n == 4 and d.n_r == (2, 4)
        np.testing.assert_array_equal(d.U_r[0], [[1, 0], [1, 0], [0, 1], [0, 1]])
        np.testing.assert_array_equal(d.U_r[1], np.eye(4))
        # pi has 1/2-blocks (idempotent), so B = (pi - pi_perp)/n has
        # zero diagonal and 1/4 within-pair off-diagonals
        pi = np.kron(np.eye(2), np.full((2, 2), 0.5))
        np.testing.assert_allclose(pi @ pi, pi, atol=1e-15)
        np.testing.assert_allclose(d.B, (pi - (np.eye(4) - pi)) / 4, atol=1e-15)
        np.testing.assert_allclose(d.B, np.kron(np.eye(2), [[0, 0.25], [0.25, 0]]),
                                   atol=1e-15)

    def test_projection_identities(self):
        d = build_one_way_layout(7, 3)
        U1 = d.U_r[0]
        pi = U1 @ U1.T / 2.0
        np.testing.assert_allclose(pi @ pi, pi, atol=1e-12)
        assert np.trace(pi) == pytest.approx(7)  # rank = number of groups

    def test_paper_dimensions(self):
        d = build_one_way_layout(800, 3200)
        assert d.n == 1600 and d.n_r == (800, 1600) and d.p == 3200

    def test_block_traces_are_moment_conditions(self):
        # n_1^{-1} Tr F_11 = 1 and n_2^{-1} Tr F_22 = 0, via the dense product
        d = build_one_way_layout(6, 5)
        F = compute_interaction_matrix(d)
        assert F.block_trace(1) / d.n_r[0] == pytest.approx(1.0, abs=1e-12)
        assert F.block_trace(2) / d.n_r[1] == pytest.approx(0.0, abs=1e-12)

    def test_group_size_three_still_unbiased(self):
        d = build_one_way_layout(5, 4, group_size=3)
        rep = validate_manova(d, 1)
        assert rep.passed
        np.testing.assert_allclose(rep.values, [1.0, 0.0], atol=1e-12)

    def test_invalid_dimensions(self):
        with pytest.raises(ConfigError):
            build_one_way_layout(1, 4)
        with pytest.raises(ConfigError):
            build_one_way_layout(3, 0)


class TestInteractionMatrix:
    def test_zero_kernel_gives_zero(self):
        d = ModelDesign.create(U_r=[np.eye(3)], B=np.zeros((3, 3)), p=2)
        F = compute_interaction_matrix(d)
        np.testing.assert_array_equal(F.F, np.zeros((3, 3)))

    def test_one_way_pair_block_is_identity(self):
        # frozen from the dense-product computation at n_pairs=2, p=1:
        # F_11 = sqrt(4) U_1^T B U_1 = Id_2
        d = build_one_way_layout(2, 1)
        F = compute_interaction_matrix(d)
        np.testing.assert_allclose(F.block(1, 1), np.eye(2), atol=1e-14)

    def test_symmetry_for_random_kernel(self):
        rng = np.random.default_rng(3)
        B = rng.normal(size=(8, 8))
        B = (B + B.T) / 2
        U1 = rng.normal(size=(8, 3))
        U2 = rng.normal(size=(8, 5))
        d = ModelDesign.create(U_r=[U1, U2], B=B, p=4)
        F = compute_interaction_matrix(d)
        np.testing.assert_array_equal(F.F, F.F.T)
        np.testing.assert_allclose(F.block(1, 2), F.block(2, 1).T, atol=1e-12)

    def test_block_shapes_and_offsets(self):
        rng = np.random.default_rng(5)
        d = ModelDesign.create(
            U_r=[rng.normal(size=(6, 2)), rng.normal(size=(6, 4))],
            B=np.eye(6) / 6, p=3,
        )
        F = compute_interaction_matrix(d)
        assert F.F.shape == (6, 6)
        assert F.block(1, 2).shape == (2, 4)
        assert F.offsets == (0, 2, 6)


class TestValidateManova:
    def test_scaled_kernel_fails(self):
        d = build_one_way_layout(4, 3)
        d2 = ModelDesign.create(U_r=list(d.U_r), B=2.0 * d.B, p=3)
        rep = validate_manova(d2, 1)
        assert not rep.passed
        np.testing.assert_allclose(rep.values, [2.0, 0.0], atol=1e-12)

    def test_ones_column_is_not_annihilated(self):
        # the all-ones vector lies in col-span(U_1), but the pair kernel maps
        # it to ones/n rather than zero; the report must carry that residual
        d = build_one_way_layout(4, 3)
        ones = np.ones((d.n, 1))
        resid = float(np.max(np.abs(d.B @ ones)))
        assert resid == pytest.approx(1.0 / d.n, rel=1e-12)
        d2 = ModelDesign(n=d.n, p=d.p, n_r=d.n_r, U_r=d.U_r, B=d.B, X=ones,
                         enforce_annihilation=False)
        rep = validate_manova(d2, 1)
        assert rep.bx_residual == pytest.approx(1.0 / d.n, rel=1e-12)
        assert not rep.passed

    def test_annihilation_enforced_by_default(self):
        d = build_one_way_layout(4, 3)
        with pytest.raises(ConfigError):
            ModelDesign(n=d.n, p=d.p, n_r=d.n_r, U_r=d.U_r, B=d.B,
                        X=np.ones((d.n, 1)))

    def test_asymmetric_kernel_is_symmetrized_with_warning(self):
        rng = np.random.default_rng(0)
        B = rng.normal(size=(5, 5))
        with pytest.warns(UserWarning, match="symmetrized"):
            d = ModelDesign.create(U_r=[np.eye(5)], B=B, p=2)
        np.testing.assert_array_equal(d.B, d.B.T)


class TestNoiseModel:
    def test_isotropic_approximation_diag(self):
        nm = NoiseModel(sigma_ring=(np.diag([2.0, 0.0]),))
        iso = isotropic_approximation(nm, 2)
        np.testing.assert_allclose(iso.sigma_ring[0], np.eye(2))

    def test_isotropic_identity_fixed_point(self):
        nm = NoiseModel(sigma_ring=(np.eye(7),))
        iso = isotropic_approximation(nm)
        np.testing.assert_allclose(iso.sigma_ring[0], np.eye(7))

    def test_isotropic_preserves_trace(self):
        rng = np.random.default_rng(8)
        A = rng.normal(size=(30, 30))
        S = A @ A.T
        nm = NoiseModel(sigma_ring=(S,))
        iso = isotropic_approximation(nm)
        assert np.trace(iso.sigma_ring[0]) == pytest.approx(np.trace(S), rel=1e-10)

    def test_rank_deficient_accepted(self):
        NoiseModel(sigma_ring=(np.diag([1.0, 0.0, 0.0]),))

    def test_indefinite_rejected(self):
        with pytest.raises(ConfigError):
            NoiseModel(sigma_ring=(np.diag([1.0, -0.5]),))

    def test_sqrt_clamps_roundoff(self):
        S = np.diag([4.0, 0.0])
        nm = NoiseModel(sigma_ring=(S,))
        np.testing.assert_allclose(nm.sqrts[0], np.diag([2.0, 0.0]))


class TestPaperNoise:
    def test_leading_entries_zeroed(self):
        S = sample_paper_noise(32, 4, seed=1)
        assert np.all(np.diagonal(S)[:4] == 0.0)
        assert np.all(np.diagonal(S)[4:] > 0.0)
        assert np.count_nonzero(S - np.diag(np.diagonal(S))) == 0

    def test_deterministic_given_seed(self):
        np.testing.assert_array_equal(
            sample_paper_noise(64, 4, seed=9), sample_paper_noise(64, 4, seed=9)
        )
        assert not np.array_equal(
            sample_paper_noise(64, 4, seed=9), sample_paper_noise(64, 4, seed=10)
        )

    def test_unit_mean_law_of_large_numbers(self):
        p = 10_000
        S = sample_paper_noise(p, 0, seed=3)
        assert abs(np.diagonal(S).mean() - 1.0) < 3.0 / np.sqrt(p)

    def test_zeroed_bounds(self):
        with pytest.raises(ConfigError):
            sample_paper_noise(4, 4, seed=0)


class TestSignalModel:
    def test_stacking_and_index(self):
        p = 40
        e = np.eye(p)
        sig = SignalModel.from_spikes(2, p, [(1, 2 * e[0]), (2, 3 * e[1]), (1, e[2])])
        assert sig.l_r == (2, 1)
        assert sig.row_index == ((1, 1), (1, 2), (2, 1))
        np.testing.assert_allclose(sig.spike_strengths, [4.0, 1.0, 9.0])
        assert sig.stacked.shape == (3, p)

    def test_empty(self):
        sig = SignalModel.empty(2, 5)
        assert sig.l_plus == 0
        assert sig.stacked.shape == (0, 5)

    def test_crowded_signal_warns(self):
        p = 20
        spikes = [(1, np.eye(p)[j]) for j in range(5)]
        with pytest.warns(UserWarning, match="p/10"):
            SignalModel.from_spikes(1, p, spikes)

    def test_bad_component_rejected(self):
        with pytest.raises(ConfigError):
            SignalModel.from_spikes(1, 4, [(2, np.ones(4))])
