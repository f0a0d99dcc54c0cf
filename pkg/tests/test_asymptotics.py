import numpy as np
import pytest

from manovaspec import (
    ConfigError,
    NoiseModel,
    alias_expansion,
    bias_expansion,
    build_one_way_layout,
    compute_c,
    check_bias,
    check_eigenvector_bias,
    eigenvector_bias_expansion,
    w_direction,
)

from conftest import make_mp_design, make_small_one_way


class TestComputeC:
    def test_zero_kernel(self):
        d = build_one_way_layout(4, 3)
        from manovaspec import ModelDesign
        d0 = ModelDesign.create(U_r=list(d.U_r), B=np.zeros((d.n, d.n)), p=3)
        noise = NoiseModel(sigma_ring=(np.eye(3), np.eye(3)))
        np.testing.assert_array_equal(compute_c(d0, noise), [0.0, 0.0])

    def test_identity_interaction_reduces_to_aspect_ratio(self):
        n, p = 40, 20
        d = make_mp_design(n, p)
        noise = NoiseModel(sigma_ring=(np.eye(p),))
        c = compute_c(d, noise)
        # Tr[(B)(B)] * Tr S = (1/n) * p = gamma
        assert c[0] == pytest.approx(p / n, rel=1e-12)

    def test_one_way_closed_form(self):
        # c_1 = (tau_1 + tau_2/2)/n_1, c_2 = (tau_1 + tau_2)/(2 n_1) for pairs
        design, noise = make_small_one_way(n_pairs=30, p=100)
        tau = noise.traces
        n1 = design.n_r[0]
        c = compute_c(design, noise)
        assert c[0] == pytest.approx((tau[0] + tau[1] / 2) / n1, rel=1e-10)
        assert c[1] == pytest.approx((tau[0] + tau[1]) / (2 * n1), rel=1e-10)

    def test_large_lambda_weight_expansion(self, small_one_way):
        # b_r(lam) + 1{r=1} + c_r/lam decays like 1/lam^2 (log-log slope -2)
        from manovaspec import solve_real_point
        design, noise, prob = small_one_way
        c = compute_c(design, noise)
        target = np.array([1.0, 0.0])
        lams = np.array([1e2, 1e3, 1e4])
        resid = []
        for lam in lams:
            st = solve_real_point(lam, prob)
            resid.append(np.max(np.abs(st.b.real + target + c / lam)))
        slope = np.polyfit(np.log(lams), np.log(resid), 1)[0]
        assert slope == pytest.approx(-2.0, abs=0.2)


class TestExpansionFormulas:
    def test_bias_degenerate_cases(self):
        assert bias_expansion(10.0, 5.0, 0.0, 2.0, 3.0) == pytest.approx(12.0)
        assert bias_expansion(10.0, 0.0, 0.7, 2.0, 3.0) == pytest.approx(12.0)

    def test_alias_arithmetic(self):
        assert alias_expansion(0.0, 2.0) == (0.0, 0.0)
        assert alias_expansion(64.0, 1.0) == (8.0, -8.0)
        with pytest.raises(ConfigError):
            alias_expansion(64.0, -1.0)

    def test_eigenvector_bias_degenerate(self):
        assert eigenvector_bias_expansion(10.0, 5.0, 0.0, 2.0) == 0.0
        with pytest.raises(ConfigError):
            eigenvector_bias_expansion(10.0, 5.0, 1.0, 2.0)

    def test_w_direction_is_unit_residual(self):
        mu1, mu2, rho = 9.0, 16.0, 0.4
        p = 10
        v1 = np.eye(p)[0]
        v2 = rho * v1 + np.sqrt(1 - rho**2) * np.eye(p)[1]
        G = np.vstack([np.sqrt(mu1) * v1, np.sqrt(mu2) * v2])
        w = w_direction(mu1, mu2, rho)
        gw = G.T @ w
        assert np.linalg.norm(gw) == pytest.approx(1.0, rel=1e-12)
        assert gw @ v1 == pytest.approx(0.0, abs=1e-12)
        resid = (v2 - rho * v1) / np.sqrt(1 - rho**2)
        np.testing.assert_allclose(gw, resid, atol=1e-12)


@pytest.fixture(scope="module")
def vignette(small_one_way):
    # spikes sit in the noise kernel (first four coordinates are zeroed)
    design, noise, _ = small_one_way
    p = design.p
    rho = 0.5
    v1 = np.eye(p)[0]
    v2 = rho * v1 + np.sqrt(1 - rho**2) * np.eye(p)[1]
    return design, noise, v1, v2, rho


class TestExpansionChecks:
    """Exact-pipeline comparisons; gaps must shrink as the signal grows."""

    def test_bias_gap_shrinks(self, vignette, small_one_way_support):
        design, noise, v1, v2, rho = vignette
        sup = small_one_way_support
        lo = check_bias(design, noise, v1, v2, 100.0, 100.0, support=sup)
        hi = check_bias(design, noise, v1, v2, 400.0, 400.0, support=sup)
        assert lo.rel_gap < 0.01
        assert hi.rel_gap < lo.rel_gap / 2.0

    def test_eigenvector_bias_gap_shrinks(self, vignette, small_one_way_support):
        design, noise, v1, v2, rho = vignette
        sup = small_one_way_support
        lo = check_eigenvector_bias(design, noise, v1, v2, 100.0, 100.0, support=sup)
        hi = check_eigenvector_bias(design, noise, v1, v2, 400.0, 400.0, support=sup)
        assert lo.rel_gap < 0.25
        assert hi.rel_gap < lo.rel_gap / 2.0

    def test_alignment_first_order_direction(self, vignette, small_one_way_support):
        # alpha^{-1/2} u approaches Gamma v_1 at rate 1/sqrt(mu)
        from manovaspec import (
            ContinuationTrack, SignalModel, build_problem, predict_alignment,
            predict_outliers,
        )
        design, noise, v1, v2, rho = vignette
        prob = build_problem(design, noise)
        sup = small_one_way_support
        gaps = {}
        for mu in (100.0, 900.0):
            sig = SignalModel.from_spikes(
                design.k, design.p,
                [(1, np.sqrt(mu) * v1), (2, np.sqrt(mu) * v2)],
            )
            roots, scan = predict_outliers(prob, sig, sup, delta=0.1)
            track = ContinuationTrack(
                grid=np.array([v.lam for v in scan if v is not None]),
                states=[v.state for v in scan if v is not None],
                epsilon=0.0, lipschitz=0.0)
            top = max(roots.simple_roots(), key=lambda r: r.lam)
            pred = predict_alignment(top, prob, sig, track, other_roots=roots.roots)
            gamma_v1 = sig.stacked @ v1
            gaps[mu] = float(np.linalg.norm(pred.predicted_projection - gamma_v1))
        assert gaps[900.0] < gaps[100.0]
        assert gaps[100.0] < 6.0 * gaps[900.0]  # ~3x expected for a 1/sqrt(mu) rate
