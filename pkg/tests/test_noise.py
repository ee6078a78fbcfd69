import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqfed import geometry, noise
from aqfed.errors import ContourTooShort, DegreeTooHigh, DuplicateIndices

from conftest import disk


def normal_equation_fit(u, v, p):
    """Solve the (p+1)x(p+1) moment system sum_k u_k^(i+j) a_j = sum_k v_k u_k^i."""
    powers = np.arange(p + 1)
    moments = np.array([[np.sum(u ** (i + j)) for j in powers] for i in powers])
    rhs = np.array([np.sum(v * u**i) for i in powers])
    return np.linalg.solve(moments, rhs)


class TestControlIndices:
    def test_endpoints_and_spacing(self):
        idx = noise.control_indices(400, 16, 5)
        assert len(idx) == 16
        assert idx[0] == 1 and idx[-1] == 400
        expected = np.floor(1 + np.arange(16) * 399 / 15).astype(int)
        np.testing.assert_array_equal(idx, expected)

    def test_too_short(self):
        with pytest.raises(ContourTooShort):
            noise.control_indices(4, 8, 5)

    def test_default_count(self):
        assert noise.CemParams(0, 1).control_count(100) == 8
        assert noise.CemParams(0, 1).control_count(401) == 17


class TestFit:
    def test_matches_normal_equations_rescaled(self, rng):
        for _ in range(20):
            l = int(rng.integers(50, 600))
            idx = noise.control_indices(l, int(rng.integers(8, 24)), 5)
            v = rng.normal(0, 2, len(idx))
            poly = noise.fit_bias_polynomial(idx, v, 5)
            x = (idx - poly.center) / poly.scale
            ref = normal_equation_fit(x, v, 5)
            np.testing.assert_allclose(poly.coeffs, ref, rtol=1e-8, atol=1e-10)

    def test_matches_normal_equations_raw_basis(self):
        u = np.array([1.0, 3, 4, 7, 9, 12, 13, 15])
        v = np.array([0.5, -1.0, 2.0, 0.3, 1.1, -0.4, 0.9, 2.2])
        poly = noise.fit_bias_polynomial(u, v, 3)
        ref = normal_equation_fit(u, v, 3)
        np.testing.assert_allclose(poly(u), np.polynomial.polynomial.polyval(u, ref), rtol=1e-7)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.integers(10, 300))
    def test_exact_polynomials_are_reproduced(self, coeffs, l):
        idx = noise.control_indices(l, 10, 5).astype(float)
        x = (idx - idx.mean()) / 50.0
        v = np.polynomial.polynomial.polyval(x, coeffs)
        poly = noise.fit_bias_polynomial(idx, v, 5)
        np.testing.assert_allclose(poly(idx), v, atol=1e-8)

    def test_degree_zero_is_mean(self):
        v = np.array([1.0, 2.0, 6.0])
        poly = noise.fit_bias_polynomial([1, 5, 9], v, 0)
        np.testing.assert_allclose(poly(np.arange(1, 10)), 3.0)

    def test_errors(self):
        with pytest.raises(DegreeTooHigh):
            noise.fit_bias_polynomial([1, 2, 3], [0, 0, 0], 3)
        with pytest.raises(DuplicateIndices):
            noise.fit_bias_polynomial([1, 2, 2, 4], [0, 0, 0, 0], 1)
        with pytest.raises(DegreeTooHigh):
            noise.CemParams(0, 1, l_sub=4, degree_p=5)


class TestBias:
    def test_zero_sigma_is_constant(self, rng):
        b = noise.generate_bias(100, noise.CemParams(2.5, 0.0), rng)
        np.testing.assert_allclose(b, 2.5)

    def test_variance_matches_monte_carlo(self):
        rng = np.random.default_rng(7)
        p = noise.CemParams(0.0, 2.0, l_sub=16)
        draws = np.stack([noise.generate_bias(400, p, rng) for _ in range(4000)])
        exact = noise.bias_variance(400, 16, 5, 2.0)
        se = exact * np.sqrt(2 / 3999)
        z = np.abs(draws.var(axis=0, ddof=1) - exact) / se
        assert np.mean(z <= 3) > 0.95

    def test_variance_is_not_uniform(self):
        v = noise.bias_variance(400, 16, 5, 2.0)
        assert v.max() / v.min() > 1.2
        # largest at the two ends of the open contour
        assert np.argmax(v) in (0, 399)

    def test_variance_at_control_points_is_hat_diagonal(self):
        # at the control points the fitted value's variance is sigma^2 times the leverage
        idx = noise.control_indices(200, 12, 5)
        x = (idx - idx.mean()) / (0.5 * (idx.max() - idx.min()))
        vm = np.polynomial.polynomial.polyvander(x, 5)
        hat = vm @ np.linalg.solve(vm.T @ vm, vm.T)
        v = noise.bias_variance(200, 12, 5, 1.5)
        np.testing.assert_allclose(v[idx - 1], 1.5**2 * np.diag(hat), rtol=1e-9)


class TestApplyCem:
    def test_identity(self, rng):
        m = disk(64, 12)
        res = noise.apply_cem(m, noise.CemParams(0.0, 0.0), rng)
        assert geometry.jaccard(res.noisy_mask, m) == 1.0
        assert not res.noise_map.any()

    def test_constant_dilation(self, rng):
        m = disk(64, 12)
        res = noise.apply_cem(m, noise.CemParams(4.0, 0.0), rng)
        assert res.noisy_mask.sum() > m.sum()
        (c,) = geometry.trace_contours(res.noisy_mask)
        d = geometry.signed_distance(m)[tuple(c.points.T)]
        assert abs(d.mean() - 4.0) < 1.0

    def test_constant_erosion(self, rng):
        m = disk(64, 12)
        res = noise.apply_cem(m, noise.CemParams(-4.0, 0.0), rng)
        assert res.noisy_mask.sum() < m.sum()
        assert not (res.noisy_mask & ~m).any()

    def test_annihilation(self, rng):
        m = disk(32, 8)
        res = noise.apply_cem(m, noise.CemParams(-20.0, 0.0), rng)
        assert not res.noisy_mask.any()
        assert res.dropped == 1

    def test_noise_map_is_xor(self, rng):
        m = disk(64, 12)
        for mu in (-3.0, 0.0, 3.0):
            res = noise.apply_cem(m, noise.CemParams(mu, 2.0), rng)
            np.testing.assert_array_equal(res.noise_map, m ^ res.noisy_mask)

    def test_small_components_copied(self, rng):
        m = disk(64, 12)
        m[2:4, 2:4] = True
        res = noise.apply_cem(m, noise.CemParams(3.0, 1.0), rng)
        assert res.noisy_mask[2:4, 2:4].all()
        assert res.untouched == 1

    def test_empty_mask(self, rng):
        res = noise.apply_cem(np.zeros((16, 16), bool), noise.CemParams(3.0, 1.0), rng)
        assert not res.noisy_mask.any()

    def test_deterministic(self):
        m = disk(64, 12)
        a = noise.apply_cem(m, noise.CemParams(1.0, 2.0), np.random.default_rng(3))
        b = noise.apply_cem(m, noise.CemParams(1.0, 2.0), np.random.default_rng(3))
        np.testing.assert_array_equal(a.noisy_mask, b.noisy_mask)


class TestHetero:
    def test_validation(self):
        with pytest.raises(ValueError):
            noise.HeteroNoiseParams(5, 1, 2, 0.5)
        with pytest.raises(ValueError):
            noise.HeteroNoiseParams(5, -5, 0, 0.5)
        with pytest.raises(ValueError):
            noise.HeteroNoiseParams(5, -5, 2, 1.5)

    def test_ranges(self, rng):
        h = noise.HeteroNoiseParams(8, -5, 2, 0.3)
        cems = noise.assign_client_cems(2000, h, rng)
        mu = np.array([c.mu for c in cems])
        sigma = np.array([c.sigma for c in cems])
        assert mu.min() >= -5 and mu.max() <= 8
        assert sigma.min() >= 1 and sigma.max() <= 2
        assert abs(np.mean(mu > 0) - 0.3) < 0.05

    def test_all_positive(self, rng):
        cems = noise.assign_client_cems(50, noise.HeteroNoiseParams(8, -5, 2, 1.0), rng)
        assert all(c.mu >= 0 for c in cems)


class TestPdn:
    def test_sigma_zero_condition2_not_applicable(self, rng):
        rep = noise.verify_pdn(noise.CemParams(3.0, 0.0), disk(64, 12), 100, 6.0, rng)
        assert rep.condition2 is None
        assert rep.condition1

    def test_no_noise(self, rng):
        rep = noise.verify_pdn(noise.CemParams(0.0, 0.0), disk(64, 12), 100, 6.0, rng)
        assert rep.no_noise and not rep.condition1

    def test_too_few_trials(self, rng):
        with pytest.raises(ValueError):
            noise.verify_pdn(noise.CemParams(3.0, 1.5), disk(64, 12), 99, 6.0, rng)

    def test_noise_concentrates_near_contour(self, rng):
        rep = noise.verify_pdn(noise.CemParams(3.0, 1.5), disk(64, 12), 100, 6.0, rng)
        assert rep.condition1 and rep.condition2
        assert rep.rate_ratio > 10
