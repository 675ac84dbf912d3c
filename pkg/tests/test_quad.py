import numpy as np
import pytest
from scipy.integrate import quad as scipy_quad
from scipy.stats import norm

from lvclab.errors import QuadratureError
from lvclab.quad import HermiteRule, IntegralResult, hermite_rule, integrate_y


def normal_moment(k: int) -> float:
    if k % 2 == 1:
        return 0.0
    out = 1.0
    for j in range(k - 1, 0, -2):
        out *= j
    return out


class TestHermiteRule:
    def test_order_one_is_the_mean(self):
        rule = hermite_rule(1)
        assert rule.nodes == pytest.approx([0.0], abs=1e-14)
        assert rule.weights == pytest.approx([1.0], abs=1e-14)

    def test_order_two_roots_of_t2_minus_1(self):
        rule = hermite_rule(2)
        assert np.allclose(np.sort(rule.nodes), [-1.0, 1.0], atol=1e-12)
        assert np.allclose(rule.weights, [0.5, 0.5], atol=1e-12)

    def test_fourth_moment_at_order_20(self):
        rule = hermite_rule(20)
        assert rule.integrate(lambda t: t ** 4) == pytest.approx(3.0, abs=1e-10)

    @pytest.mark.parametrize("n", [1, 2, 5, 40, 200])
    def test_weights_sum_to_one(self, n):
        rule = hermite_rule(n)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_moment_exactness_up_to_degree(self):
        n = 5
        rule = hermite_rule(n)
        for k in range(2 * n):
            got = rule.integrate(lambda t, k=k: t ** k)
            assert got == pytest.approx(normal_moment(k), abs=1e-10), f"moment {k}"

    @pytest.mark.parametrize("n", [0, -3, 201, 2.5])
    def test_rejects_out_of_range_order(self, n):
        with pytest.raises(ValueError):
            hermite_rule(n)

    def test_doubling_order_is_stable_on_smooth_integrands(self):
        f = lambda t: np.cos(0.7 * t) * np.exp(0.2 * t)
        a = hermite_rule(40).integrate(f)
        b = hermite_rule(80).integrate(f)
        assert abs(a - b) < 1e-9


class TestIntegrateY:
    def test_standard_normal_mass(self):
        res = integrate_y(lambda y: norm.pdf(y), -10, 10, tol=1e-10)
        assert res.value == pytest.approx(1.0, abs=1e-10)
        assert isinstance(res, IntegralResult)

    def test_shifted_mean(self):
        res = integrate_y(lambda y: y * norm.pdf(y, loc=2.0), -8, 12, tol=1e-10)
        assert res.value == pytest.approx(2.0, abs=1e-9)

    def test_gaussian_mixture_mass(self):
        def mix(y):
            return 0.3 * norm.pdf(y, -2, 0.5) + 0.7 * norm.pdf(y, 3, 2.0)

        res = integrate_y(mix, -12, 25, tol=1e-11)
        assert res.value == pytest.approx(1.0, abs=1e-10)

    def test_error_estimate_bounds_true_error(self):
        cases = [
            (lambda y: np.exp(-y), 0.0, 5.0, 1.0 - np.exp(-5.0)),
            (lambda y: np.sin(y), 0.0, np.pi, 2.0),
            (lambda y: y ** 6, -1.0, 1.0, 2.0 / 7.0),
            (lambda y: norm.pdf(y, 1, 0.05), -4.0, 6.0, 1.0),
            (lambda y: 1.0 / (1.0 + y * y), -3.0, 3.0, 2.0 * np.arctan(3.0)),
        ]
        for f, lo, hi, exact in cases:
            res = integrate_y(f, lo, hi, tol=1e-10)
            assert abs(res.value - exact) <= max(res.error, 1e-12) + 1e-12

    def test_agrees_with_scipy_quad(self):
        f = lambda y: np.exp(-0.5 * y * y) * np.cos(3.0 * y)
        ours = integrate_y(f, -8, 8, tol=1e-12).value
        ref = scipy_quad(lambda y: float(f(np.array([y]))[0]), -8, 8,
                         epsabs=1e-13, epsrel=1e-13)[0]
        assert ours == pytest.approx(ref, abs=1e-11)

    def test_vector_integrand(self):
        def f(y):
            return np.stack([norm.pdf(y), y * norm.pdf(y, 1.0)])

        res = integrate_y(f, -10, 12, tol=1e-10)
        assert res.value[0] == pytest.approx(1.0, abs=1e-9)
        assert res.value[1] == pytest.approx(1.0, abs=1e-9)

    def test_budget_exhaustion_carries_partial(self):
        # hundreds of oscillations per panel, tolerance out of reach
        f = lambda y: np.cos(500.0 * y)
        with pytest.raises(QuadratureError) as err:
            integrate_y(f, 0, 10, tol=1e-14, max_panels=16)
        assert err.value.partial is not None
        assert err.value.error_estimate is not None and err.value.error_estimate > 1e-14

    def test_rejects_bad_interval(self):
        with pytest.raises(ValueError):
            integrate_y(lambda y: y, 1.0, -1.0)
