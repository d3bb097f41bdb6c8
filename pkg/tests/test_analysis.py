import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lecho.analysis import (
    FitError,
    FitResult,
    abragam,
    abragam_jac,
    fit_abragam,
    fit_linear_rate,
    fit_logistic,
    fit_rate_relation,
    half_height_time,
    least_squares,
    logistic,
    logistic_jac,
    sqrt_rate,
    sqrt_rate_jac,
)
from lecho.protocols import EchoCurve


def fd_jac(f, t, p, h=1e-7):
    cols = []
    for i in range(len(p)):
        up, dn = list(p), list(p)
        step = h * max(1.0, abs(p[i]))
        up[i] += step
        dn[i] -= step
        cols.append((f(t, *up) - f(t, *dn)) / (2 * step))
    return np.column_stack(cols)


class TestJacobians:
    def test_abragam(self):
        t = np.linspace(0, 3e-4, 40)
        p = [1.3e4, 9e3]
        assert np.allclose(abragam_jac(t, *p), fd_jac(abragam, t, p), rtol=1e-5, atol=1e-10)

    def test_logistic(self):
        t = np.linspace(0, 1e-3, 40)
        p = [1.1, 8e3, 4e-4]
        assert np.allclose(logistic_jac(t, *p), fd_jac(logistic, t, p), rtol=1e-5, atol=1e-8)

    def test_sqrt_rate(self):
        x = np.linspace(0, 2, 10)
        assert np.allclose(sqrt_rate_jac(x, 0.03), fd_jac(sqrt_rate, x, [0.03], 1e-9), rtol=1e-5)


class TestLeastSquares:
    def test_constant_model_gives_mean(self):
        y = np.array([1.0, 2.0, 4.0, 5.0])
        fit = least_squares(lambda x, c: np.full_like(x, c), np.arange(4.0), y, [0.0], names=["c"])
        assert fit["c"] == pytest.approx(3.0, rel=1e-12)
        assert fit.converged

    def test_too_few_points(self):
        with pytest.raises(ValueError, match="cannot determine"):
            least_squares(logistic, [0.0, 1.0], [1.0, 0.5], [1, 1, 1])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            least_squares(lambda x, c: x * c, [0.0, np.nan], [1.0, 0.5], [1.0])

    def test_names_mismatch(self):
        with pytest.raises(ValueError):
            least_squares(lambda x, c: x * c, [0.0, 1.0], [1.0, 0.5], [1.0], names=["a", "b"])

    def test_parameter_independent_model(self):
        with pytest.raises(FitError):
            least_squares(lambda x, c: np.ones_like(x), [0.0, 1.0, 2.0], [1.0, 1.0, 2.0], [1.0])

    def test_dict_roundtrip(self):
        t = np.linspace(0, 1e-3, 30)
        fit = fit_logistic((t, logistic(t, 1.0, 1e4, 5e-4)))
        assert FitResult.from_dict(fit.to_dict()) == fit


class TestHalfHeight:
    def test_linear(self):
        assert half_height_time(([0, 1, 2], [1.0, 0.6, 0.2])) == pytest.approx(1.25)

    def test_exact_sample(self):
        assert half_height_time(([0, 1, 2], [2.0, 1.0, 0.5])) == 1.0

    def test_never_reached(self):
        assert half_height_time(([0, 1, 2], [1.0, 0.9, 0.8])) is None
        assert half_height_time(([0.0], [1.0])) is None

    def test_skips_invalid(self):
        c = EchoCurve([0, 1, 2, 3], [1.0, np.nan, 0.4, 0.1], valid=np.array([True, False, True, True]))
        assert half_height_time(c) == pytest.approx(2 - 0.1 / 0.6 * 2)

    @given(st.floats(1e-7, 1e3))
    def test_time_scaling(self, c):
        t = np.linspace(0, 5, 41)
        v = np.exp(-t)
        assert half_height_time((c * t, v)) == pytest.approx(c * half_height_time((t, v)), rel=1e-12)


class TestAbragam:
    def test_roundtrip(self):
        t = np.linspace(0, 3e-4, 80)
        fit = fit_abragam((t, abragam(t, 1.2e4, 8e3)))
        assert fit.converged
        assert fit["w"] == pytest.approx(1.2e4, rel=1e-8)
        assert fit["h"] == pytest.approx(8e3, rel=1e-8)
        assert fit["T2"] == pytest.approx(1 / math.sqrt(8e3**2 + 1.2e4**2 / 3), rel=1e-8)

    def test_pure_gaussian(self):
        t = np.linspace(0, 3e-4, 80)
        fit = fit_abragam((t, np.exp(-0.5 * (1e4 * t) ** 2)))
        assert fit["T2"] == pytest.approx(1e-4, rel=1e-4)

    def test_window_options(self):
        t = np.linspace(0, 4e-4, 81)
        v = abragam(t, 1e4, 8e3)
        assert fit_abragam((t, v), t_max=2e-4).converged
        short = fit_abragam((t, v), floor=0.5)
        assert short["T2"] == pytest.approx(fit_abragam((t, v))["T2"], rel=1e-6)

    def test_floor_truncation_keeps_first_point_below(self):
        # 0.4 is the first sample under half height, so the window ends at t = 3
        t = np.arange(6.0) * 1e-5
        v = np.array([1.0, 0.9, 0.6, 0.4, 0.35, 0.3])
        a = fit_abragam((t, v), floor=0.5)
        b = fit_abragam((t, v), t_max=3.5e-5)
        assert a.params == b.params


class TestLogistic:
    @pytest.mark.parametrize("c,lam,t3", [(1.0, 5e3, 4e-4), (1.0, 1e4, 5e-4), (1.2, 3e3, 8e-4), (0.9, 2e4, 2e-4)])
    def test_roundtrip(self, c, lam, t3):
        t = np.linspace(0, 2e-3, 101)
        fit = fit_logistic((t, logistic(t, c, lam, t3)))
        assert fit.converged
        assert fit["C"] == pytest.approx(c, rel=1e-8)
        assert fit["lambda"] == pytest.approx(lam, rel=1e-8)
        assert fit["T3"] == pytest.approx(t3, rel=1e-8)

    def test_half_height_reported(self):
        t = np.linspace(0, 2e-3, 101)
        v = logistic(t, 1.0, 1e4, 5e-4)
        fit = fit_logistic((t, v))
        # half of the first sample, not half of C
        expect = 5e-4 + math.log(2 / v[0] - 1) / 1e4
        assert fit.derived["half_height"] == pytest.approx(expect, rel=1e-3)

    def test_half_height_within_grid_step(self):
        # with lambda T3 >> 1 the first sample is C, so half height coincides with T3
        t = np.linspace(0, 2e-3, 201)
        fit = fit_logistic((t, logistic(t, 1.0, 5e4, 6e-4)))
        assert abs(fit.derived["half_height"] - fit["T3"]) < t[1] - t[0]

    def test_fixed_point(self):
        rng = np.random.default_rng(3)
        t = np.linspace(0, 2e-3, 101)
        first = fit_logistic((t, logistic(t, 1.0, 8e3, 6e-4) + 0.02 * rng.standard_normal(t.size)))
        again = fit_logistic((t, logistic(t, *first.params.values())))
        for name, v in first.params.items():
            assert again[name] == pytest.approx(v, rel=1e-8)

    @given(st.floats(0.1, 10.0))
    def test_time_rescaling(self, s):
        t = np.linspace(0, 2e-3, 101)
        v = logistic(t, 1.1, 6e3, 7e-4)
        base = fit_logistic((t, v))
        fit = fit_logistic((s * t, v))
        assert fit["T3"] == pytest.approx(s * base["T3"], rel=1e-6)
        assert fit["lambda"] == pytest.approx(base["lambda"] / s, rel=1e-6)

    def test_noise_uncertainties(self):
        rng = np.random.default_rng(0)
        t = np.linspace(0, 2e-3, 201)
        v = logistic(t, 1.0, 1e4, 5e-4) + 0.01 * rng.standard_normal(t.size)
        fit = fit_logistic((t, v))
        assert abs(fit["T3"] - 5e-4) < 4 * fit.stderr["T3"]
        assert abs(fit["lambda"] - 1e4) < 4 * fit.stderr["lambda"]
        assert 0 < fit.stderr["lambda"] < 1e3


class TestLinearRate:
    def test_exact_line(self):
        k = np.array([0.1, 0.2, 0.3, 0.4])
        fit = fit_linear_rate(k, 2e4 * k + 500)
        assert fit["slope"] == pytest.approx(2e4)
        assert fit["intercept"] == pytest.approx(500)

    def test_regions(self):
        k = np.array([-0.4, -0.2, 0.2, 0.4])
        rate = np.where(k > 0, 2e4 * k, -3e4 * k + 1e3)
        fit = fit_linear_rate(k, rate)
        assert fit.regions["positive"]["slope"] == pytest.approx(2e4)
        assert fit.regions["negative"]["slope"] == pytest.approx(-3e4)
        assert fit.regions["negative"]["intercept"] == pytest.approx(1e3)
        assert FitResult.from_dict(fit.to_dict()).regions["positive"]["slope"] == pytest.approx(2e4)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            fit_linear_rate([0.1, 0.1], [1.0, 2.0])
        with pytest.raises(ValueError):
            fit_linear_rate([0.1], [1.0])


class TestRateRelation:
    @given(st.floats(1e-4, 1.0))
    def test_roundtrip(self, a):
        x = np.linspace(0, 3, 15)
        fit = fit_rate_relation(x, np.sqrt(a + x * x))
        assert fit["A"] == pytest.approx(a, rel=1e-8)
        assert fit["sqrtA"] == pytest.approx(math.sqrt(a), rel=1e-8)

    def test_fixed_point(self):
        # at x = 0 the curve sits at sqrt(A)
        fit = fit_rate_relation([0.0, 0.0, 0.0], [0.2, 0.2, 0.2])
        assert fit["sqrtA"] == pytest.approx(0.2, rel=1e-10)

    @given(st.floats(1e-3, 0.5), st.floats(0, 5))
    def test_model_above_diagonal(self, a, x):
        assert sqrt_rate(x, a) >= x
        assert sqrt_rate(x, a) - x <= math.sqrt(a) + 1e-15

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_rate_relation([-1.0, 1.0], [1.0, 1.0])
        with pytest.raises(ValueError):
            fit_rate_relation([1.0], [1.0])
