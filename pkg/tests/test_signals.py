import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpvff.errors import InvalidInputError
from lpvff.signals import (
    SampledSignal,
    differentiate,
    double_integrate,
    integrate,
    read_csv,
    rms,
    write_csv,
)

T = 1e-3
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def sig(values, ts=T):
    return SampledSignal(np.asarray(values, dtype=float), ts)


class TestSampledSignal:
    def test_rejects_bad_period(self):
        for ts in (0.0, -1e-3, np.nan, np.inf):
            with pytest.raises(InvalidInputError):
                SampledSignal([1.0, 2.0], ts)

    def test_values_are_read_only_copies(self):
        raw = np.arange(4.0)
        s = sig(raw)
        raw[0] = 99
        assert s.values[0] == 0
        with pytest.raises(ValueError):
            s.values[0] = 1

    def test_arithmetic_requires_matching_grid(self):
        a = sig([1, 2, 3])
        with pytest.raises(InvalidInputError):
            a + sig([1, 2, 3], 2e-3)
        with pytest.raises(InvalidInputError):
            a - sig([1, 2])
        assert (2 * a - a + 1).values.tolist() == [2, 3, 4]
        assert (-a).values.tolist() == [-1, -2, -3]

    def test_time_axis(self):
        assert np.allclose(sig(np.zeros(4)).t, [0, 1e-3, 2e-3, 3e-3])


class TestDifferentiate:
    def test_ramp(self):
        k = np.arange(50)
        assert np.allclose(differentiate(sig(k * T)).values, 1.0, rtol=0, atol=1e-10)

    def test_constant(self):
        assert np.array_equal(differentiate(sig(np.full(10, 5.0))).values, np.zeros(10))

    def test_sine_against_analytic(self):
        t = np.arange(1000) * T
        d = differentiate(sig(np.sin(2 * np.pi * t))).values
        assert np.max(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * t))) <= 1e-4

    def test_quadratic_exact_including_ends(self):
        t = np.arange(7) * 0.1
        d = differentiate(sig(3 * t**2 - t, 0.1)).values
        assert np.allclose(d, 6 * t - 1, atol=1e-12)

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            differentiate(sig([1.0, 2.0]))


class TestIntegrate:
    def test_constant_gives_ramp(self):
        out = integrate(sig(np.ones(100)), 0.0).values
        assert np.allclose(out, np.arange(100) * T, rtol=0, atol=1e-15)

    def test_zero_with_initial(self):
        assert np.array_equal(integrate(sig(np.zeros(5)), 3.0).values, np.full(5, 3.0))

    def test_cosine_against_analytic(self):
        t = np.arange(2001) * T
        out = integrate(sig(np.cos(2 * np.pi * t)), 0.0).values
        assert np.max(np.abs(out - np.sin(2 * np.pi * t) / (2 * np.pi))) <= 1e-6

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            integrate(sig([1.0]))

    @given(arrays(float, st.integers(2, 40), elements=finite), arrays(float, 40, elements=finite), finite, finite)
    def test_linear(self, s1, pool, a, b):
        s2 = pool[: s1.size]
        lhs = integrate(sig(a * s1 + b * s2), 0.0).values
        rhs = a * integrate(sig(s1), 0.0).values + b * integrate(sig(s2), 0.0).values
        scale = max(1.0, np.max(np.abs(a * s1)) + np.max(np.abs(b * s2))) * s1.size * T
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * scale)


class TestDoubleIntegrate:
    def test_constant(self):
        out = double_integrate(sig(np.ones(1001))).values
        assert abs(out[1000] - 0.5) <= 1e-6
        assert np.allclose(out, (np.arange(1001) * T) ** 2 / 2, atol=1e-6)

    def test_zero(self):
        assert np.array_equal(double_integrate(sig(np.zeros(8))).values, np.zeros(8))

    @given(arrays(float, st.integers(2, 30), elements=finite))
    def test_is_integrate_twice(self, x):
        s = sig(x)
        assert double_integrate(s) == integrate(integrate(s, 0.0), 0.0)

    def test_round_trip_with_reference(self, bench_reference):
        bundle, _ = bench_reference
        recovered = double_integrate(bundle.ddr).values
        expected = bundle.r.values - bundle.r.values[0] - bundle.dr.values[0] * bundle.r.t
        assert np.max(np.abs(recovered - expected)) <= 1e-6


class TestRms:
    def test_examples(self):
        assert rms(sig(np.full(7, 2.0))) == 2.0
        assert rms(sig(np.zeros(7))) == 0.0
        assert rms(sig([3, -3, 3, -3])) == 3.0

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            rms(sig([]))

    @given(arrays(float, st.integers(1, 30), elements=finite))
    def test_zero_iff_all_zero(self, x):
        assert (rms(sig(x)) == 0.0) == bool(np.all(x == 0))


def test_derivative_of_integral_converges_second_order():
    def err(ts):
        t = np.arange(int(round(1.0 / ts)) + 1) * ts
        s = np.sin(3 * t) + t**2
        back = differentiate(integrate(sig(s, ts), 0.7)).values
        return np.max(np.abs(back[1:-1] - s[1:-1]))

    ratio = err(2e-3) / err(1e-3)
    assert 3.5 < ratio < 4.5


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(20), rng.standard_normal(20)
    path = tmp_path / "s.csv"
    write_csv(path, 1e-3, {"a": sig(a), "b": b})
    header = path.read_text().splitlines()[0]
    assert header == "t,a,b"
    back = read_csv(path)
    assert back["a"] == sig(a)
    assert np.array_equal(back["b"].values, b)
    assert back["a"].sample_period == 1e-3


def test_csv_rejects_ragged_columns(tmp_path):
    with pytest.raises(InvalidInputError):
        write_csv(tmp_path / "x.csv", T, {"a": np.zeros(3), "b": np.zeros(4)})
