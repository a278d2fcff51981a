import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nuclear_spde.hermite_space import SpectralBasis, seminorm
from nuclear_spde.semigroup import SpectralSemigroup

vec = arrays(np.float64, 8, elements=st.floats(-1e3, 1e3))
times = st.floats(0, 20)


@settings(max_examples=300)
@given(vec, times, times)
def test_semigroup_law(v, s, t):
    sg = SpectralSemigroup(SpectralBasis.hermite(8))
    lhs = sg.apply(s + t, v)
    rhs = sg.apply(s, sg.apply(t, v))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-300)


@settings(max_examples=300)
@given(vec, times, st.floats(-3, 3), st.floats(0, 1))
def test_exponential_bound(v, t, r, theta):
    sg = SpectralSemigroup(SpectralBasis.hermite(8), theta)
    scale = max(1.0, float(seminorm(sg.basis, r, v)))
    assert sg.exp_bound_margin(t, r, v) >= -1e-12 * scale


def test_identity_at_zero(sg8):
    v = np.arange(8.0)
    assert np.array_equal(sg8.apply(0.0, v), v)


def test_generator_is_derivative(sg8):
    v = np.linspace(-1, 1, 8)
    h = 1e-6
    fd = (sg8.apply(h, v) - v) / h
    np.testing.assert_allclose(fd, sg8.generator_apply(v), atol=1e-4)


def test_zero_spectrum_is_identity():
    sg = SpectralSemigroup(SpectralBasis(np.zeros(4)))
    v = np.array([1.0, -2.0, 3.0, 0.5])
    assert np.array_equal(sg.apply(7.0, v), v)


def test_array_times(sg8):
    m = sg8.multipliers(np.array([0.0, 1.0]))
    assert m.shape == (2, 8)
    np.testing.assert_allclose(m[1], np.exp(-(np.arange(1, 9) - 0.5)))


def test_rejects_negative_time_and_rate(sg8, basis8):
    with pytest.raises(ValueError):
        sg8.apply(-0.1, np.zeros(8))
    with pytest.raises(ValueError):
        SpectralSemigroup(basis8, -1.0)
