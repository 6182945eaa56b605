import cmath

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqfuse import spectral as S
from freqfuse import tensor as T
from freqfuse.spectral import Spectrum
from freqfuse.tensor import Graph, ShapeError, Tensor


def naive_dft2(x, inverse=False):
    """Plain double loop over output bins, each a double sum."""
    h, w = x.shape
    sign = 1 if inverse else -1
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for a in range(h):
                for b in range(w):
                    acc += x[a, b] * cmath.exp(sign * 2j * cmath.pi * (u * a / h + v * b / w))
            out[u, v] = acc
    return out


def test_frozen_small_spectrum():
    # frozen from the double-loop oracle
    x = np.array([[1, 2, 0, -1], [3, 0, 1, 2]], dtype=float).reshape(1, 1, 2, 4)
    expected = np.array([[8, 3 - 1j, 2, 3 + 1j], [-4, -1 - 5j, -2, -1 + 5j]])
    np.testing.assert_allclose(S.fft2(Tensor(x)).z[0, 0], expected, atol=1e-12)


def test_constant_and_impulse():
    k = 1.7
    s = S.fft2(T.full((1, 1, 4, 4), k)).z[0, 0]
    assert abs(s[0, 0] - 16 * k) < 1e-12
    s[0, 0] = 0
    assert np.abs(s).max() < 1e-12
    imp = np.zeros((1, 1, 4, 8))
    imp[0, 0, 0, 0] = 1
    np.testing.assert_allclose(S.fft2(Tensor(imp)).z, np.ones((1, 1, 4, 8)), atol=1e-15)


def test_inverse_of_all_ones_is_impulse():
    out = S.ifft2(Spectrum(np.ones((1, 1, 8, 4), dtype=complex))).data[0, 0]
    expected = np.zeros((8, 4))
    expected[0, 0] = 1
    np.testing.assert_allclose(out, expected, atol=1e-15)


@pytest.mark.parametrize("h,w", [(1, 1), (2, 4), (8, 8), (4, 16), (16, 16)])
def test_matches_double_loop(h, w, rng):
    x = rng.standard_normal((h, w))
    np.testing.assert_allclose(S.fft2(Tensor(x[None, None])).z[0, 0], naive_dft2(x), rtol=0, atol=1e-10)
    z = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    got = S.ifft2_complex(Spectrum(z[None, None])).z[0, 0]
    np.testing.assert_allclose(got, naive_dft2(z, inverse=True) / (h * w), rtol=0, atol=1e-10)


def test_non_power_of_two_rejected_with_hint():
    with pytest.raises(ShapeError, match="pad"):
        S.fft2(T.zeros((1, 1, 6, 8)))
    with pytest.raises(ShapeError):
        S.ifft2(Spectrum(np.zeros((1, 1, 8, 12))))


@pytest.mark.parametrize("size", [1, 2, 4, 8, 16, 32, 64])
def test_roundtrip(size, rng):
    x = rng.standard_normal((2, 2, size, size))
    s = S.fft2(Tensor(x))
    assert np.abs(S.ifft2(s).data - x).max() < 1e-10
    assert np.abs(S.ifft2_complex(s).z - x).max() < 1e-10


pow2 = st.sampled_from([1, 2, 4, 8, 16])


@given(pow2, pow2, st.integers(0, 2 ** 32 - 1))
def test_parseval_linearity_symmetry(h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, h, w))
    y = rng.standard_normal((1, 2, h, w))
    sx = S.fft2(Tensor(x)).z
    energy = np.sum(x * x)
    assert abs(np.sum(np.abs(sx) ** 2) / (h * w) - energy) <= 1e-9 * energy
    a, b = 1.3, -0.4
    lin = S.fft2(Tensor(a * x + b * y)).z
    assert np.abs(lin - (a * sx + b * S.fft2(Tensor(y)).z)).max() < 1e-10
    uu = (-np.arange(h)) % h
    vv = (-np.arange(w)) % w
    mirrored = np.conj(sx[:, :, uu][:, :, :, vv])
    assert np.abs(sx - mirrored).max() < 1e-10


@given(pow2, pow2, st.integers(0, 2 ** 32 - 1))
def test_backward_is_the_adjoint(h, w, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 1, h, w)), requires_grad=True)
    y = rng.standard_normal((1, 1, h, w)) + 1j * rng.standard_normal((1, 1, h, w))
    with Graph() as g:
        s = S.fft2(x)
        loss = T.add(T.sum(T.mul(S.real(s), T.constant(y.real))), T.sum(T.mul(S.imag(s), T.constant(y.imag))))
    g.backward(loss)
    lhs = float(np.real(np.vdot(y, s.z)))  # Re<fft2(x), y>
    rhs = float(np.sum(x.data * x.grad))  # <x, adjoint(y)>
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_cmul_identities(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    s = S.fft2(Tensor(x))
    assert np.array_equal(S.cmul(s, T.full((1, 2, 4, 4), 1.0)).z, s.z)
    assert np.array_equal(S.cmul(s, T.full((1, 2, 1, 1), 1.0)).z, s.z)
    doubled = S.ifft2(S.cmul(s, T.full((1, 2, 1, 1), 2.0))).data
    np.testing.assert_allclose(doubled, 2 * x, atol=1e-12)
    with pytest.raises(ShapeError):
        S.cmul(s, T.full((1, 2, 2, 2), 1.0))


def test_cmul_spec_conjugate_product():
    a = Spectrum(np.full((1, 1, 2, 2), 1 + 1j))
    b = Spectrum(np.full((1, 1, 2, 2), 1 - 1j))
    assert np.array_equal(S.cmul_spec(a, b).z, np.full((1, 1, 2, 2), 2 + 0j))
    with pytest.raises(ShapeError):
        S.cmul_spec(a, Spectrum(np.ones((1, 1, 2, 4))))


def test_magnitude_values_and_singular_point():
    s = Spectrum(np.array([3 + 4j, 0j]).reshape(1, 1, 1, 2), requires_grad=True)
    with Graph() as g:
        m = S.magnitude(s)
        loss = T.sum(m)
    assert np.array_equal(m.data.ravel(), [5.0, 0.0])
    g.backward(loss)
    np.testing.assert_allclose(s.grad.ravel(), [0.6 + 0.8j, 0], atol=1e-15)


def test_spectrum_parts():
    s = Spectrum.from_parts(np.ones((1, 1, 1, 2)), np.full((1, 1, 1, 2), -2.0))
    assert np.array_equal(s.re, np.ones((1, 1, 1, 2)))
    assert np.array_equal(s.im, np.full((1, 1, 1, 2), -2.0))
    assert s.shape == (1, 1, 1, 2)
