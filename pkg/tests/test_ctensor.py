import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from complexiris import fft
from complexiris.ctensor import ComplexTensor, c_abs, c_add, c_arg, c_mul, c_sub, fft2, ifft2
from conftest import rand_ct


def ct(z):
    return ComplexTensor.from_complex(np.asarray(z, complex))


def test_mul_by_i_rotates():
    out = c_mul(ct([1 + 0j]), ct([1j]))
    assert out.to_complex()[0] == 1j


def test_add_componentwise():
    assert c_add(ct([3 + 4j]), ct([1 - 2j])).to_complex()[0] == 4 + 2j
    assert c_sub(ct([3 + 4j]), ct([1 - 2j])).to_complex()[0] == 2 + 6j


def test_mul_matches_scalar_loop(rng):
    a, b = rand_ct(rng, 2, 2), rand_ct(rng, 2, 2)
    out = c_mul(a, b).to_complex()
    za, zb = a.to_complex(), b.to_complex()
    for i in range(2):
        for j in range(2):
            x1, y1 = za[i, j].real, za[i, j].imag
            x2, y2 = zb[i, j].real, zb[i, j].imag
            assert abs(out[i, j] - complex(x1 * x2 - y1 * y2, x1 * y2 + y1 * x2)) < 1e-12


def test_shape_mismatch_names_both_shapes(rng):
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(3, 2\)"):
        c_add(rand_ct(rng, 2, 3), rand_ct(rng, 3, 2))


def test_scalar_broadcast(rng):
    a = rand_ct(rng, 3)
    assert np.allclose((a * 2).re, 2 * a.re)
    assert np.allclose(c_mul(a, 1j).to_complex(), 1j * a.to_complex())


def test_plane_shape_mismatch():
    with pytest.raises(ValueError):
        ComplexTensor(np.zeros(3), np.zeros(4))


def test_abs_and_arg():
    assert c_abs(ct([3 + 4j]))[0] == 5
    assert c_arg(ct([1j]))[0] == pytest.approx(np.pi / 2)
    assert c_arg(ct([-1 - 1j]))[0] == pytest.approx(-3 * np.pi / 4)
    assert c_arg(ct([0j]))[0] == 0
    # the negative real axis maps to +pi even with a negative-zero imaginary part
    assert c_arg(ComplexTensor(np.array([-1.0]), np.array([-0.0])))[0] == pytest.approx(np.pi)


def test_fft_constant_and_impulse():
    c = 0.7 - 0.2j
    f = fft2(ct(np.full((4, 4), c))).to_complex()
    expect = np.zeros((4, 4), complex)
    expect[0, 0] = 16 * c
    assert np.allclose(f, expect, atol=1e-12)
    imp = np.zeros((4, 4), complex)
    imp[0, 0] = 1
    assert np.allclose(fft2(ct(imp)).to_complex(), 1)


def test_fft_matches_direct_dft_and_roundtrips(rng):
    a = rand_ct(rng, 5, 7)
    z = a.to_complex()
    direct = fft.dft_direct(fft.dft_direct(z, 0), 1)
    assert np.allclose(fft2(a).to_complex(), direct, atol=1e-10)
    back = ifft2(fft2(a))
    assert np.abs(back.to_complex() - z).max() / np.abs(z).max() < 1e-10


def test_fft_roundtrip_float32(rng):
    a = rand_ct(rng, 6, 10).astype(32)
    back = ifft2(fft2(a))
    assert back.dtype == np.float32
    assert np.abs(back.to_complex() - a.to_complex()).max() / np.abs(a.to_complex()).max() < 1e-6


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 12, 96, 127, 257, 1000])
def test_fft_1d_against_numpy(n, rng):
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert np.allclose(fft.fft(z), np.fft.fft(z), atol=1e-9 * max(1, n))
    assert np.allclose(fft.ifft(fft.fft(z)), z, atol=1e-12 * max(1, n))


def test_fft_zero_axis_rejected():
    with pytest.raises(ValueError):
        fft.fft(np.zeros(0, complex))


def test_fft_feature_map_axes(rng):
    a = rand_ct(rng, 2, 4, 6, 3)
    ref = np.fft.fft2(a.to_complex(), axes=(1, 2))
    assert np.allclose(fft2(a).to_complex(), ref, atol=1e-10)


finite = st.floats(-100, 100, allow_nan=False, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite),
       arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite),
       arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite))
def test_distributive_and_abs_multiplicative(ar, ai, br, bi, cr, ci):
    a, b, c = ComplexTensor(ar, ai), ComplexTensor(br, bi), ComplexTensor(cr, ci)
    lhs = c_mul(a, c_add(b, c)).to_complex()
    rhs = c_add(c_mul(a, b), c_mul(a, c)).to_complex()
    scale = (np.abs(a.to_complex()) * (np.abs(b.to_complex()) + np.abs(c.to_complex()))).max() + 1
    assert np.abs(lhs - rhs).max() <= 8 * np.finfo(float).eps * scale * 4
    assert np.allclose(c_abs(c_mul(a, b)), c_abs(a) * c_abs(b), rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_fft_linearity_and_parseval(h, w, alpha, beta, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_ct(rng, h, w), rand_ct(rng, h, w)
    lhs = fft2(a * alpha + b * beta).to_complex()
    rhs = alpha * fft2(a).to_complex() + beta * fft2(b).to_complex()
    assert np.allclose(lhs, rhs, atol=1e-9)
    energy = (np.abs(a.to_complex()) ** 2).sum()
    assert np.isclose(energy, (np.abs(fft2(a).to_complex()) ** 2).sum() / (h * w), rtol=1e-10)
