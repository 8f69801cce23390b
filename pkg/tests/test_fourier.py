import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrecon.fourier import KSpaceGrid, forward_dft, inverse_dft
from oracles import dft2_centered

SIZES = [(8, 8), (15, 15), (64, 64), (6, 9)]


def test_impulse_has_flat_spectrum():
    x = np.zeros((8, 8))
    x[4, 4] = 1
    k = forward_dft(x).complex()
    np.testing.assert_allclose(np.abs(k), 1 / 8, atol=1e-15)


@pytest.mark.parametrize("shape", SIZES)
def test_constant_image(shape):
    h, w = shape
    k = forward_dft(np.full(shape, 0.7)).complex()
    expected = np.zeros(shape, complex)
    expected[h // 2, w // 2] = 0.7 * np.sqrt(h * w)
    np.testing.assert_allclose(k, expected, atol=1e-12)


@pytest.mark.parametrize("shape", [(8, 8), (7, 5), (15, 15)])
def test_matches_direct_sum(rng, shape):
    x = rng.normal(size=shape)
    np.testing.assert_allclose(forward_dft(x).complex(), dft2_centered(x), atol=1e-10, rtol=0)


@pytest.mark.parametrize("shape", SIZES)
def test_round_trip_and_parseval(rng, shape):
    x = rng.normal(size=shape)
    k = forward_dft(x)
    re, im = inverse_dft(k)
    assert np.max(np.abs(re.data - x)) < 1e-10
    assert np.max(np.abs(im.data)) < 1e-10
    assert abs(np.sum(x**2) - np.sum(k.re**2 + k.im**2)) < 1e-10 * max(1, np.sum(x**2))


@pytest.mark.parametrize("shape", SIZES)
def test_inverse_then_forward(rng, shape):
    k = KSpaceGrid(rng.normal(size=shape), rng.normal(size=shape))
    re, im = inverse_dft(k)
    back = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(re.data + 1j * im.data), norm="ortho"))
    np.testing.assert_allclose(back, k.complex(), atol=1e-10)


def test_zero_grid():
    re, im = inverse_dft(KSpaceGrid(np.zeros((5, 5)), np.zeros((5, 5))))
    assert not re.data.any() and not im.data.any()


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**31), n=st.integers(2, 16))
def test_linearity(a, b, seed, n):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, n, n))
    lhs = forward_dft(a * x + b * y).complex()
    rhs = a * forward_dft(x).complex() + b * forward_dft(y).complex()
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) * n, rtol=0)
    kx, ky = forward_dft(x), forward_dft(y)
    lin = inverse_dft(KSpaceGrid(a * kx.re + b * ky.re, a * kx.im + b * ky.im))[0].data
    np.testing.assert_allclose(lin, a * x + b * y, atol=1e-12 * (1 + abs(a) + abs(b)) * n)


@pytest.mark.parametrize("shape", [(8, 8), (15, 15), (64, 64), (9, 12)])
def test_even_symmetric_image_has_real_spectrum(rng, shape):
    h, w = shape
    x = rng.normal(size=shape)
    # symmetric about the centre pixel (h//2, w//2) under the centered layout
    iy = (2 * (h // 2) - np.arange(h)) % h
    ix = (2 * (w // 2) - np.arange(w)) % w
    x = x + x[np.ix_(iy, ix)]
    assert np.max(np.abs(forward_dft(x).im)) < 1e-10


def test_batch_axes(rng):
    x = rng.normal(size=(3, 1, 8, 8))
    k = forward_dft(x)
    for i in range(3):
        np.testing.assert_allclose(k.complex()[i, 0], forward_dft(x[i, 0]).complex(), atol=1e-14)


def test_grid_persistence(tmp_path, rng):
    k = KSpaceGrid(rng.normal(size=(4, 6)), rng.normal(size=(4, 6)))
    k.save(tmp_path / "k.mact")
    from macrecon import mact

    assert mact.load(tmp_path / "k.mact").shape == (2, 4, 6)
    back = KSpaceGrid.load(tmp_path / "k.mact")
    np.testing.assert_array_equal(back.re, k.re)
    np.testing.assert_array_equal(back.im, k.im)


def test_plane_shapes_must_agree():
    with pytest.raises(Exception):
        KSpaceGrid(np.zeros((2, 2)), np.zeros((3, 2)))
