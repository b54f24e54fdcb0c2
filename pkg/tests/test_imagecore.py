import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image as PILImage

import oracles
from gramsr.imagecore import (ImageFormatError, blur, blur_adjoint, crop_to_multiple, default_sigma,
                              downsample, downsample_adjoint, identity_kernel, load_image,
                              make_gaussian_kernel, quantize, save_image, upsample_bicubic)


# ---------------------------------------------------------------- file I/O

def test_white_pgm_loads_as_ones(tmp_path):
    p = tmp_path / "white.pgm"
    p.write_bytes(b"P5\n5 4\n255\n" + bytes([255]) * 20)
    img = load_image(p)
    assert img.shape == (4, 5)
    assert np.all(img == 1.0)


def test_red_png_loads_as_luma(tmp_path):
    p = tmp_path / "red.png"
    PILImage.fromarray(np.full((6, 7, 3), (255, 0, 0), np.uint8), "RGB").save(p)
    np.testing.assert_allclose(load_image(p), 0.299, atol=1 / 255)


def test_rgba_and_palette_are_converted(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, (5, 5, 3)).astype(np.uint8)
    PILImage.fromarray(arr, "RGB").convert("RGBA").save(tmp_path / "a.png")
    want = (0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]) / 255
    np.testing.assert_allclose(load_image(tmp_path / "a.png"), want, atol=1e-12)


@pytest.mark.parametrize("suffix", [".png", ".pgm"])
def test_save_load_round_trip(tmp_path, rng, suffix):
    img = rng.random((13, 17))
    save_image(img, tmp_path / f"r{suffix}")
    back = load_image(tmp_path / f"r{suffix}")
    assert np.max(np.abs(back - img)) <= 1 / 255


def test_save_rounds_half_up_and_clamps(tmp_path):
    save_image(np.full((3, 3), 0.5), tmp_path / "h.png")
    assert np.all(np.asarray(PILImage.open(tmp_path / "h.png")) == 128)
    save_image(np.array([[1.7, -0.3]]), tmp_path / "c.pgm")
    assert np.asarray(PILImage.open(tmp_path / "c.pgm")).tolist() == [[255, 0]]


def test_quantize_codes():
    assert quantize(np.array([[0.0, 1 / 255, 0.5, 1.0]])).tolist() == [[0, 1, 128, 255]]


def test_sixteen_bit_rejected(tmp_path):
    p = tmp_path / "deep.png"
    PILImage.fromarray(np.full((4, 4), 40000, np.uint16)).save(p)
    with pytest.raises(ImageFormatError, match="bit depth"):
        load_image(p)


def test_unreadable_file(tmp_path):
    p = tmp_path / "junk.png"
    p.write_bytes(b"not an image")
    with pytest.raises(ImageFormatError):
        load_image(p)
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "missing.png")


def test_unsupported_extension(tmp_path):
    with pytest.raises(ImageFormatError):
        save_image(np.zeros((2, 2)), tmp_path / "x.jpg")


# ---------------------------------------------------------------- kernel

def test_kernel_sigma_half():
    k = make_gaussian_kernel(0.5)
    assert k.radius == 2
    assert k.taps[2, 2] == k.taps.max()


@given(st.floats(0.1, 4.0))
@settings(max_examples=30, deadline=None)
def test_kernel_normalized_and_symmetric(sigma):
    k = make_gaussian_kernel(sigma)
    assert abs(k.taps.sum() - 1) < 1e-6
    np.testing.assert_array_equal(k.taps, k.taps[::-1, ::-1])
    assert k.radius == int(np.ceil(3 * sigma))


def test_kernel_matches_direct_table():
    np.testing.assert_allclose(make_gaussian_kernel(1.0).taps, oracles.gaussian_table(1.0), atol=1e-9, rtol=0)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_kernel_rejects_nonpositive_sigma(sigma):
    with pytest.raises(ValueError):
        make_gaussian_kernel(sigma)


def test_default_sigma():
    assert default_sigma(3) == 1.5


# ---------------------------------------------------------------- blur

def test_blur_constant():
    out = blur(np.full((10, 12), 0.37), make_gaussian_kernel(1.3))
    np.testing.assert_allclose(out, 0.37, atol=1e-6)


def test_blur_impulse_response():
    k = make_gaussian_kernel(1.0)
    img = np.zeros((21, 21))
    img[10, 10] = 1.0
    r = k.radius
    np.testing.assert_allclose(blur(img, k)[10 - r:11 + r, 10 - r:11 + r], k.taps[::-1, ::-1], atol=1e-15)


def test_blur_matches_loop_oracle(rng):
    img = rng.random((9, 9))
    k = make_gaussian_kernel(1.0)
    np.testing.assert_allclose(blur(img, k), oracles.blur(img, k.taps), atol=1e-6)


def test_blur_radius_too_large():
    with pytest.raises(ValueError):
        blur(np.zeros((3, 3)), make_gaussian_kernel(1.0))


@given(st.integers(0, 10_000), st.sampled_from([0.5, 1.0, 1.5]))
@settings(max_examples=25, deadline=None)
def test_blur_preserves_mean_with_flat_border(seed, sigma):
    # Under whole-sample reflection only the outer radius+1 pixels carry
    # uneven weight, so the mean is preserved once that band is flat.
    k = make_gaussian_kernel(sigma)
    r = k.radius + 1
    rng = np.random.default_rng(seed)
    n = 4 * k.radius + 2
    img = np.full((n, n + 3), rng.random())
    img[r:-r, r:-r] = rng.random((n - 2 * r, n + 3 - 2 * r))
    assert abs(blur(img, k).mean() - img.mean()) < 1e-4


# ---------------------------------------------------------------- downsample

def test_downsample_identity():
    img = np.random.default_rng(1).random((7, 5))
    np.testing.assert_array_equal(downsample(img, 1, identity_kernel()), img)


@pytest.mark.parametrize("f,sigma", [(2, 0.8), (3, 1.5), (3, 0.5)])
def test_downsample_constant(f, sigma):
    out = downsample(np.full((6 * f, 4 * f), 0.8), f, make_gaussian_kernel(sigma))
    assert out.shape == (6, 4)
    np.testing.assert_allclose(out, 0.8, atol=1e-12)


def test_downsample_matches_oracle(rng):
    img = rng.random((6, 6))
    k = make_gaussian_kernel(0.8)
    np.testing.assert_allclose(downsample(img, 2, k), oracles.downsample(img, 2, k.taps), atol=1e-6)


def test_downsample_errors():
    k = make_gaussian_kernel(0.5)
    with pytest.raises(ValueError):
        downsample(np.zeros((6, 6)), 0, k)
    with pytest.raises(ValueError):
        downsample(np.zeros((7, 6)), 2, k)


def _dense(fun, n_in_shape):
    cols = []
    for i in range(int(np.prod(n_in_shape))):
        e = np.zeros(int(np.prod(n_in_shape)))
        e[i] = 1
        cols.append(fun(e.reshape(n_in_shape)).ravel())
    return np.array(cols).T


@pytest.mark.parametrize("f", [1, 2, 3])
def test_adjoint_equals_dense_transpose(f, rng):
    k = make_gaussian_kernel(default_sigma(f)) if f > 1 else identity_kernel()
    n = 8 * f
    a = _dense(lambda z: downsample(z, f, k), (n, n))
    at = _dense(lambda y: downsample_adjoint(y, f, k, n, n), (8, 8))
    np.testing.assert_allclose(at, a.T, atol=1e-12)
    for _ in range(100):
        x, y = rng.standard_normal((n, n)), rng.standard_normal((8, 8))
        lhs = np.sum(downsample(x, f, k) * y)
        rhs = np.sum(x * downsample_adjoint(y, f, k, n, n))
        assert abs(lhs - rhs) <= 1e-5 * max(abs(lhs), abs(rhs), 1e-12)


def test_blur_adjoint_dense(rng):
    k = make_gaussian_kernel(1.2)
    a = _dense(lambda z: blur(z, k), (9, 11))
    at = _dense(lambda z: blur_adjoint(z, k), (9, 11))
    np.testing.assert_allclose(at, a.T, atol=1e-14)


def test_adjoint_trivial_cases():
    y = np.random.default_rng(2).random((5, 5))
    np.testing.assert_array_equal(downsample_adjoint(y, 1, identity_kernel(), 5, 5), y)
    k = make_gaussian_kernel(1.5)
    assert not downsample_adjoint(np.zeros((4, 4)), 3, k, 12, 12).any()
    with pytest.raises(ValueError):
        downsample_adjoint(np.zeros((4, 5)), 3, k, 12, 12)


def test_crop_to_multiple():
    assert crop_to_multiple(np.zeros((98, 100)), 3).shape == (96, 99)


# ---------------------------------------------------------------- bicubic

def test_bicubic_identity_and_constant():
    img = np.random.default_rng(3).random((5, 6))
    np.testing.assert_array_equal(upsample_bicubic(img, 1), img)
    np.testing.assert_allclose(upsample_bicubic(np.full((5, 6), 0.3), 4), 0.3, atol=1e-12)
    with pytest.raises(ValueError):
        upsample_bicubic(img, 0)


@pytest.mark.parametrize("f", [2, 3, 4])
def test_bicubic_ramp(f):
    h, w = 8, 10
    yy, xx = np.mgrid[0:h, 0:w]
    ramp = 0.05 * yy + 0.03 * xx
    up = upsample_bicubic(ramp, f)
    assert up.shape == (h * f, w * f)
    # HR pixel j sits at LR coordinate (j + 0.5) / f - 0.5
    sy = (np.arange(h * f) + 0.5) / f - 0.5
    sx = (np.arange(w * f) + 0.5) / f - 0.5
    exact = 0.05 * sy[:, None] + 0.03 * sx[None, :]
    interior = (slice(2 * f, -2 * f), slice(2 * f, -2 * f))
    np.testing.assert_allclose(up[interior], exact[interior], atol=1e-3)
    if f % 2:
        c = (f - 1) // 2
        np.testing.assert_allclose(up[c::f, c::f], ramp, atol=1e-3)
