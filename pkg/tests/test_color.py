import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csci.color import (ChannelCombine, ColorHistConfig, ColorHistogram, HistMethod, Normalization,
                        color_vector, color_vector_gradient, combine_and_normalize, inverse_quadratic,
                        pixel_bin_histogram, rgbuv_gradient, rgbuv_histogram, uv_grid)
from oracles import pixbin_loop, rgbuv_loop

images = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3)),
                elements=st.floats(0, 255))
nonzero_images = images.filter(lambda a: a.max() > 0)


def test_pixbin_single_red_pixel():
    hist = pixel_bin_histogram(np.array([[[255, 0, 0]]]), 20)
    assert hist.values[7600] == 1
    assert hist.values.sum() == 1
    assert hist.values.shape == (8000,)


def test_pixbin_black_block():
    hist = pixel_bin_histogram(np.zeros((4, 4, 3)), 20)
    assert hist.values[0] == 16
    assert np.count_nonzero(hist.values) == 1


def test_pixbin_matches_loop():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (6, 7, 3))
    for h in (2, 5, 20):
        np.testing.assert_array_equal(pixel_bin_histogram(img, h).values, pixbin_loop(img, h))


def test_pixbin_errors():
    with pytest.raises(ValueError, match="empty input"):
        pixel_bin_histogram(np.zeros((0, 4, 3)), 8)
    with pytest.raises(ValueError):
        pixel_bin_histogram(np.zeros((2, 2, 3)), 1)


def test_rgbuv_matches_loop():
    rng = np.random.default_rng(0)
    cfg = ColorHistConfig(bins=8, tau=0.02)
    for _ in range(3):
        img = rng.uniform(0, 255, (8, 8, 3))
        ours = rgbuv_histogram(img, cfg).values
        np.testing.assert_allclose(ours, rgbuv_loop(img, 8, 0.02, 1e-6), rtol=0, atol=1e-12)


def test_rgbuv_grey_symmetric():
    cfg = ColorHistConfig(bins=9, tau=0.3)
    hist = rgbuv_histogram(np.full((3, 3, 3), 77.0), cfg).reshaped()
    mid = 4
    assert uv_grid(cfg)[mid] == 0.0
    for plane in hist:
        assert np.unravel_index(plane.argmax(), plane.shape) == (mid, mid)
        np.testing.assert_allclose(plane, plane[::-1, :], atol=1e-15)
        np.testing.assert_allclose(plane, plane[:, ::-1], atol=1e-15)
        np.testing.assert_allclose(plane, plane.T, atol=1e-15)


def test_rgbuv_zero_intensity():
    with pytest.raises(ValueError, match="zero intensity image"):
        rgbuv_histogram(np.zeros((2, 2, 3)), ColorHistConfig())


def test_lengths():
    assert ColorHistConfig(bins=32, combine="concat").output_dim == 3072
    assert ColorHistConfig(method="pixbin", bins=20).output_dim == 8000
    img = np.random.default_rng(0).uniform(0, 255, (4, 4, 3))
    assert color_vector(img, ColorHistConfig(bins=32, combine="concat")).shape == (3072,)
    assert color_vector(img, ColorHistConfig(bins=32, combine="mean")).shape == (1024,)
    assert color_vector(img, ColorHistConfig(method="pixbin", bins=20)).shape == (8000,)


def test_l2_scale_100():
    img = np.random.default_rng(1).uniform(0, 255, (5, 5, 3))
    vec = color_vector(img, ColorHistConfig(bins=6, normalization="l2", scale=100.0))
    assert abs(np.linalg.norm(vec) - 100.0) < 1e-9


def test_mean_of_identical_planes():
    plane = np.random.default_rng(2).random(16)
    cfg = ColorHistConfig(bins=4, combine="mean", normalization="none")
    hist = ColorHistogram(np.tile(plane, 3), (3, 4, 4), cfg)
    np.testing.assert_allclose(combine_and_normalize(hist, cfg), plane, rtol=1e-15)


def test_normalization_errors():
    cfg = ColorHistConfig(bins=2, combine="concat", normalization="minmax")
    flat = ColorHistogram(np.full(12, 0.5), (3, 2, 2), cfg)
    with pytest.raises(ValueError, match="degenerate range"):
        combine_and_normalize(flat, cfg)
    for how in ("l1", "l2"):
        c = ColorHistConfig(bins=2, combine="concat", normalization=how)
        with pytest.raises(ValueError, match="zero vector"):
            combine_and_normalize(ColorHistogram(np.zeros(12), (3, 2, 2), c), c)


def test_normalization_modes():
    x = np.arange(12, dtype=np.float64)
    for how, check in [("l1", lambda y: np.abs(y).sum()), ("l2", np.linalg.norm),
                       ("minmax", lambda y: y.max() - y.min())]:
        cfg = ColorHistConfig(bins=2, combine="concat", normalization=how)
        assert abs(check(combine_and_normalize(ColorHistogram(x, (3, 2, 2), cfg), cfg)) - 1) < 1e-12
    cfg = ColorHistConfig(bins=2, combine="concat", normalization="none")
    np.testing.assert_array_equal(combine_and_normalize(ColorHistogram(x, (3, 2, 2), cfg), cfg), x)


def test_config_validation():
    for bad in [dict(bins=1), dict(tau=0), dict(epsilon=-1), dict(uv_range=(1, 1)), dict(scale=0),
                dict(method="hsv")]:
        with pytest.raises(ValueError):
            ColorHistConfig(**bad)


def test_gradient_zero_upstream():
    img = np.random.default_rng(0).uniform(1, 254, (3, 3, 3))
    cfg = ColorHistConfig(bins=5)
    np.testing.assert_array_equal(rgbuv_gradient(img, cfg, np.zeros(75)), 0.0)


def _fd(fn, img, step=1e-4):
    out = np.zeros_like(img)
    for idx in np.ndindex(img.shape):
        hi, lo = img.copy(), img.copy()
        hi[idx] += step
        lo[idx] -= step
        out[idx] = (fn(hi) - fn(lo)) / (2 * step)
    return out


def test_gradient_matches_fd():
    rng = np.random.default_rng(7)
    cfg = ColorHistConfig(bins=8, tau=0.02)
    for _ in range(3):
        img = rng.uniform(1, 254, (4, 4, 3))
        up = rng.normal(size=192)
        fd = _fd(lambda x: up @ rgbuv_histogram(x, cfg).values, img)
        g = rgbuv_gradient(img, cfg, up)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


@pytest.mark.parametrize("combine", ["concat", "mean"])
@pytest.mark.parametrize("norm", ["l1", "l2", "minmax", "none"])
def test_color_vector_gradient_fd(combine, norm):
    rng = np.random.default_rng(11)
    cfg = ColorHistConfig(bins=5, tau=0.3, combine=combine, normalization=norm, scale=3.0)
    img = rng.uniform(20, 230, (3, 3, 3))
    up = rng.normal(size=cfg.output_dim)
    fd = _fd(lambda x: up @ color_vector(x, cfg), img)
    g = color_vector_gradient(img, cfg, up)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


def test_gradient_channel_symmetry():
    # grey pixels plus a channel-symmetric upstream: u/v planes are mirror images
    cfg = ColorHistConfig(bins=6, tau=0.5)
    rng = np.random.default_rng(4)
    img = np.repeat(rng.uniform(10, 250, (3, 3, 1)), 3, axis=2)
    plane = rng.normal(size=(6, 6))
    plane = plane + plane.T
    up = np.tile(plane.ravel(), 3)
    g = rgbuv_gradient(img, cfg, up)
    np.testing.assert_allclose(g[..., 0], g[..., 1], rtol=1e-10, atol=1e-16)
    np.testing.assert_allclose(g[..., 0], g[..., 2], rtol=1e-10, atol=1e-16)


@settings(max_examples=60, deadline=None)
@given(images)
def test_pixbin_conserves_count(img):
    h = pixel_bin_histogram(img, 7)
    assert h.values.sum() == img.shape[0] * img.shape[1]
    assert np.all(h.values >= 0)


@settings(max_examples=60, deadline=None)
@given(nonzero_images)
def test_rgbuv_sums_to_one(img):
    h = rgbuv_histogram(img, ColorHistConfig(bins=6))
    assert abs(h.values.sum() - 1.0) < 1e-9
    assert np.all(np.isfinite(h.values)) and np.all(h.values >= 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(-1e3, 1e3)), st.floats(1e-3, 10))
def test_kernel_bounds(delta, tau):
    k = inverse_quadratic(delta, tau)
    assert np.all(k > 0) and np.all(k <= 1)


@settings(max_examples=40, deadline=None)
@given(nonzero_images, st.randoms(use_true_random=False))
def test_pixel_permutation_invariance(img, rnd):
    flat = img.reshape(-1, 3)
    order = list(range(len(flat)))
    rnd.shuffle(order)
    shuffled = flat[order].reshape(img.shape)
    np.testing.assert_array_equal(pixel_bin_histogram(img, 5).values, pixel_bin_histogram(shuffled, 5).values)
    cfg = ColorHistConfig(bins=5)
    np.testing.assert_allclose(rgbuv_histogram(img, cfg).values, rgbuv_histogram(shuffled, cfg).values,
                               rtol=1e-12, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(nonzero_images, st.sampled_from(list(Normalization)), st.sampled_from(list(ChannelCombine)),
       st.floats(0.01, 1000))
def test_scale_is_linear(img, norm, combine, s):
    base = ColorHistConfig(bins=4, tau=0.5, normalization=norm, combine=combine)
    try:
        one = color_vector(img, base)
    except ValueError:
        return  # minmax on a flat histogram
    scaled = color_vector(img, ColorHistConfig(bins=4, tau=0.5, normalization=norm, combine=combine, scale=s))
    np.testing.assert_array_equal(scaled, one * s)


def test_method_mismatch():
    hist = pixel_bin_histogram(np.ones((2, 2, 3)), 4)
    with pytest.raises(ValueError):
        combine_and_normalize(hist, ColorHistConfig(bins=4))
    with pytest.raises(ValueError):
        rgbuv_histogram(np.ones((2, 2, 3)), ColorHistConfig(method=HistMethod.PIXBIN))
