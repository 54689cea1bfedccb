import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tryon_lab import kernels
from tryon_lab.kernels import BORDER, ZERO_PAD, numba_impl, numpy_impl


def _brute_bilinear(img, x, y, mode):
    h, w, c = img.shape
    if mode == BORDER:
        x = min(max(x, 0.0), w - 1.0)
        y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - x0, y - y0
    out = np.zeros(c)
    for yy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
        for xx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
            if 0 <= yy < h and 0 <= xx < w:
                out += wx * wy * img[yy, xx]
    return out


@pytest.mark.parametrize("mode", [ZERO_PAD, BORDER])
@pytest.mark.parametrize("impl", [numba_impl, numpy_impl], ids=["numba", "numpy"])
def test_bilinear_matches_scalar_oracle(rng, mode, impl):
    img = rng.random((7, 9, 3))
    xs = rng.uniform(-3, 12, (5, 6))
    ys = rng.uniform(-3, 10, (5, 6))
    out = kernels.bilinear_sample(img, xs, ys, mode, impl=impl)
    for i in range(5):
        for j in range(6):
            np.testing.assert_allclose(out[i, j], _brute_bilinear(img, xs[i, j], ys[i, j], mode), atol=1e-12)


def test_bilinear_integer_coordinates_are_exact(rng):
    img = rng.random((6, 5))
    ys, xs = np.mgrid[0:6, 0:5].astype(float)
    assert np.array_equal(kernels.bilinear_sample(img, xs, ys), img)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([ZERO_PAD, BORDER]))
def test_bilinear_backends_agree(seed, mode):
    r = np.random.default_rng(seed)
    img = r.random((8, 6, 2))
    xs = r.uniform(-4, 10, (4, 5))
    ys = r.uniform(-4, 12, (4, 5))
    a = kernels.bilinear_sample(img, xs, ys, mode, impl=numba_impl)
    b = kernels.bilinear_sample(img, xs, ys, mode, impl=numpy_impl)
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("impl", [numba_impl, numpy_impl], ids=["numba", "numpy"])
def test_disc_area_matches_pixel_count(impl):
    for r in (1.0, 2.0, 3.0, 4.5):
        disc = kernels.rasterize_discs([[20.0, 30.0]], 64, 48, r, impl=impl)[0]
        count = sum((x - 20) ** 2 + (y - 30) ** 2 <= r * r for y in range(64) for x in range(48))
        assert disc.sum() == count


def test_disc_backends_agree_with_nan_rows(rng):
    pts = rng.uniform(-5, 50, (18, 2))
    pts[[2, 7]] = np.nan
    a = kernels.rasterize_discs(pts, 40, 30, 2.5, impl=numba_impl)
    b = kernels.rasterize_discs(pts, 40, 30, 2.5, impl=numpy_impl)
    assert np.array_equal(a, b)
    assert a[2].sum() == 0 and a[7].sum() == 0


@pytest.mark.parametrize("impl", [numba_impl, numpy_impl], ids=["numba", "numpy"])
def test_filter_valid_matches_direct_sum(rng, impl):
    img = rng.random((9, 8))
    k = rng.random(3)
    out = kernels.filter_valid(img, k, impl=impl)
    assert out.shape == (7, 6)
    for i in range(7):
        for j in range(6):
            ref = sum(k[a] * k[b] * img[i + a, j + b] for a in range(3) for b in range(3))
            assert out[i, j] == pytest.approx(ref, abs=1e-12)


def test_filter_rejects_small_image():
    with pytest.raises(ValueError):
        kernels.filter_valid(np.zeros((3, 3)), np.ones(5))


def test_env_flag_selects_numpy_backend():
    code = "from tryon_lab import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "TRYON_LAB_DISABLE_NUMBA": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
