"""Hot pixel loops, each with a numba kernel and a vectorised numpy twin.

Both implementations are always importable (``numba_impl`` / ``numpy_impl``)
so tests and the benchmark can compare them; the module-level names dispatch
to whichever backend :mod:`tryon_lab._accel` selected.
"""

from types import SimpleNamespace

import numpy as np

from ._accel import USE_NUMBA, njit

ZERO_PAD = 0
BORDER = 1


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------

@njit
def _bilinear_sample_nb(img, xs, ys, mode):
    H, W, C = img.shape
    h, w = xs.shape
    out = np.zeros((h, w, C), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            x = xs[i, j]
            y = ys[i, j]
            if mode == 1:
                x = min(max(x, 0.0), W - 1.0)
                y = min(max(y, 0.0), H - 1.0)
            x0f = np.floor(x)
            y0f = np.floor(y)
            fx = x - x0f
            fy = y - y0f
            x0 = int(x0f)
            y0 = int(y0f)
            for dy in range(2):
                yy = y0 + dy
                wy = fy if dy == 1 else 1.0 - fy
                if wy == 0.0:
                    continue
                if yy < 0 or yy >= H:
                    continue
                for dx in range(2):
                    xx = x0 + dx
                    wx = fx if dx == 1 else 1.0 - fx
                    if wx == 0.0:
                        continue
                    if xx < 0 or xx >= W:
                        continue
                    wgt = wx * wy
                    for c in range(C):
                        out[i, j, c] += wgt * img[yy, xx, c]
    return out


@njit
def _rasterize_discs_nb(points, height, width, radius):
    K = points.shape[0]
    out = np.zeros((K, height, width), dtype=np.float32)
    r2 = radius * radius
    for k in range(K):
        px = points[k, 0]
        py = points[k, 1]
        if np.isnan(px) or np.isnan(py):
            continue
        y_lo = max(0, int(np.floor(py - radius)))
        y_hi = min(height - 1, int(np.ceil(py + radius)))
        x_lo = max(0, int(np.floor(px - radius)))
        x_hi = min(width - 1, int(np.ceil(px + radius)))
        for y in range(y_lo, y_hi + 1):
            for x in range(x_lo, x_hi + 1):
                if (x - px) ** 2 + (y - py) ** 2 <= r2:
                    out[k, y, x] = 1.0
    return out


@njit
def _filter_valid_nb(img, kernel):
    H, W = img.shape
    n = kernel.shape[0]
    tmp = np.zeros((H, W - n + 1), dtype=np.float64)
    for i in range(H):
        for j in range(W - n + 1):
            acc = 0.0
            for b in range(n):
                acc += kernel[b] * img[i, j + b]
            tmp[i, j] = acc
    out = np.zeros((H - n + 1, W - n + 1), dtype=np.float64)
    for i in range(H - n + 1):
        for j in range(W - n + 1):
            acc = 0.0
            for a in range(n):
                acc += kernel[a] * tmp[i + a, j]
            out[i, j] = acc
    return out


# --------------------------------------------------------------------------
# numpy twins
# --------------------------------------------------------------------------

def _bilinear_sample_np(img, xs, ys, mode):
    H, W, C = img.shape
    if mode == BORDER:
        xs = np.clip(xs, 0.0, W - 1.0)
        ys = np.clip(ys, 0.0, H - 1.0)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(xs.shape + (C,), dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            taps = img[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
            wgt = np.where(valid[..., None], wx * wy, 0.0)
            out += wgt * taps
    return out


def _rasterize_discs_np(points, height, width, radius):
    ys, xs = np.mgrid[0:height, 0:width]
    out = np.zeros((points.shape[0], height, width), dtype=np.float32)
    for k, (px, py) in enumerate(points):
        if np.isnan(px) or np.isnan(py):
            continue
        out[k] = ((xs - px) ** 2 + (ys - py) ** 2 <= radius * radius)
    return out


def _filter_valid_np(img, kernel):
    n = kernel.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view
    rows = windows(img, n, axis=1) @ kernel
    return windows(rows, n, axis=0) @ kernel


numba_impl = SimpleNamespace(
    bilinear_sample=_bilinear_sample_nb,
    rasterize_discs=_rasterize_discs_nb,
    filter_valid=_filter_valid_nb,
)
numpy_impl = SimpleNamespace(
    bilinear_sample=_bilinear_sample_np,
    rasterize_discs=_rasterize_discs_np,
    filter_valid=_filter_valid_np,
)
BACKEND = "numba" if USE_NUMBA else "numpy"
_impl = numba_impl if USE_NUMBA else numpy_impl


# --------------------------------------------------------------------------
# public entry points
# --------------------------------------------------------------------------

def bilinear_sample(img, xs, ys, mode=ZERO_PAD, impl=None):
    """Sample ``img`` (H, W[, C]) at pixel coordinates ``xs``, ``ys``.

    Pixel (i, j) sits at x=j, y=i. ``mode`` is ``ZERO_PAD`` (taps outside the
    image contribute 0) or ``BORDER`` (the coordinate is clamped into the image
    first, i.e. edge replication). Returns float64 with the input's channel
    layout.
    """
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 2:
        raise ValueError("xs and ys must be matching 2-D coordinate grids")
    out = (impl or _impl).bilinear_sample(np.ascontiguousarray(img), xs, ys, int(mode))
    return out[..., 0] if squeeze else out


def rasterize_discs(points, height, width, radius, impl=None):
    """One solid disc channel per point; NaN rows give all-zero channels."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    return (impl or _impl).rasterize_discs(points, int(height), int(width), float(radius))


def filter_valid(img, kernel, impl=None):
    """Separable 2-D correlation with ``kernel`` along both axes, 'valid' extent."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if img.shape[0] < kernel.size or img.shape[1] < kernel.size:
        raise ValueError("image smaller than filter")
    return (impl or _impl).filter_valid(img, kernel)
