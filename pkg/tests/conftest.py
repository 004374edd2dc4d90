"""Shared fixtures and oracle helpers.

The shift helpers here deliberately avoid scipy resampling: ground
truth for flow tests is built from integer index arithmetic (plus
corner averaging for half-pixel offsets), so the production warping
code is never used to generate its own expected values.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


def smooth_texture(rng: np.random.Generator, shape=(128, 128), sigma: float = 3.0) -> np.ndarray:
    """Band-limited random texture in [0.05, 0.95].

    Smoothing is a separable box cascade (three passes approximates a
    Gaussian) built on cumulative sums, keeping scipy out of the
    oracle path.
    """
    img = rng.random(shape)
    radius = max(1, int(round(sigma)))
    for _ in range(3):
        img = _box_blur(img, radius)
    lo, hi = img.min(), img.max()
    return 0.05 + 0.9 * (img - lo) / (hi - lo)


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    window = 2 * radius + 1
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(img, pad, mode="edge")
        img = np.lib.stride_tricks.sliding_window_view(padded, window, axis=axis).mean(axis=-1)
    return img


def integer_shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate content by (dy, dx), replicating edges."""
    h, w = img.shape
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    return img[np.ix_(ys, xs)]


def subpixel_shift(img: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Translate by fractional (dy, dx): convex mix of the four integer
    corner shifts, i.e. the bilinear ground-truth model."""
    y0, x0 = math.floor(dy), math.floor(dx)
    fy, fx = dy - y0, dx - x0
    out = np.zeros_like(img, dtype=np.float64)
    for oy, wy in ((y0, 1.0 - fy), (y0 + 1, fy)):
        if wy == 0.0:
            continue
        for ox, wx in ((x0, 1.0 - fx), (x0 + 1, fx)):
            if wx == 0.0:
                continue
            out += wy * wx * integer_shift(img, oy, ox)
    return out


def gaussian_blob(shape, cy: float, cx: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def central_region(shape, fraction: float = 0.75):
    """Slices selecting the centered ``fraction`` of each dimension."""
    sl = []
    for n in shape:
        margin = int(round(n * (1.0 - fraction) / 2.0))
        sl.append(slice(margin, n - margin))
    return tuple(sl)


def half_max_radius(img: np.ndarray) -> float:
    """Radius of a filled shape from its half-maximum area."""
    area = float(np.count_nonzero(img >= 0.5))
    return math.sqrt(area / math.pi)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
